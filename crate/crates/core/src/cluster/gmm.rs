use nalgebra::{DMatrix, DMatrixView, DVector};
use rayon::prelude::*;

use super::kmeans::{kmeans_fit, sq_dist};
use super::{check_fit_args, ClusterModel, ClusterResult};
use crate::corpus::{EmbeddingMatrix, Partition};
use crate::error::{Error, Result};

/// Lower bound on every variance (or covariance eigenvalue).
pub const REG_FLOOR: f64 = 1e-6;
/// Convergence threshold on the per-sample change in log-likelihood.
pub const LL_TOL_PER_SAMPLE: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_3;
/// Relative responsibilities below `exp(EXP_FLUSH)` are flushed to zero, which
/// keeps subnormals out of the normalization and moment products.
const EXP_FLUSH: f64 = -700.0;

/// Responsibility mass, mean, per-dimension variance, full covariance.
type ComponentStats = (f64, Vec<f64>, Vec<f64>, Option<DMatrix<f64>>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum CovMode {
    #[default]
    Diag,
    Full,
    Spherical,
}

impl CovMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CovMode::Diag => "diag",
            CovMode::Full => "full",
            CovMode::Spherical => "spherical",
        }
    }
}

impl std::str::FromStr for CovMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diag" => Ok(CovMode::Diag),
            "full" => Ok(CovMode::Full),
            "spherical" => Ok(CovMode::Spherical),
            other => Err(Error::Config(format!("unknown covariance mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Covariances {
    /// `k × d` per-dimension variances.
    Diag(Vec<f64>),
    /// One variance per component.
    Spherical(Vec<f64>),
    /// One `d × d` matrix per component.
    Full(Vec<DMatrix<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    /// `k × d`, row-major.
    pub means: Vec<f64>,
    pub covariances: Covariances,
    pub k: usize,
    pub dim: usize,
    /// Total data log-likelihood under the final parameters.
    pub log_likelihood: f64,
    /// Log-likelihood at every E-step, in order.
    pub history: Vec<f64>,
    pub iters_run: usize,
}

impl GmmModel {
    pub fn mean(&self, c: usize) -> &[f64] {
        &self.means[c * self.dim..(c + 1) * self.dim]
    }
}

/// Per-component precomputed terms for log-density evaluation.
enum Precision {
    Diag { inv_var: Vec<f64>, log_norm: f64 },
    Full { chol_l: DMatrix<f64>, log_norm: f64 },
}

impl GmmModel {
    fn precisions(&self) -> Vec<Precision> {
        let d = self.dim;
        (0..self.k)
            .map(|c| match &self.covariances {
                Covariances::Diag(v) => diag_precision(&v[c * d..(c + 1) * d]),
                Covariances::Spherical(v) => diag_precision(&vec![v[c]; d]),
                Covariances::Full(m) => {
                    let chol = m[c]
                        .clone()
                        .cholesky()
                        .expect("eigenvalue-floored covariance is positive definite");
                    let l = chol.l();
                    let log_det: f64 = 2.0 * l.diagonal().iter().map(|x| x.ln()).sum::<f64>();
                    Precision::Full {
                        chol_l: l,
                        log_norm: -0.5 * (d as f64 * LN_2PI + log_det),
                    }
                }
            })
            .collect()
    }
}

fn diag_precision(var: &[f64]) -> Precision {
    let log_det: f64 = var.iter().map(|v| v.ln()).sum();
    Precision::Diag {
        inv_var: var.iter().map(|v| 1.0 / v).collect(),
        log_norm: -0.5 * (var.len() as f64 * LN_2PI + log_det),
    }
}

fn full_log_density(row: &[f64], mean: &[f64], chol_l: &DMatrix<f64>, log_norm: f64) -> f64 {
    let diff = DVector::from_iterator(row.len(), row.iter().zip(mean).map(|(x, m)| x - m));
    let z = chol_l
        .solve_lower_triangular(&diff)
        .expect("cholesky factor has a positive diagonal");
    log_norm - 0.5 * z.norm_squared()
}

/// Data-only products for the diagonal modes, centered on the data mean to
/// keep cancellation small. Built once per fit.
struct DiagFeatures {
    center: Vec<f64>,
    /// `[x^2; x]`, `2d × n`
    sq_lin: DMatrix<f64>,
    /// `[x | x^2]`, `n × 2d`
    lin_sq: DMatrix<f64>,
}

impl DiagFeatures {
    fn new(data: &EmbeddingMatrix) -> Self {
        let (n, d) = (data.n_rows(), data.dim());
        let mut center = vec![0.0; d];
        for row in data.rows() {
            center.iter_mut().zip(row).for_each(|(c, x)| *c += x);
        }
        center.iter_mut().for_each(|c| *c /= n as f64);
        let sq_lin = DMatrix::from_fn(2 * d, n, |j, i| {
            let v = data.row(i)[j % d] - center[j % d];
            if j < d {
                v * v
            } else {
                v
            }
        });
        let lin_sq = DMatrix::from_fn(n, 2 * d, |i, j| sq_lin[((j + d) % (2 * d), i)]);
        Self { center, sq_lin, lin_sq }
    }

    fn for_mode(data: &EmbeddingMatrix, mode: CovMode) -> Option<Self> {
        (mode != CovMode::Full).then(|| Self::new(data))
    }
}

/// `ln w_c + ln N(x_i | c)` for every row and component, row-major `n × k`.
fn log_joint(data: &EmbeddingMatrix, feats: Option<&DiagFeatures>, model: &GmmModel) -> Vec<f64> {
    let (d, k) = (data.dim(), model.k);
    let precisions = model.precisions();
    let log_w: Vec<f64> = model.weights.iter().map(|w| w.ln()).collect();
    if matches!(model.covariances, Covariances::Full(_)) {
        return data
            .values()
            .par_chunks_exact(d)
            .flat_map_iter(|row| {
                (0..k).map(|c| match &precisions[c] {
                    Precision::Full { chol_l, log_norm } => log_w[c] + full_log_density(row, model.mean(c), chol_l, *log_norm),
                    Precision::Diag { .. } => unreachable!(),
                })
            })
            .collect();
    }

    let feats = feats.expect("diagonal modes carry precomputed features");
    let center = &feats.center;
    let diag = |c: usize| match &precisions[c] {
        Precision::Diag { inv_var, log_norm } => (inv_var, *log_norm),
        Precision::Full { .. } => unreachable!(),
    };
    // q = sum_j v_j x_j^2 - 2 sum_j v_j m_j x_j + sum_j v_j m_j^2 as one
    // product of [v, -2 v m] (k × 2d) with [x^2; x] (2d × n). The result is
    // `k × n` column-major, i.e. the row-major `n × k` output layout.
    let coef = DMatrix::from_fn(k, 2 * d, |c, j| {
        let iv = diag(c).0;
        if j < d {
            iv[j]
        } else {
            -2.0 * (model.mean(c)[j - d] - center[j - d]) * iv[j - d]
        }
    });
    let mean_term: Vec<f64> = (0..k)
        .map(|c| {
            let iv = diag(c).0;
            model.mean(c).iter().zip(center).zip(iv).map(|((m, z), v)| (m - z) * (m - z) * v).sum()
        })
        .collect();
    let offset: Vec<f64> = (0..k).map(|c| log_w[c] + diag(c).1).collect();
    let mut out: Vec<f64> = (coef * &feats.sq_lin).data.into();
    out.par_chunks_mut(k).for_each(|row| {
        for c in 0..k {
            let q = (row[c] + mean_term[c]).max(0.0);
            row[c] = offset[c] - 0.5 * q;
        }
    });
    out
}

#[cfg(test)]
fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| exp_or_zero(x - max)).sum::<f64>().ln()
}

/// `exp(x)`, or 0 where the result would be negligible or subnormal.
#[inline]
fn exp_or_zero(x: f64) -> f64 {
    if x < EXP_FLUSH {
        0.0
    } else {
        x.exp()
    }
}

/// Maximum of a row. The order of comparisons does not affect the result, so
/// four independent lanes are used.
fn row_max(xs: &[f64]) -> f64 {
    let mut lanes = [f64::NEG_INFINITY; 4];
    let mut chunks = xs.chunks_exact(4);
    for c in &mut chunks {
        for (l, &x) in lanes.iter_mut().zip(c) {
            *l = l.max(x);
        }
    }
    let tail = chunks.remainder().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    lanes.into_iter().fold(tail, f64::max)
}

/// E-step: responsibilities (row-major `n × k`) and total log-likelihood.
fn e_step(data: &EmbeddingMatrix, feats: Option<&DiagFeatures>, model: &GmmModel) -> (Vec<f64>, f64) {
    let mut resp = log_joint(data, feats, model);
    let norms: Vec<f64> = resp
        .par_chunks_mut(model.k)
        .map(|lp| {
            let max = row_max(lp);
            let mut sum = 0.0;
            for v in lp.iter_mut() {
                *v = exp_or_zero(*v - max);
                sum += *v;
            }
            let inv = 1.0 / sum;
            lp.iter_mut().for_each(|v| *v *= inv);
            max + sum.ln()
        })
        .collect();
    (resp, norms.iter().sum())
}

/// M-step. Variances are clamped to `REG_FLOOR`, which is the constrained
/// maximizer and so keeps EM monotone. Components with zero mass keep their
/// previous parameters.
fn m_step(data: &EmbeddingMatrix, feats: Option<&DiagFeatures>, resp: &[f64], model: &mut GmmModel) {
    let (n, d, k) = (data.n_rows(), data.dim(), model.k);
    let stats = match feats {
        None => full_stats(data, resp, k),
        Some(f) => diag_stats(f, resp, k),
    };

    for (c, s) in stats.into_iter().enumerate() {
        let Some((nk, mean, var, cov)) = s else {
            model.weights[c] = 0.0;
            continue;
        };
        model.weights[c] = nk / n as f64;
        model.means[c * d..(c + 1) * d].copy_from_slice(&mean);
        match (&mut model.covariances, cov) {
            (Covariances::Diag(v), _) => {
                for (dst, s) in v[c * d..(c + 1) * d].iter_mut().zip(&var) {
                    *dst = s.max(REG_FLOOR);
                }
            }
            (Covariances::Spherical(v), _) => {
                v[c] = (var.iter().sum::<f64>() / d as f64).max(REG_FLOOR);
            }
            (Covariances::Full(m), Some(cov)) => m[c] = floor_eigenvalues(cov),
            (Covariances::Full(_), None) => unreachable!(),
        }
    }
    let total: f64 = model.weights.iter().sum();
    model.weights.iter_mut().for_each(|w| *w /= total);
}

fn component_mass(resp: &[f64], k: usize) -> Vec<f64> {
    let mut nk = vec![0.0; k];
    for row in resp.chunks_exact(k) {
        nk.iter_mut().zip(row).for_each(|(m, r)| *m += r);
    }
    nk
}

/// Means and per-dimension variances from weighted first and second moments
/// about the data mean, computed as matrix products.
fn diag_stats(feats: &DiagFeatures, resp: &[f64], k: usize) -> Vec<Option<ComponentStats>> {
    let (n, d) = (feats.lin_sq.nrows(), feats.center.len());
    let nk = component_mass(resp, k);
    let center = &feats.center;
    // row-major `n × k` responsibilities are the column-major `k × n` transpose
    let rt = DMatrixView::from_slice(resp, k, n);
    // columns 0..d: first moments, d..2d: second moments
    let moments = rt * &feats.lin_sq;
    (0..k)
        .map(|c| {
            let w = nk[c];
            (w > 0.0).then(|| {
                let shift: Vec<f64> = (0..d).map(|j| moments[(c, j)] / w).collect();
                let var = (0..d).map(|j| (moments[(c, d + j)] / w - shift[j] * shift[j]).max(0.0)).collect();
                let mean = shift.iter().zip(center).map(|(s, z)| s + z).collect();
                (w, mean, var, None)
            })
        })
        .collect()
}

/// Means and full covariances, one component per task; rows are summed in
/// order so the result does not depend on the thread count.
fn full_stats(data: &EmbeddingMatrix, resp: &[f64], k: usize) -> Vec<Option<ComponentStats>> {
    let d = data.dim();
    let nk = component_mass(resp, k);
    (0..k)
        .into_par_iter()
        .map(|c| {
            let w = nk[c];
            if w <= 0.0 {
                return None;
            }
            let mut mean = vec![0.0; d];
            for (i, row) in data.rows().enumerate() {
                let r = resp[i * k + c];
                mean.iter_mut().zip(row).for_each(|(m, x)| *m += r * x);
            }
            mean.iter_mut().for_each(|m| *m /= w);
            let mut cov = DMatrix::<f64>::zeros(d, d);
            for (i, row) in data.rows().enumerate() {
                let r = resp[i * k + c];
                if r == 0.0 {
                    continue;
                }
                let diff = DVector::from_iterator(d, row.iter().zip(&mean).map(|(x, m)| x - m));
                cov.syger(r, &diff, &diff, 1.0);
            }
            cov.fill_upper_triangle_with_lower_triangle();
            Some((w, mean, Vec::new(), Some(cov / w)))
        })
        .collect()
}

fn floor_eigenvalues(cov: DMatrix<f64>) -> DMatrix<f64> {
    let eig = cov.symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= REG_FLOOR) {
        return eig.recompose();
    }
    let mut eig = eig;
    eig.eigenvalues.iter_mut().for_each(|l| *l = l.max(REG_FLOOR));
    let mut m = eig.recompose();
    // symmetrize rounding noise before the next Cholesky
    let t = m.transpose();
    m = (m + t) * 0.5;
    m
}

fn empty_model(k: usize, d: usize, mode: CovMode) -> GmmModel {
    GmmModel {
        weights: vec![1.0 / k as f64; k],
        means: vec![0.0; k * d],
        covariances: match mode {
            CovMode::Diag => Covariances::Diag(vec![1.0; k * d]),
            CovMode::Spherical => Covariances::Spherical(vec![1.0; k]),
            CovMode::Full => Covariances::Full(vec![DMatrix::identity(d, d); k]),
        },
        k,
        dim: d,
        log_likelihood: f64::NEG_INFINITY,
        history: Vec::new(),
        iters_run: 0,
    }
}

/// Gaussian mixture EM initialized from a k-means fit with the same seed.
pub fn gmm_fit(
    data: &EmbeddingMatrix,
    k: usize,
    max_iters: usize,
    seed: u64,
    cov_mode: CovMode,
) -> Result<ClusterResult> {
    check_fit_args(data, k, max_iters)?;
    if cov_mode == CovMode::Full && data.n_rows() <= k {
        return Err(Error::Config(format!(
            "full covariance needs more rows than components ({} <= {k})",
            data.n_rows()
        )));
    }
    let init = kmeans_fit(data, k, max_iters, seed)?;
    gmm_fit_from(data, &init, max_iters, cov_mode)
}

/// EM from the one-hot responsibilities of an existing k-means result.
pub fn gmm_fit_from(
    data: &EmbeddingMatrix,
    init: &ClusterResult,
    max_iters: usize,
    cov_mode: CovMode,
) -> Result<ClusterResult> {
    let ClusterModel::KMeans(km) = &init.model else {
        return Err(Error::Config("GMM initialization requires a k-means result".into()));
    };
    let (n, d, k) = (data.n_rows(), data.dim(), km.k);
    if init.raw_labels.len() != n {
        return Err(Error::Shape(format!(
            "initial labels cover {} rows, data has {n}",
            init.raw_labels.len()
        )));
    }
    let mut resp = vec![0.0; n * k];
    for (i, &l) in init.raw_labels.iter().enumerate() {
        resp[i * k + l] = 1.0;
    }
    let mut model = empty_model(k, d, cov_mode);
    model.means.copy_from_slice(&km.centroids);
    let feats = DiagFeatures::for_mode(data, cov_mode);
    m_step(data, feats.as_ref(), &resp, &mut model);

    let tol = LL_TOL_PER_SAMPLE * n as f64;
    loop {
        let (r, ll) = e_step(data, feats.as_ref(), &model);
        resp = r;
        let prev = model.log_likelihood;
        model.log_likelihood = ll;
        model.history.push(ll);
        if !ll.is_finite() {
            return Err(Error::Numeric(format!("non-finite GMM log-likelihood {ll}")));
        }
        if model.iters_run >= max_iters || (prev.is_finite() && (ll - prev).abs() < tol) {
            break;
        }
        m_step(data, feats.as_ref(), &resp, &mut model);
        model.iters_run += 1;
    }

    let raw_labels: Vec<usize> = resp
        .chunks_exact(k)
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect();
    let partition = Partition::from_assignments(&raw_labels);
    Ok(ClusterResult {
        partition,
        raw_labels,
        fit_score: model.log_likelihood,
        seed: init.seed,
        model: ClusterModel::Gmm(model),
    })
}

/// Total log-likelihood of `data` under `model`.
pub fn log_likelihood(data: &EmbeddingMatrix, model: &GmmModel) -> f64 {
    let feats = (!matches!(model.covariances, Covariances::Full(_))).then(|| DiagFeatures::new(data));
    e_step(data, feats.as_ref(), model).1
}

/// Hard assignment of `row` to the nearest component mean.
pub fn nearest_mean(model: &GmmModel, row: &[f64]) -> usize {
    (0..model.k)
        .map(|c| sq_dist(row, model.mean(c)))
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, v)| if v < bv { (i, v) } else { (bi, bv) })
        .0
}
