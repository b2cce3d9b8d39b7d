//! 2-D projections and per-cluster exemplar listings.
//!
//! The projection is exact t-SNE (all `N²` pairs), preceded by a PCA
//! reduction. Memory grows as `N²`, which is fine up to roughly ten thousand
//! utterances.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::cluster::ClusterResult;
use crate::corpus::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::fmt::{csv_field, sig6};

pub const PROJECTION_HEADER: &str = "id,x,y,label";

#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iters: usize,
    pub seed: u64,
    /// Target dimension of the PCA pre-reduction; `None` skips it.
    pub pca_dims: Option<usize>,
    pub exaggeration: f64,
    /// Iterations run with exaggerated affinities and the low momentum.
    pub early_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    /// `None` means `max(N / 12, 50)`.
    pub learning_rate: Option<f64>,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iters: 1000,
            seed: 0,
            pca_dims: Some(50),
            exaggeration: 12.0,
            early_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            learning_rate: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub ids: Vec<String>,
    /// `N × 2`, row-major.
    pub coords: Vec<f64>,
    /// KL(P || Q) at the start of every iteration.
    pub kl_history: Vec<f64>,
    /// Perplexity actually used (after any shrinking).
    pub perplexity: f64,
    pub iters: usize,
    pub seed: u64,
}

impl Projection {
    pub fn point(&self, i: usize) -> [f64; 2] {
        [self.coords[2 * i], self.coords[2 * i + 1]]
    }

    pub fn to_matrix(&self) -> Result<EmbeddingMatrix> {
        EmbeddingMatrix::new(self.ids.len(), 2, self.coords.clone(), self.ids.clone())
    }
}

/// Projects centered rows onto the top `dims` principal axes.
pub fn pca_reduce(data: &EmbeddingMatrix, dims: usize) -> Vec<Vec<f64>> {
    let (n, d) = (data.n_rows(), data.dim());
    let mut mean = vec![0.0; d];
    for row in data.rows() {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> = data
        .rows()
        .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    if dims >= d {
        return centered;
    }
    let x = DMatrix::from_fn(n, d, |i, j| centered[i][j]);
    let cov = (x.transpose() * &x) / n as f64;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axes: Vec<Vec<f64>> = order[..dims]
        .iter()
        .map(|&c| {
            let v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            // sign convention: largest-magnitude loading positive
            let pivot = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            if pivot < 0.0 {
                v.iter().map(|x| -x).collect()
            } else {
                v
            }
        })
        .collect();
    centered
        .iter()
        .map(|r| axes.iter().map(|a| a.iter().zip(r).map(|(x, y)| x * y).sum()).collect())
        .collect()
}

/// Dense row-major `n × n` squared Euclidean distances.
pub fn pairwise_sq_dists(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut out = vec![0.0; n * n];
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, dst) in row.iter_mut().enumerate() {
            *dst = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    });
    out
}

/// Conditional affinities `p_{j|i}` with the bandwidth chosen by bisection so
/// that each row's entropy equals `ln(perplexity)` within `1e-5` nats.
pub fn conditional_affinities(sq_dists: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    p.par_chunks_mut(n).enumerate().for_each(|(i, prow)| {
        let drow = &sq_dists[i * n..(i + 1) * n];
        let d_min = drow
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &d)| d)
            .fold(f64::INFINITY, f64::min);
        let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
        for _ in 0..200 {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for (j, (pj, &d)) in prow.iter_mut().zip(drow).enumerate() {
                if j == i {
                    *pj = 0.0;
                    continue;
                }
                let shifted = d - d_min;
                *pj = (-shifted * beta).exp();
                sum += *pj;
                weighted += shifted * *pj;
            }
            let entropy = sum.ln() + beta * weighted / sum;
            prow.iter_mut().for_each(|v| *v /= sum);
            let diff = entropy - target;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
        }
    });
    p
}

/// Perplexity `exp(H)` of one conditional row.
pub fn row_perplexity(row: &[f64]) -> f64 {
    let h: f64 = row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    h.exp()
}

/// Exact t-SNE to two dimensions.
pub fn tsne_project(data: &EmbeddingMatrix, cfg: &TsneConfig) -> Result<Projection> {
    let n = data.n_rows();
    if n < 3 {
        return Err(Error::Config(format!("t-SNE needs at least 3 rows, got {n}")));
    }
    if cfg.perplexity.is_nan() || cfg.perplexity <= 0.0 || cfg.iters == 0 {
        return Err(Error::Config("perplexity and iters must be positive".into()));
    }
    let mut perplexity = cfg.perplexity;
    if (n as f64) < 3.0 * perplexity {
        let shrunk = ((n - 1) / 3).max(1) as f64;
        log::warn!("perplexity {perplexity} too large for {n} rows; using {shrunk}");
        perplexity = shrunk;
    }

    let points = match cfg.pca_dims {
        Some(k) if k < data.dim() => pca_reduce(data, k.max(1)),
        _ => data.rows().map(<[f64]>::to_vec).collect(),
    };
    let sq = pairwise_sq_dists(&points);
    let cond = conditional_affinities(&sq, n, perplexity);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
        p[i * n + i] = 0.0;
    }
    drop(cond);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = Normal::new(0.0, 1e-4).expect("valid std");
    let mut y: Vec<f64> = (0..2 * n).map(|_| init.sample(&mut rng)).collect();
    let mut velocity = vec![0.0; 2 * n];
    let lr = cfg.learning_rate.unwrap_or_else(|| (n as f64 / 12.0).max(50.0));
    let mut kl_history = Vec::with_capacity(cfg.iters);
    // last accepted point of the second phase: coordinates, KL, gradient
    let mut accepted: Option<(Vec<f64>, f64, Vec<[f64; 2]>)> = None;
    let mut step_scale = 1.0f64;

    for iter in 0..cfg.iters {
        let early = iter < cfg.early_iters;
        let alpha = if early { cfg.exaggeration } else { 1.0 };
        let momentum = if early { cfg.initial_momentum } else { cfg.final_momentum };
        if iter == cfg.early_iters {
            // the second phase optimizes a different objective; start it fresh
            velocity.iter_mut().for_each(|v| *v = 0.0);
        }

        let (mut kl, mut grad) = kl_and_grad(&y, &p, n, alpha);
        if !early {
            match accepted.take() {
                Some((prev_y, prev_kl, prev_grad)) if kl > prev_kl => {
                    // the momentum step went uphill: undo it and take a
                    // shorter plain gradient step instead
                    y = prev_y;
                    kl = prev_kl;
                    grad = prev_grad;
                    velocity.iter_mut().for_each(|v| *v = 0.0);
                    step_scale *= 0.5;
                }
                _ => step_scale = (step_scale * 2.0).min(1.0),
            }
            accepted = Some((y.clone(), kl, grad.clone()));
        }
        kl_history.push(kl);

        for (i, g) in grad.iter().enumerate() {
            for c in 0..2 {
                let v = &mut velocity[2 * i + c];
                *v = momentum * *v - lr * step_scale * g[c];
                y[2 * i + c] += *v;
            }
        }
        let (mx, my) = (0..n).fold((0.0, 0.0), |(a, b), i| (a + y[2 * i], b + y[2 * i + 1]));
        let (mx, my) = (mx / n as f64, my / n as f64);
        for i in 0..n {
            y[2 * i] -= mx;
            y[2 * i + 1] -= my;
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("t-SNE produced non-finite coordinates".into()));
    }
    Ok(Projection {
        ids: data.row_ids().to_vec(),
        coords: y,
        kl_history,
        perplexity,
        iters: cfg.iters,
        seed: cfg.seed,
    })
}

/// KL(P || Q) and the gradient of KL(alpha * P || Q) for every point.
fn kl_and_grad(y: &[f64], p: &[f64], n: usize, alpha: f64) -> (f64, Vec<[f64; 2]>) {
    // Student-t kernel row sums give the normalizer Z
    let row_sums: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).filter(|&j| j != i).map(|j| student_t(y, i, j)).sum::<f64>())
        .collect();
    let z: f64 = row_sums.iter().sum();
    let per_row: Vec<([f64; 2], f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut g = [0.0; 2];
            let mut kl = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let w = student_t(y, i, j);
                let q = w / z;
                let pij = p[i * n + j];
                kl += pij * (pij / q).ln();
                let coef = 4.0 * (alpha * pij - q) * w;
                g[0] += coef * (y[2 * i] - y[2 * j]);
                g[1] += coef * (y[2 * i + 1] - y[2 * j + 1]);
            }
            (g, kl)
        })
        .collect();
    let kl = per_row.iter().map(|(_, kl)| kl).sum::<f64>().max(0.0);
    (kl, per_row.into_iter().map(|(g, _)| g).collect())
}

#[inline]
fn student_t(y: &[f64], i: usize, j: usize) -> f64 {
    let dx = y[2 * i] - y[2 * j];
    let dy = y[2 * i + 1] - y[2 * j + 1];
    1.0 / (1.0 + dx * dx + dy * dy)
}

/// CSV `id,x,y,label`; `labels` aligns with the projection rows.
pub fn render_projection(proj: &Projection, labels: Option<&[String]>) -> String {
    let mut out = String::from(PROJECTION_HEADER);
    out.push('\n');
    for (i, id) in proj.ids.iter().enumerate() {
        let [x, y] = proj.point(i);
        let label = labels.map_or("", |l| l[i].as_str());
        writeln!(out, "{},{},{},{}", csv_field(id), sig6(x), sig6(y), csv_field(label)).unwrap();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExemplarMode {
    Random,
    NearestCentroid,
}

impl std::str::FromStr for ExemplarMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(ExemplarMode::Random),
            "nearest_centroid" | "nearest-centroid" => Ok(ExemplarMode::NearestCentroid),
            other => Err(Error::Config(format!("unknown exemplar mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarConfig {
    pub clusters_to_show: usize,
    pub samples_per_cluster: usize,
    pub mode: ExemplarMode,
    pub seed: u64,
}

impl Default for ExemplarConfig {
    fn default() -> Self {
        Self {
            clusters_to_show: 5,
            samples_per_cluster: 5,
            mode: ExemplarMode::Random,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarBlock {
    /// Class index in the result's partition.
    pub cluster_id: usize,
    pub cluster_size: usize,
    /// `(id, text)` pairs.
    pub members: Vec<(String, String)>,
}

/// Picks random clusters and a few member utterances from each.
pub fn exemplars(
    result: &ClusterResult,
    data: &EmbeddingMatrix,
    texts: &HashMap<String, String>,
    cfg: &ExemplarConfig,
) -> Result<Vec<ExemplarBlock>> {
    let part = &result.partition;
    if part.n_items() != data.n_rows() {
        return Err(Error::Shape(format!(
            "clustering covers {} rows, embeddings have {}",
            part.n_items(),
            data.n_rows()
        )));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); part.n_classes()];
    for (i, &c) in part.assignments().iter().enumerate() {
        members[c].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_clusters = part.n_classes();
    let mut chosen: Vec<usize> = if cfg.clusters_to_show >= n_clusters {
        (0..n_clusters).collect()
    } else {
        sample(&mut rng, n_clusters, cfg.clusters_to_show).into_vec()
    };
    chosen.sort_unstable();

    let mut blocks = Vec::with_capacity(chosen.len());
    for c in chosen {
        let rows = &members[c];
        let take = cfg.samples_per_cluster.min(rows.len());
        let picked: Vec<usize> = match cfg.mode {
            ExemplarMode::Random => sample(&mut rng, rows.len(), take)
                .into_iter()
                .map(|k| rows[k])
                .collect(),
            ExemplarMode::NearestCentroid => {
                let center = result.model.center(result.raw_labels[rows[0]]);
                let mut ranked: Vec<(f64, usize)> = rows
                    .iter()
                    .map(|&r| {
                        let d: f64 = data.row(r).iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                        (d, r)
                    })
                    .collect();
                ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                ranked.into_iter().take(take).map(|(_, r)| r).collect()
            }
        };
        let members = picked
            .into_iter()
            .map(|r| {
                let id = &data.row_ids()[r];
                texts
                    .get(id)
                    .map(|t| (id.clone(), t.clone()))
                    .ok_or_else(|| Error::Lookup(format!("no text for id {id:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        blocks.push(ExemplarBlock {
            cluster_id: c,
            cluster_size: rows.len(),
            members,
        });
    }
    Ok(blocks)
}

/// Plain-text listing: a header line per cluster, one utterance per line,
/// blank line between clusters.
pub fn render_exemplars(blocks: &[ExemplarBlock]) -> String {
    let mut out = String::new();
    for (b, block) in blocks.iter().enumerate() {
        if b > 0 {
            out.push('\n');
        }
        writeln!(out, "cluster {} (size {})", block.cluster_id, block.cluster_size).unwrap();
        for (_, text) in &block.members {
            writeln!(out, "{text}").unwrap();
        }
    }
    out
}

/// Reads a TSV with `id` and `text` columns.
pub fn load_texts(path: impl AsRef<Path>) -> Result<HashMap<String, String>> {
    let path = path.as_ref();
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_texts(&body).map_err(|e| e.context(path.display().to_string()))
}

pub fn parse_texts(body: &str) -> Result<HashMap<String, String>> {
    let mut lines = body.split('\n');
    let header: Vec<&str> = lines.next().unwrap_or("").trim_end_matches('\r').split('\t').collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::Schema(format!("text file lacks a {name:?} column")))
    };
    let (id_col, text_col) = (col("id")?, col("text")?);
    let mut out = HashMap::new();
    for (i, line) in lines.enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        let (Some(id), Some(text)) = (cells.get(id_col), cells.get(text_col)) else {
            return Err(Error::Format(format!("line {}: too few cells", i + 2)));
        };
        if out.insert((*id).to_owned(), (*text).to_owned()).is_some() {
            return Err(Error::DuplicateId((*id).to_owned()));
        }
    }
    Ok(out)
}
