//! K-means and Gaussian-mixture clustering with multi-restart selection.
//!
//! Every fit is a pure function of `(data, k, seed, config)`. Parallel loops
//! only compute per-row or per-component values; all reductions run in a
//! fixed order, so results are bit-identical for any thread count.

mod gmm;
mod kmeans;

pub use gmm::{gmm_fit, gmm_fit_from, log_likelihood, nearest_mean, CovMode, Covariances, GmmModel, LL_TOL_PER_SAMPLE, REG_FLOOR};
pub use kmeans::{kmeans_fit, KMeansModel};

use rayon::prelude::*;

use crate::corpus::{EmbeddingMatrix, Partition};
use crate::error::{Error, Result};

pub const DEFAULT_RESTARTS: usize = 10;
pub const DEFAULT_MAX_ITERS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub enum ClusterModel {
    KMeans(KMeansModel),
    Gmm(GmmModel),
}

impl ClusterModel {
    /// Cluster center in raw label space: centroid or component mean.
    pub fn center(&self, raw_label: usize) -> &[f64] {
        match self {
            ClusterModel::KMeans(m) => m.centroid(raw_label),
            ClusterModel::Gmm(m) => m.mean(raw_label),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub partition: Partition,
    /// Per-row model component index, before compaction into `partition`.
    pub raw_labels: Vec<usize>,
    pub model: ClusterModel,
    pub seed: u64,
    /// WCSS for k-means (lower is better), log-likelihood for GMM (higher is better).
    pub fit_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    KMeans,
    Gmm(CovMode),
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::KMeans => "kmeans",
            Algorithm::Gmm(_) => "gmm",
        }
    }

    /// True when `a` is a strictly better fit score than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Algorithm::KMeans => a < b,
            Algorithm::Gmm(_) => a > b,
        }
    }
}

pub(crate) fn check_fit_args(data: &EmbeddingMatrix, k: usize, max_iters: usize) -> Result<()> {
    if k == 0 || k > data.n_rows() {
        return Err(Error::Config(format!(
            "k = {k} must be in 1..={} (number of rows)",
            data.n_rows()
        )));
    }
    if max_iters == 0 {
        return Err(Error::Config("max_iters must be at least 1".into()));
    }
    Ok(())
}

pub fn fit(data: &EmbeddingMatrix, k: usize, algo: Algorithm, max_iters: usize, seed: u64) -> Result<ClusterResult> {
    match algo {
        Algorithm::KMeans => kmeans_fit(data, k, max_iters, seed),
        Algorithm::Gmm(mode) => gmm_fit(data, k, max_iters, seed, mode),
    }
}

/// Index of the best fit; ties go to the earliest entry.
pub fn select_best(results: &[ClusterResult], algo: Algorithm) -> Option<usize> {
    (0..results.len()).reduce(|best, i| {
        if algo.better(results[i].fit_score, results[best].fit_score) {
            i
        } else {
            best
        }
    })
}

/// Runs one fit per seed in `base_seed..base_seed + restarts`.
pub fn all_restarts(
    data: &EmbeddingMatrix,
    k: usize,
    algo: Algorithm,
    restarts: usize,
    max_iters: usize,
    base_seed: u64,
) -> Result<Vec<ClusterResult>> {
    if restarts == 0 {
        return Err(Error::Config("restarts must be at least 1".into()));
    }
    check_fit_args(data, k, max_iters)?;
    (0..restarts as u64)
        .into_par_iter()
        .map(|r| fit(data, k, algo, max_iters, base_seed.wrapping_add(r)))
        .collect()
}

/// Best-scoring fit over `restarts` seeds; ties go to the lowest seed.
pub fn best_of_restarts(
    data: &EmbeddingMatrix,
    k: usize,
    algo: Algorithm,
    restarts: usize,
    max_iters: usize,
    base_seed: u64,
) -> Result<ClusterResult> {
    let mut all = all_restarts(data, k, algo, restarts, max_iters, base_seed)?;
    let best = select_best(&all, algo).expect("restarts >= 1");
    Ok(all.swap_remove(best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn noisy(n: usize, d: usize, seed: u64) -> EmbeddingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Normal::new(0.0, 1.0).unwrap();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..d).map(|j| g.sample(&mut rng) + 4.0 * ((i % 4 == j % 4) as u8 as f64)).collect())
            .collect();
        EmbeddingMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn one_restart_is_a_single_fit() {
        let data = noisy(80, 5, 1);
        for algo in [Algorithm::KMeans, Algorithm::Gmm(CovMode::Diag)] {
            let a = best_of_restarts(&data, 4, algo, 1, 50, 17).unwrap();
            let b = fit(&data, 4, algo, 50, 17).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn best_is_no_worse_than_any_restart() {
        let data = noisy(120, 6, 2);
        let all = all_restarts(&data, 5, Algorithm::KMeans, DEFAULT_RESTARTS, 50, 100).unwrap();
        let best = best_of_restarts(&data, 5, Algorithm::KMeans, DEFAULT_RESTARTS, 50, 100).unwrap();
        assert!(all.iter().all(|r| best.fit_score <= r.fit_score));
        let first = all.iter().position(|r| r.fit_score == best.fit_score).unwrap();
        assert_eq!(best.seed, 100 + first as u64);

        let all = all_restarts(&data, 5, Algorithm::Gmm(CovMode::Diag), 5, 50, 100).unwrap();
        let best = best_of_restarts(&data, 5, Algorithm::Gmm(CovMode::Diag), 5, 50, 100).unwrap();
        assert!(all.iter().all(|r| best.fit_score >= r.fit_score));
    }

    #[test]
    fn fits_do_not_depend_on_thread_count() {
        let data = noisy(300, 12, 3);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    (
                        best_of_restarts(&data, 7, Algorithm::KMeans, 4, 50, 9).unwrap(),
                        best_of_restarts(&data, 7, Algorithm::Gmm(CovMode::Diag), 4, 50, 9).unwrap(),
                    )
                })
        };
        assert_eq!(run(1), run(6));
    }

    #[test]
    fn relabeling_keeps_the_objective() {
        let data = noisy(60, 3, 4);
        let r = kmeans_fit(&data, 3, 50, 0).unwrap();
        let ClusterModel::KMeans(m) = &r.model else { panic!() };
        let perm = [2usize, 0, 1];
        let mut permuted = vec![0.0; m.centroids.len()];
        for c in 0..3 {
            permuted[perm[c] * 3..perm[c] * 3 + 3].copy_from_slice(m.centroid(c));
        }
        let wcss: f64 = data
            .rows()
            .zip(&r.raw_labels)
            .map(|(row, &l)| kmeans::sq_dist(row, &permuted[perm[l] * 3..perm[l] * 3 + 3]))
            .sum();
        assert_eq!(wcss, m.objective);

        let g = gmm_fit(&data, 3, 50, 0, CovMode::Diag).unwrap();
        let ClusterModel::Gmm(gm) = &g.model else { panic!() };
        let mut shuffled = gm.clone();
        let Covariances::Diag(var) = &gm.covariances else { panic!() };
        let mut new_var = var.clone();
        for c in 0..3 {
            shuffled.weights[perm[c]] = gm.weights[c];
            shuffled.means[perm[c] * 3..perm[c] * 3 + 3].copy_from_slice(gm.mean(c));
            new_var[perm[c] * 3..perm[c] * 3 + 3].copy_from_slice(&var[c * 3..c * 3 + 3]);
        }
        shuffled.covariances = Covariances::Diag(new_var);
        let a = gmm::log_likelihood(&data, gm);
        let b = gmm::log_likelihood(&data, &shuffled);
        assert!((a - b).abs() <= 1e-12 * a.abs());
        assert_eq!(a, gm.log_likelihood);
    }

    #[test]
    fn zero_restarts_rejected() {
        let data = noisy(10, 2, 5);
        assert!(matches!(
            best_of_restarts(&data, 2, Algorithm::KMeans, 0, 50, 0),
            Err(Error::Config(_))
        ));
    }
}
