use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{check_fit_args, ClusterModel, ClusterResult};
use crate::corpus::{EmbeddingMatrix, Partition};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel {
    /// `k × d`, row-major.
    pub centroids: Vec<f64>,
    pub k: usize,
    pub dim: usize,
    /// Final within-cluster sum of squared distances.
    pub objective: f64,
    /// WCSS after every Lloyd iteration; the last entry equals `objective`.
    pub history: Vec<f64>,
    pub iters_run: usize,
}

impl KMeansModel {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }
}

#[inline]
/// Squared Euclidean distance. Four fixed partial sums let the loop
/// vectorize while keeping the summation order deterministic.
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| (x - y) * (x - y)).sum();
    for (xa, xb) in ac.zip(bc) {
        for l in 0..4 {
            let t = xa[l] - xb[l];
            acc[l] += t * t;
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn kmeans_pp(data: &EmbeddingMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = data.n_rows();
    let d = data.dim();
    let mut centroids = Vec::with_capacity(k * d);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(data.row(first));
    let mut nearest: Vec<f64> = data.rows().map(|r| sq_dist(r, data.row(first))).collect();
    for _ in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &w) in nearest.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            // rounding can leave target just above the running sum
            chosen.unwrap_or_else(|| nearest.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            rng.random_range(0..n)
        };
        let c = data.row(pick).to_vec();
        nearest
            .par_iter_mut()
            .zip(data.values().par_chunks_exact(d))
            .for_each(|(best, row)| *best = best.min(sq_dist(row, &c)));
        centroids.extend_from_slice(&c);
    }
    centroids
}

/// Nearest centroid per row; ties keep the current assignment, otherwise the
/// lowest index wins.
fn assign(data: &EmbeddingMatrix, centroids: &[f64], labels: &mut [usize], dists: &mut [f64]) -> bool {
    let d = data.dim();
    labels
        .par_iter_mut()
        .zip(dists.par_iter_mut())
        .zip(data.values().par_chunks_exact(d))
        .map(|((label, dist), row)| {
            let mut best = *label;
            let mut best_d = if best == usize::MAX {
                f64::INFINITY
            } else {
                sq_dist(row, &centroids[best * d..(best + 1) * d])
            };
            for (c, centroid) in centroids.chunks_exact(d).enumerate() {
                let dc = sq_dist(row, centroid);
                if dc < best_d {
                    best_d = dc;
                    best = c;
                }
            }
            let changed = best != *label;
            *label = best;
            *dist = best_d;
            changed
        })
        .reduce(|| false, |a, b| a || b)
}

/// Points whose cluster ran empty are moved, one per empty cluster, to the
/// point farthest from its current centroid.
fn repair_empty(data: &EmbeddingMatrix, k: usize, centroids: &mut [f64], labels: &mut [usize], dists: &mut [f64]) {
    let d = data.dim();
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        // farthest point among clusters that can spare one
        let far = (0..labels.len())
            .filter(|&i| counts[labels[i]] > 1)
            .fold(None::<usize>, |best, i| match best {
                Some(b) if dists[b] >= dists[i] => Some(b),
                _ => Some(i),
            })
            .expect("k <= n guarantees a donor cluster");
        labels[far] = empty;
        dists[far] = 0.0;
        centroids[empty * d..(empty + 1) * d].copy_from_slice(data.row(far));
    }
}

fn update_centroids(data: &EmbeddingMatrix, k: usize, labels: &[usize], centroids: &mut [f64]) {
    let d = data.dim();
    let mut counts = vec![0usize; k];
    let mut sums = vec![0.0; k * d];
    for (row, &l) in data.rows().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l * d..(l + 1) * d].iter_mut().zip(row) {
            *s += x;
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            continue;
        }
        let inv = counts[c] as f64;
        for (dst, s) in centroids[c * d..(c + 1) * d].iter_mut().zip(&sums[c * d..(c + 1) * d]) {
            *dst = s / inv;
        }
    }
}

fn wcss(data: &EmbeddingMatrix, centroids: &[f64], labels: &[usize]) -> f64 {
    let d = data.dim();
    let per_row: Vec<f64> = data
        .values()
        .par_chunks_exact(d)
        .zip(labels.par_iter())
        .map(|(row, &l)| sq_dist(row, &centroids[l * d..(l + 1) * d]))
        .collect();
    per_row.iter().sum()
}

/// Lloyd's algorithm from a k-means++ start.
pub fn kmeans_fit(data: &EmbeddingMatrix, k: usize, max_iters: usize, seed: u64) -> Result<ClusterResult> {
    check_fit_args(data, k, max_iters)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = data.n_rows();
    let mut centroids = kmeans_pp(data, k, &mut rng);
    let mut labels = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    let mut history = Vec::new();
    let mut iters_run = 0;

    for _ in 0..max_iters {
        let changed = assign(data, &centroids, &mut labels, &mut dists);
        if !changed && iters_run > 0 {
            break;
        }
        repair_empty(data, k, &mut centroids, &mut labels, &mut dists);
        update_centroids(data, k, &labels, &mut centroids);
        iters_run += 1;
        history.push(wcss(data, &centroids, &labels));
    }
    let objective = *history.last().expect("at least one iteration");
    let partition = Partition::from_assignments(&labels);
    Ok(ClusterResult {
        raw_labels: labels,
        partition,
        model: ClusterModel::KMeans(KMeansModel {
            centroids,
            k,
            dim: data.dim(),
            objective,
            history,
            iters_run,
        }),
        seed,
        fit_score: objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infometrics::{anmi, contingency};
    use rand_distr::{Distribution, Normal};

    pub(crate) fn blobs(centers: &[Vec<f64>], per: usize, spread: f64, seed: u64) -> (EmbeddingMatrix, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, spread).unwrap();
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for _ in 0..per {
            for (c, center) in centers.iter().enumerate() {
                rows.push(center.iter().map(|m| m + noise.sample(&mut rng)).collect());
                truth.push(c);
            }
        }
        (EmbeddingMatrix::from_rows(&rows).unwrap(), truth)
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 0.0], vec![5.0, 1.0], vec![-1.0, 5.0]];
        let data = EmbeddingMatrix::from_rows(&rows).unwrap();
        let r = kmeans_fit(&data, 1, 50, 3).unwrap();
        let ClusterModel::KMeans(m) = &r.model else { panic!() };
        assert_eq!(m.centroids, vec![2.0, 2.0]);
        let expected: f64 = rows.iter().map(|x| sq_dist(x, &[2.0, 2.0])).sum();
        assert!((m.objective - expected).abs() < 1e-12);
        assert_eq!(r.partition.n_classes(), 1);
    }

    #[test]
    fn one_cluster_per_distinct_point() {
        let rows: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64, (i * i) as f64 * 0.1]).collect();
        let data = EmbeddingMatrix::from_rows(&rows).unwrap();
        for seed in 0..5 {
            let r = kmeans_fit(&data, 7, 50, seed).unwrap();
            assert_eq!(r.fit_score, 0.0);
            assert_eq!(r.partition.n_classes(), 7);
        }
    }

    #[test]
    fn separated_blobs_match_nearest_center() {
        let centers = vec![vec![0.0; 8], vec![100.0; 8]];
        let (data, _) = blobs(&centers, 40, 0.5, 11);
        let oracle: Vec<usize> = data
            .rows()
            .map(|r| if sq_dist(r, &centers[0]) < sq_dist(r, &centers[1]) { 0 } else { 1 })
            .collect();
        let r = kmeans_fit(&data, 2, 50, 5).unwrap();
        let t = contingency(&r.partition, &Partition::from_assignments(&oracle)).unwrap();
        assert!(t.is_matching());
        assert_eq!(anmi(&t), 1.0);
    }

    #[test]
    fn objective_never_increases() {
        let centers: Vec<Vec<f64>> = (0..5).map(|c| vec![c as f64 * 2.0, -(c as f64)]).collect();
        let (data, _) = blobs(&centers, 30, 1.5, 2);
        for seed in 0..10 {
            let r = kmeans_fit(&data, 6, 100, seed).unwrap();
            let ClusterModel::KMeans(m) = &r.model else { panic!() };
            assert!(m.history.windows(2).all(|w| w[1] <= w[0]), "{:?}", m.history);
        }
    }

    #[test]
    fn k_larger_than_n_is_config_error() {
        let data = EmbeddingMatrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(matches!(
            kmeans_fit(&data, 3, 10, 0),
            Err(crate::Error::Config(_))
        ));
    }

    #[test]
    fn empty_clusters_are_repaired() {
        // many duplicates force k-means++ to pick coincident centroids
        let mut rows = vec![vec![0.0, 0.0]; 20];
        rows.push(vec![1.0, 1.0]);
        rows.push(vec![2.0, 2.0]);
        let data = EmbeddingMatrix::from_rows(&rows).unwrap();
        for seed in 0..10 {
            let r = kmeans_fit(&data, 4, 20, seed).unwrap();
            assert_eq!(r.partition.n_classes(), 4, "seed {seed}");
        }
    }
}
