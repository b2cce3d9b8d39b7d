#![allow(dead_code)]

use std::fmt::Write as _;

use embprobe::corpus::{EmbeddingMatrix, Partition};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Isotropic Gaussian blobs around `centers`, `n` points dealt round-robin.
/// Returns the matrix and the generating label of every row.
pub fn blobs(centers: &[Vec<f64>], n: usize, std: f64, seed: u64) -> (EmbeddingMatrix, Vec<usize>) {
    let mut r = rng(seed);
    let noise = Normal::new(0.0, std).unwrap();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % centers.len();
        rows.push(centers[c].iter().map(|m| m + noise.sample(&mut r)).collect());
        labels.push(c);
    }
    (EmbeddingMatrix::from_rows(&rows).unwrap(), labels)
}

/// `k` centers on scaled coordinate axes with pairwise distance `sep`.
pub fn axis_centers(k: usize, dim: usize, sep: f64) -> Vec<Vec<f64>> {
    (0..k)
        .map(|c| {
            let mut v = vec![0.0; dim];
            v[c] = sep / std::f64::consts::SQRT_2;
            v
        })
        .collect()
}

pub fn random_partition(n: usize, k: usize, r: &mut impl Rng) -> Partition {
    let raw: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
    Partition::from_assignments(&raw)
}

/// Label TSV with `id`, `speaker` and the given single-label columns.
pub fn labels_tsv(ids: &[String], speakers: &[&str], columns: &[(&str, Vec<String>)]) -> String {
    let mut out = String::from("id\tspeaker");
    for (name, _) in columns {
        write!(out, "\t{name}").unwrap();
    }
    out.push('\n');
    for (i, id) in ids.iter().enumerate() {
        write!(out, "{id}\t{}", speakers[i]).unwrap();
        for (_, values) in columns {
            write!(out, "\t{}", values[i]).unwrap();
        }
        out.push('\n');
    }
    out
}
