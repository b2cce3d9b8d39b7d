//! Information-theoretic agreement between two partitions.
//!
//! All quantities are in nats. NMI and ANMI normalize by the arithmetic mean
//! of the two entropies. The expected mutual information is exact under the
//! permutation model with fixed marginals (hypergeometric cell counts).

use crate::corpus::Partition;
use crate::error::{Error, Result};

/// Values within this distance of a degenerate boundary are treated as on it.
const DEGENERATE_TOL: f64 = 1e-12;

/// Counts `n_ij = |A_i ∩ B_j|` with both marginals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    counts: Vec<usize>,
    n_rows: usize,
    n_cols: usize,
    row_marginals: Vec<usize>,
    col_marginals: Vec<usize>,
    n: usize,
}

impl ContingencyTable {
    /// Builds a table from a row-major count matrix.
    pub fn from_counts(rows: &[Vec<usize>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::Shape("ragged contingency rows".into()));
        }
        let counts: Vec<usize> = rows.iter().flatten().copied().collect();
        Ok(Self::from_flat(counts, rows.len(), n_cols))
    }

    fn from_flat(counts: Vec<usize>, n_rows: usize, n_cols: usize) -> Self {
        let mut row_marginals = vec![0; n_rows];
        let mut col_marginals = vec![0; n_cols];
        for i in 0..n_rows {
            for j in 0..n_cols {
                let c = counts[i * n_cols + j];
                row_marginals[i] += c;
                col_marginals[j] += c;
            }
        }
        let n = row_marginals.iter().sum();
        Self {
            counts,
            n_rows,
            n_cols,
            row_marginals,
            col_marginals,
            n,
        }
    }

    pub fn count(&self, i: usize, j: usize) -> usize {
        self.counts[i * self.n_cols + j]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn row_marginals(&self) -> &[usize] {
        &self.row_marginals
    }

    pub fn col_marginals(&self) -> &[usize] {
        &self.col_marginals
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0; self.counts.len()];
        for i in 0..self.n_rows {
            for j in 0..self.n_cols {
                counts[j * self.n_rows + i] = self.count(i, j);
            }
        }
        Self::from_flat(counts, self.n_cols, self.n_rows)
    }

    fn nonzero_cells(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.n_rows).flat_map(move |i| {
            (0..self.n_cols).filter_map(move |j| {
                let c = self.count(i, j);
                (c > 0).then_some((i, j, c))
            })
        })
    }

    /// True when each non-empty row and column holds exactly one non-zero
    /// cell, i.e. the partitions agree up to relabeling.
    pub fn is_matching(&self) -> bool {
        let mut row_hits = vec![0usize; self.n_rows];
        let mut col_hits = vec![0usize; self.n_cols];
        for (i, j, _) in self.nonzero_cells() {
            row_hits[i] += 1;
            col_hits[j] += 1;
        }
        row_hits.iter().all(|&h| h <= 1) && col_hits.iter().all(|&h| h <= 1)
    }
}

pub fn contingency(a: &Partition, b: &Partition) -> Result<ContingencyTable> {
    if a.n_items() != b.n_items() {
        return Err(Error::Shape(format!(
            "partitions cover {} and {} items",
            a.n_items(),
            b.n_items()
        )));
    }
    let (ra, rb) = (a.n_classes(), b.n_classes());
    let mut counts = vec![0; ra * rb];
    for (&i, &j) in a.assignments().iter().zip(b.assignments()) {
        counts[i * rb + j] += 1;
    }
    Ok(ContingencyTable::from_flat(counts, ra, rb))
}

fn entropy_of_counts(sizes: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let ln_n = (n as f64).ln();
    let h: f64 = sizes
        .iter()
        .filter(|&&s| s > 0)
        .map(|&s| (s as f64 / n as f64) * (ln_n - (s as f64).ln()))
        .sum();
    h.max(0.0)
}

pub fn entropy(p: &Partition) -> f64 {
    entropy_of_counts(&p.class_sizes(), p.n_items())
}

pub fn mutual_information(t: &ContingencyTable) -> f64 {
    if t.n == 0 {
        return 0.0;
    }
    let n = t.n as f64;
    let ln_n = n.ln();
    let mi: f64 = t
        .nonzero_cells()
        .map(|(i, j, c)| {
            let c = c as f64;
            let a = t.row_marginals[i] as f64;
            let b = t.col_marginals[j] as f64;
            (c / n) * ((ln_n - a.ln()) + (c.ln() - b.ln()))
        })
        .sum();
    clamp_noise(mi)
}

fn clamp_noise(x: f64) -> f64 {
    if (-DEGENERATE_TOL..0.0).contains(&x) {
        0.0
    } else {
        x
    }
}

fn mean_entropy(t: &ContingencyTable) -> (f64, f64, f64) {
    let ha = entropy_of_counts(&t.row_marginals, t.n);
    let hb = entropy_of_counts(&t.col_marginals, t.n);
    (ha, hb, 0.5 * (ha + hb))
}

pub fn nmi(t: &ContingencyTable) -> f64 {
    let (ha, hb, mean_h) = mean_entropy(t);
    if ha == 0.0 && hb == 0.0 {
        return 1.0;
    }
    if t.is_matching() {
        return 1.0;
    }
    (mutual_information(t) / mean_h).clamp(0.0, 1.0)
}

/// `ln k!` for `k = 0..=n`.
fn ln_factorials(n: usize) -> Vec<f64> {
    let mut table = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    table.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        table.push(acc);
    }
    table
}

/// Expected mutual information of two random partitions with the table's
/// marginals, averaged over all label permutations.
pub fn expected_mi(t: &ContingencyTable) -> f64 {
    let n = t.n;
    if n == 0 {
        return 0.0;
    }
    let lf = ln_factorials(n);
    let nf = n as f64;
    let ln_n = nf.ln();
    let mut emi = 0.0;
    for &a in t.row_marginals.iter().filter(|&&a| a > 0) {
        for &b in t.col_marginals.iter().filter(|&&b| b > 0) {
            let lo = (a + b).saturating_sub(n).max(1);
            let hi = a.min(b);
            if lo > hi {
                continue;
            }
            // terms independent of m
            let base = lf[a] + lf[b] + lf[n - a] + lf[n - b] - lf[n];
            let ln_ab = (a as f64).ln() + (b as f64).ln();
            for m in lo..=hi {
                let mf = m as f64;
                let ln_p = base - lf[m] - lf[a - m] - lf[b - m] - lf[n + m - a - b];
                emi += (mf / nf) * (ln_n + mf.ln() - ln_ab) * ln_p.exp();
            }
        }
    }
    clamp_noise(emi)
}

/// Adjusted mutual information with arithmetic-mean normalization.
///
/// Identical partitions (up to relabeling) score exactly 1. When either side is
/// a single class or all singletons, every table with these marginals has the
/// same MI, so the chance-adjusted score is exactly 0.
pub fn anmi(t: &ContingencyTable) -> f64 {
    anmi_parts(t, mutual_information(t), expected_mi(t))
}

fn anmi_parts(t: &ContingencyTable, mi: f64, emi: f64) -> f64 {
    let (_, _, mean_h) = mean_entropy(t);
    if t.is_matching() {
        return 1.0;
    }
    let constant_mi = |m: &[usize]| m.iter().filter(|&&x| x > 0).count() <= 1 || m.iter().all(|&x| x <= 1);
    if constant_mi(&t.row_marginals) || constant_mi(&t.col_marginals) {
        return 0.0;
    }
    let numerator = mi - emi;
    let denominator = mean_h - emi;
    if denominator.abs() < DEGENERATE_TOL {
        return 0.0;
    }
    (numerator / denominator).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiReport {
    pub mi: f64,
    pub h_a: f64,
    pub h_b: f64,
    pub nmi: f64,
    pub emi: f64,
    pub anmi: f64,
}

impl MiReport {
    pub fn from_table(t: &ContingencyTable) -> Self {
        let (h_a, h_b, _) = mean_entropy(t);
        let mi = mutual_information(t);
        let emi = expected_mi(t);
        MiReport {
            mi,
            h_a,
            h_b,
            nmi: nmi(t),
            emi,
            anmi: anmi_parts(t, mi, emi),
        }
    }

    pub fn compare(a: &Partition, b: &Partition) -> Result<Self> {
        Ok(Self::from_table(&contingency(a, b)?))
    }
}
