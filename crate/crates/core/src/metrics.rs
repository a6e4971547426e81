//! Clustering evaluation: contingency tables, entropies, NMI and inertia.
//!
//! NMI is normalized by the arithmetic mean of the two entropies,
//! `I(U;V) / ((H(U) + H(V)) / 2)`. When both partitions are a single
//! cluster the score is defined as 1; when only one is, it is 0.

use ndarray::{Array2, ArrayView2};

use crate::{Error, Partition, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    counts: Array2<u64>,
    n: u64,
}

impl ContingencyTable {
    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.rows().into_iter().map(|r| r.sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        self.counts.columns().into_iter().map(|c| c.sum()).collect()
    }
}

fn check_same_len(u: &Partition, v: &Partition) -> Result<()> {
    if u.len() != v.len() {
        return Err(Error::InvalidInput(format!(
            "partitions cover different sample counts: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    Ok(())
}

/// `counts[a][b]` is the number of samples with `u = a` and `v = b`.
pub fn contingency(u: &Partition, v: &Partition) -> Result<ContingencyTable> {
    check_same_len(u, v)?;
    let mut counts = Array2::zeros((u.k(), v.k()));
    for (&a, &b) in u.assignments().iter().zip(v.assignments()) {
        counts[[a, b]] += 1;
    }
    Ok(ContingencyTable {
        counts,
        n: u.len() as u64,
    })
}

/// Shannon entropy (natural log) of a count histogram with total `n`.
pub fn entropy(counts: &[u64], n: u64) -> f64 {
    let n = n as f64;
    sorted_sum(
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .collect(),
    )
}

/// Sums in ascending order so the result does not depend on how clusters
/// are numbered or which partition comes first.
fn sorted_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

pub fn mutual_information(table: &ContingencyTable) -> f64 {
    let n = table.n as f64;
    let rows = table.row_sums();
    let cols = table.col_sums();
    let mut terms = Vec::new();
    for ((a, b), &c) in table.counts.indexed_iter() {
        if c == 0 {
            continue;
        }
        let c = c as f64;
        terms.push(c / n * ((c * n) / (rows[a] as f64 * cols[b] as f64)).ln());
    }
    sorted_sum(terms)
}

/// Normalized mutual information in `[0, 1]`.
pub fn nmi(u: &Partition, v: &Partition) -> Result<f64> {
    let table = contingency(u, v)?;
    let hu = entropy(&table.row_sums(), table.n);
    let hv = entropy(&table.col_sums(), table.n);
    // Entropies of non-trivial partitions of n <= 2^53 samples are far above
    // this; anything below is a single-cluster partition up to rounding.
    const ZERO: f64 = 1e-15;
    match (hu <= ZERO, hv <= ZERO) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let mi = mutual_information(&table);
    Ok((mi / ((hu + hv) / 2.0)).clamp(0.0, 1.0))
}

/// Sum of squared Euclidean distances from each sample to its assigned
/// centroid.
pub fn inertia(
    data: ArrayView2<'_, f64>,
    partition: &Partition,
    centroids: ArrayView2<'_, f64>,
) -> Result<f64> {
    if data.nrows() != partition.len() {
        return Err(Error::Shape(format!(
            "{} samples but partition covers {}",
            data.nrows(),
            partition.len()
        )));
    }
    if centroids.ncols() != data.ncols() || centroids.nrows() < partition.k() {
        return Err(Error::Shape(format!(
            "centroids are {}x{}, need at least {}x{}",
            centroids.nrows(),
            centroids.ncols(),
            partition.k(),
            data.ncols()
        )));
    }
    Ok(data
        .rows()
        .into_iter()
        .zip(partition.assignments())
        .map(|(x, &c)| {
            x.iter()
                .zip(centroids.row(c))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum())
}
