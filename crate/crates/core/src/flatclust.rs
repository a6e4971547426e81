//! K-means (k-means++ seeding, Lloyd refinement) and agglomerative
//! hierarchical clustering.
//!
//! All ties are broken towards the lowest index: the lowest centroid index
//! during assignment, and the lexicographically smallest cluster pair during
//! merging, where a cluster is identified by its smallest member index.

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;

use crate::dataio::check_finite;
use crate::{metrics, seed, Error, Partition, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub n_init: usize,
    pub max_iter: usize,
    /// Stop once an iteration improves inertia by less than `tol * inertia`.
    pub tol: f64,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize) -> Self {
        KMeansConfig {
            k,
            n_init: 10,
            max_iter: 300,
            tol: 1e-4,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.k == 0 || self.n_init == 0 || self.max_iter == 0 || self.tol.is_nan() || self.tol < 0.0 {
            return Err(Error::Config(format!("invalid k-means settings {self:?}")));
        }
        if self.k > n {
            return Err(Error::InvalidInput(format!(
                "k={} exceeds the {n} samples",
                self.k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub partition: Partition,
    pub centroids: Array2<f64>,
    pub inertia: f64,
    pub iterations_run: usize,
    /// Inertia after seeding and after every Lloyd iteration of the
    /// winning restart.
    pub inertia_history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

struct Rows<'a> {
    values: &'a [f64],
    d: usize,
}

impl<'a> Rows<'a> {
    fn row(&self, i: usize) -> &'a [f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    fn len(&self) -> usize {
        self.values.len() / self.d
    }
}

/// Draws an index with probability proportional to `weights`, or `None`
/// when all weights are zero.
fn sample_weighted(weights: &[f64], rng: &mut seed::Rng) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if w > 0.0 && acc > target {
            return Some(i);
        }
    }
    // rounding can leave `acc` a hair under `target`
    weights.iter().rposition(|&w| w > 0.0)
}

/// Standard k-means++: first center uniform, then D² sampling.
fn seed_plus_plus(rows: &Rows<'_>, k: usize, rng: &mut seed::Rng) -> Vec<f64> {
    let n = rows.len();
    let d = rows.d;
    let mut centers = Vec::with_capacity(k * d);
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centers.extend_from_slice(rows.row(first));
    let mut closest: Vec<f64> = (0..n).map(|i| sq_dist(rows.row(i), rows.row(first))).collect();
    for _ in 1..k {
        let next = sample_weighted(&closest, rng).unwrap_or_else(|| {
            // every point coincides with a center; fall back to uniform
            // among the unchosen ones
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        });
        chosen[next] = true;
        let c = rows.row(next);
        centers.extend_from_slice(c);
        for (i, best) in closest.iter_mut().enumerate() {
            let dist = sq_dist(rows.row(i), c);
            if dist < *best {
                *best = dist;
            }
        }
    }
    centers
}

/// Assigns every row to its nearest center; returns the total inertia.
fn assign(rows: &Rows<'_>, centers: &[f64], labels: &mut [usize], dists: &mut [f64]) -> f64 {
    let d = rows.d;
    let k = centers.len() / d;
    let mut total = 0.0;
    for i in 0..rows.len() {
        let x = rows.row(i);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for c in 0..k {
            let dist = sq_dist(x, &centers[c * d..(c + 1) * d]);
            if dist < best_d {
                best_d = dist;
                best = c;
            }
        }
        labels[i] = best;
        dists[i] = best_d;
        total += best_d;
    }
    total
}

/// Gives every empty cluster the point farthest from its center, taken
/// from a cluster with more than one member. Returns the inertia reduction.
fn repair_empty(rows: &Rows<'_>, centers: &mut [f64], labels: &mut [usize], dists: &mut [f64]) -> f64 {
    let d = rows.d;
    let k = centers.len() / d;
    let mut sizes = vec![0usize; k];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    let mut gain = 0.0;
    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        let mut far = None;
        let mut far_d = -1.0;
        for (i, &dist) in dists.iter().enumerate() {
            if sizes[labels[i]] > 1 && dist > far_d {
                far_d = dist;
                far = Some(i);
            }
        }
        if let Some(i) = far {
            sizes[labels[i]] -= 1;
            sizes[c] = 1;
            labels[i] = c;
            gain += dists[i];
            dists[i] = 0.0;
            centers[c * d..(c + 1) * d].copy_from_slice(rows.row(i));
        }
    }
    gain
}

/// Recomputes centers as cluster means.
fn update_centers(rows: &Rows<'_>, k: usize, labels: &[usize]) -> Vec<f64> {
    let d = rows.d;
    let mut sizes = vec![0usize; k];
    let mut centers = vec![0.0; k * d];
    for (i, &l) in labels.iter().enumerate() {
        sizes[l] += 1;
        for (acc, x) in centers[l * d..(l + 1) * d].iter_mut().zip(rows.row(i)) {
            *acc += x;
        }
    }
    for c in 0..k {
        let s = sizes[c].max(1) as f64;
        for v in &mut centers[c * d..(c + 1) * d] {
            *v /= s;
        }
    }
    centers
}

struct RestartOutcome {
    labels: Vec<usize>,
    centers: Vec<f64>,
    inertia: f64,
    iterations: usize,
    history: Vec<f64>,
}

fn lloyd(rows: &Rows<'_>, config: &KMeansConfig, seed: u64) -> RestartOutcome {
    let n = rows.len();
    let mut rng = seed::rng(seed);
    let mut centers = seed_plus_plus(rows, config.k, &mut rng);
    let mut labels = vec![0; n];
    let mut dists = vec![0.0; n];
    let mut inertia = assign(rows, &centers, &mut labels, &mut dists);
    inertia -= repair_empty(rows, &mut centers, &mut labels, &mut dists);
    let mut history = vec![inertia];
    let mut iterations = 0;
    let mut next_labels = vec![0; n];
    let mut next_dists = vec![0.0; n];
    while iterations < config.max_iter {
        iterations += 1;
        let mut next_centers = update_centers(rows, config.k, &labels);
        let mut next_inertia = assign(rows, &next_centers, &mut next_labels, &mut next_dists);
        next_inertia -= repair_empty(rows, &mut next_centers, &mut next_labels, &mut next_dists);
        let changed = next_labels != labels;
        let improvement = inertia - next_inertia;
        centers = next_centers;
        std::mem::swap(&mut labels, &mut next_labels);
        std::mem::swap(&mut dists, &mut next_dists);
        inertia = next_inertia;
        history.push(inertia);
        if !changed || improvement < config.tol * inertia {
            break;
        }
    }
    RestartOutcome {
        labels,
        centers,
        inertia,
        iterations,
        history,
    }
}

/// Best-of-`n_init` k-means by inertia. Restart `r` draws from its own
/// substream derived from `config.seed`.
pub fn kmeans(data: ArrayView2<'_, f64>, config: &KMeansConfig) -> Result<KMeansResult> {
    let n = data.nrows();
    config.validate(n)?;
    check_finite(data)?;
    let d = data.ncols();
    if d == 0 {
        return Err(Error::Shape("data has no columns".into()));
    }
    let owned;
    let values = match data.as_slice() {
        Some(s) => s,
        None => {
            owned = data.as_standard_layout().into_owned();
            owned.as_slice().unwrap()
        }
    };
    let rows = Rows { values, d };
    let mut best: Option<RestartOutcome> = None;
    for r in 0..config.n_init {
        let outcome = lloyd(&rows, config, seed::derive_index(config.seed, r as u64));
        if best.as_ref().is_none_or(|b| outcome.inertia < b.inertia) {
            best = Some(outcome);
        }
    }
    let best = best.unwrap();
    let centroids = Array2::from_shape_vec((config.k, d), best.centers)
        .map_err(|e| Error::Shape(e.to_string()))?;
    let partition = Partition::new(best.labels, config.k)?;
    let inertia = metrics::inertia(data, &partition, centroids.view())?;
    Ok(KMeansResult {
        partition,
        centroids,
        inertia,
        iterations_run: best.iterations,
        inertia_history: best.history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Linkage {
    /// Ward's minimum variance criterion on raw feature vectors.
    Ward,
    /// Unweighted average linkage (UPGMA) on a precomputed distance matrix.
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkageConfig {
    pub k: usize,
    pub linkage: Linkage,
}

impl LinkageConfig {
    pub fn ward(k: usize) -> Self {
        LinkageConfig {
            k,
            linkage: Linkage::Ward,
        }
    }

    pub fn average(k: usize) -> Self {
        LinkageConfig {
            k,
            linkage: Linkage::Average,
        }
    }
}

/// Greedy merging over an `n x n` cost matrix. `costs[i][j]` for `i < j`
/// holds the merge cost of active slots `i` and `j`; a slot is indexed by
/// the smallest member of its cluster, so merging `j` into `i` keeps `i`.
fn merge_until<F>(n: usize, k: usize, costs: &mut [f64], mut merge: F) -> Partition
where
    F: FnMut(usize, usize, &[bool], &mut [f64]),
{
    let mut active = vec![true; n];
    let mut owner: Vec<usize> = (0..n).collect();
    let mut clusters = n;
    while clusters > k {
        let mut best = (usize::MAX, usize::MAX);
        let mut best_cost = f64::INFINITY;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in (i + 1)..n {
                if active[j] && costs[i * n + j] < best_cost {
                    best_cost = costs[i * n + j];
                    best = (i, j);
                }
            }
        }
        let (i, j) = best;
        active[j] = false;
        for o in owner.iter_mut() {
            if *o == j {
                *o = i;
            }
        }
        merge(i, j, &active, costs);
        clusters -= 1;
    }
    let mut rank = vec![0; n];
    let mut next = 0;
    for (slot, &is_active) in active.iter().enumerate() {
        if is_active {
            rank[slot] = next;
            next += 1;
        }
    }
    Partition::new(owner.iter().map(|&o| rank[o]).collect(), k)
        .expect("merge loop leaves exactly k clusters")
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("linkage needs k >= 1".into()));
    }
    if k > n {
        return Err(Error::InvalidInput(format!("k={k} exceeds the {n} samples")));
    }
    Ok(())
}

/// Ward agglomerative clustering on feature vectors, merged down to `k`
/// clusters. The merge cost of clusters `A` and `B` is the increase in
/// within-cluster sum of squares, `|A||B| / (|A|+|B|) * |c_A - c_B|^2`.
pub fn agglomerative_features(data: ArrayView2<'_, f64>, config: &LinkageConfig) -> Result<Partition> {
    if config.linkage != Linkage::Ward {
        return Err(Error::Config(
            "feature-space agglomerative clustering uses Ward linkage".into(),
        ));
    }
    let n = data.nrows();
    check_k(config.k, n)?;
    check_finite(data)?;
    let d = data.ncols();
    let mut centroids = data.as_standard_layout().into_owned().into_raw_vec_and_offset().0;
    let mut sizes = vec![1.0f64; n];
    let ward = |c: &[f64], s: &[f64], a: usize, b: usize| {
        s[a] * s[b] / (s[a] + s[b]) * sq_dist(&c[a * d..(a + 1) * d], &c[b * d..(b + 1) * d])
    };
    let mut costs = vec![f64::INFINITY; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            costs[i * n + j] = ward(&centroids, &sizes, i, j);
        }
    }
    Ok(merge_until(n, config.k, &mut costs, |i, j, active, costs| {
        let (si, sj) = (sizes[i], sizes[j]);
        for t in 0..d {
            centroids[i * d + t] = (si * centroids[i * d + t] + sj * centroids[j * d + t]) / (si + sj);
        }
        sizes[i] = si + sj;
        for o in 0..n {
            if o != i && active[o] {
                let c = ward(&centroids, &sizes, i, o);
                let (a, b) = if o < i { (o, i) } else { (i, o) };
                costs[a * n + b] = c;
            }
        }
    }))
}

/// Average-linkage (UPGMA) agglomerative clustering on a symmetric,
/// zero-diagonal, nonnegative distance matrix.
pub fn agglomerative_distance(dist: ArrayView2<'_, f64>, config: &LinkageConfig) -> Result<Partition> {
    if config.linkage != Linkage::Average {
        return Err(Error::Config(
            "distance-matrix agglomerative clustering uses average linkage".into(),
        ));
    }
    let n = dist.nrows();
    if dist.ncols() != n {
        return Err(Error::Shape(format!(
            "distance matrix must be square, got {}x{}",
            n,
            dist.ncols()
        )));
    }
    check_k(config.k, n)?;
    for i in 0..n {
        if dist[[i, i]] != 0.0 {
            return Err(Error::InvalidInput(format!(
                "distance matrix diagonal entry ({i},{i}) is not zero"
            )));
        }
        for j in (i + 1)..n {
            let (a, b) = (dist[[i, j]], dist[[j, i]]);
            if !a.is_finite() || !b.is_finite() || a < 0.0 || b < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "distance ({i},{j}) is negative or non-finite"
                )));
            }
            if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                return Err(Error::InvalidInput(format!(
                    "distance matrix is asymmetric at ({i},{j})"
                )));
            }
        }
    }
    let mut costs = vec![f64::INFINITY; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            costs[i * n + j] = dist[[i, j]];
        }
    }
    let mut sizes = vec![1.0f64; n];
    Ok(merge_until(n, config.k, &mut costs, |i, j, active, costs| {
        let (si, sj) = (sizes[i], sizes[j]);
        let at = |a: usize, b: usize| if a < b { a * n + b } else { b * n + a };
        for o in 0..n {
            if o != i && active[o] {
                let merged = (si * costs[at(i, o)] + sj * costs[at(j, o)]) / (si + sj);
                costs[at(i, o)] = merged;
            }
        }
        sizes[i] = si + sj;
    }))
}
