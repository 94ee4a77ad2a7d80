//! k-NN graphs, normalized Laplacian spectra and spectral clustering.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use crate::error::{EarError, Result};
use crate::rng;

pub const MIN_BATCH: usize = 8;
/// Eigenvalues below this count as a cluster for spectral clustering.
pub const CLUSTER_EIGEN_THRESHOLD: f64 = 0.1;
const KMEANS_RESTARTS: usize = 20;
const KMEANS_MAX_ITERS: usize = 100;

/// Eigenpairs of the symmetric normalized Laplacian, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    /// Column `i` pairs with `eigenvalues[i]`.
    eigenvectors: DMatrix<f64>,
}

impl SpectralDecomposition {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Number of eigenvalues below `tol`; with a small `tol` this is the
    /// number of connected components.
    pub fn count_below(&self, tol: f64) -> usize {
        self.eigenvalues.iter().take_while(|&&l| l < tol).count()
    }

    /// Cluster count used by [`spectral_clustering`]: eigenvalues below 0.1,
    /// clamped to `[1, n / 2]`.
    pub fn cluster_count(&self) -> usize {
        self.count_below(CLUSTER_EIGEN_THRESHOLD)
            .clamp(1, (self.len() / 2).max(1))
    }
}

fn check_points(points: &[Vec<f64>], k: usize) -> Result<usize> {
    let n = points.len();
    if n <= k {
        return Err(EarError::Argument(format!("{n} points cannot have {k} neighbors each")));
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(EarError::dim(dim, p.len()));
    }
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(EarError::NonFinite("graph features".into()));
    }
    Ok(n)
}

/// Union-symmetrized k-nearest-neighbor adjacency under Euclidean distance.
/// Equal distances are broken toward the lower index.
pub fn knn_adjacency(points: &[Vec<f64>], k: usize) -> Result<Vec<Vec<bool>>> {
    let n = check_points(points, k)?;
    let mut adj = vec![vec![false; n]; n];
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        for j in (0..n).filter(|&j| j != i) {
            let d: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            cand.push((d, j));
        }
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in cand.iter().take(k) {
            adj[i][j] = true;
            adj[j][i] = true;
        }
    }
    Ok(adj)
}

/// `L = I - D^{-1/2} A D^{-1/2}`. Isolated vertices get `L_ii = 0`.
pub fn normalized_laplacian(adj: &[Vec<bool>]) -> DMatrix<f64> {
    let n = adj.len();
    let inv_sqrt: Vec<f64> = adj
        .iter()
        .map(|row| {
            let d = row.iter().filter(|&&e| e).count();
            if d == 0 {
                0.0
            } else {
                1.0 / (d as f64).sqrt()
            }
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j && inv_sqrt[i] > 0.0 { 1.0 } else { 0.0 };
        let off = if adj[i][j] { inv_sqrt[i] * inv_sqrt[j] } else { 0.0 };
        diag - off
    })
}

/// Vertex sets of the connected components of the graph whose edges are the
/// nonzero off-diagonal entries, each sorted, ordered by smallest vertex.
fn components(m: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = m.nrows();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut head = 0;
        while head < comp.len() {
            let v = comp[head];
            head += 1;
            for u in 0..n {
                if !seen[u] && u != v && m[(v, u)] != 0.0 {
                    seen[u] = true;
                    comp.push(u);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Full eigendecomposition, computed block by block over the connected
/// components (the Laplacian of a disconnected graph is block diagonal).
/// Equal eigenvalues are ordered by component, then by position within it.
pub fn decompose(laplacian: DMatrix<f64>) -> Result<SpectralDecomposition> {
    let n = laplacian.nrows();
    let mut pairs: Vec<(f64, Vec<(usize, f64)>)> = Vec::with_capacity(n);
    for comp in components(&laplacian) {
        let m = comp.len();
        let block = DMatrix::from_fn(m, m, |r, c| laplacian[(comp[r], comp[c])]);
        let eig = SymmetricEigen::try_new(block, f64::EPSILON, 0)
            .ok_or_else(|| EarError::Numeric("eigendecomposition did not converge".into()))?;
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
        for c in order {
            let vector = comp.iter().enumerate().map(|(r, &v)| (v, eig.eigenvectors[(r, c)])).collect();
            pairs.push((eig.eigenvalues[c], vector));
        }
    }
    // stable sort keeps the component order among ties
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pairs.iter().any(|(l, _)| !l.is_finite()) {
        return Err(EarError::Numeric("non-finite eigenvalue".into()));
    }
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (c, (_, vector)) in pairs.iter().enumerate() {
        for &(r, x) in vector {
            eigenvectors[(r, c)] = x;
        }
    }
    Ok(SpectralDecomposition {
        eigenvalues: pairs.into_iter().map(|(l, _)| l).collect(),
        eigenvectors,
    })
}

/// Spectrum of the normalized Laplacian of the `k`-NN graph of `points`.
pub fn graph_spectrum(points: &[Vec<f64>], k: usize) -> Result<SpectralDecomposition> {
    decompose(normalized_laplacian(&knn_adjacency(points, k)?))
}

/// Soft count of loosely connected components: `Σ max(1 - λ, 0)^γ` over the
/// 2-NN graph spectrum of a feature batch.
pub fn expressivity_score(
    features: &[Vec<f64>],
    gamma: f64,
    knn: usize,
) -> Result<(f64, SpectralDecomposition)> {
    if features.len() < MIN_BATCH {
        return Err(EarError::Argument(format!(
            "expressivity needs at least {MIN_BATCH} samples, got {}",
            features.len()
        )));
    }
    let decomp = graph_spectrum(features, knn)?;
    Ok((spectral_score(decomp.eigenvalues(), gamma), decomp))
}

pub fn spectral_score(eigenvalues: &[f64], gamma: f64) -> f64 {
    eigenvalues.iter().map(|&l| (1.0 - l).max(0.0).powf(gamma)).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Seeded k-means++ with restarts; returns the lowest-inertia labeling.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(EarError::Argument(format!("cannot form {k} clusters from {n} points")));
    }
    if k == 1 {
        return Ok(vec![0; n]);
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for restart in 0..KMEANS_RESTARTS {
        let mut r = rng::derived(seed, &[restart as u64]);
        let mut centers: Vec<Vec<f64>> = vec![points[r.random_range(0..n)].clone()];
        let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
        while centers.len() < k {
            let total: f64 = d2.iter().sum();
            let next = if total > 0.0 {
                let mut target = r.random::<f64>() * total;
                let mut pick = n - 1;
                for (i, &w) in d2.iter().enumerate() {
                    if target < w {
                        pick = i;
                        break;
                    }
                    target -= w;
                }
                pick
            } else {
                r.random_range(0..n)
            };
            centers.push(points[next].clone());
            for (d, p) in d2.iter_mut().zip(points) {
                *d = d.min(sq_dist(p, centers.last().unwrap()));
            }
        }

        let mut labels = vec![usize::MAX; n];
        for _ in 0..KMEANS_MAX_ITERS {
            let mut changed = false;
            for (i, p) in points.iter().enumerate() {
                let mut bl = 0;
                let mut bd = f64::INFINITY;
                for (c, ctr) in centers.iter().enumerate() {
                    let d = sq_dist(p, ctr);
                    if d < bd {
                        bd = d;
                        bl = c;
                    }
                }
                if labels[i] != bl {
                    labels[i] = bl;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            let dim = points[0].len();
            let mut sums = vec![vec![0.0; dim]; k];
            let mut counts = vec![0usize; k];
            for (p, &l) in points.iter().zip(&labels) {
                counts[l] += 1;
                for (s, x) in sums[l].iter_mut().zip(p) {
                    *s += x;
                }
            }
            for c in 0..k {
                // empty clusters keep their previous center
                if counts[c] > 0 {
                    centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                }
            }
        }
        let inertia: f64 = points
            .iter()
            .zip(&labels)
            .map(|(p, &l)| sq_dist(p, &centers[l]))
            .sum();
        if best.as_ref().is_none_or(|(bi, _)| inertia < *bi) {
            best = Some((inertia, labels));
        }
    }
    Ok(best.expect("at least one restart").1)
}

/// Clusters the batch into [`SpectralDecomposition::cluster_count`] groups
/// using the row-normalized leading eigenvectors.
pub fn spectral_clustering(decomp: &SpectralDecomposition, seed: u64) -> Result<Vec<usize>> {
    let n = decomp.len();
    let k = decomp.cluster_count();
    if k == 1 {
        return Ok(vec![0; n]);
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|r| {
            let row: Vec<f64> = (0..k).map(|c| decomp.eigenvectors[(r, c)]).collect();
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter().map(|x| x / norm).collect()
            } else {
                row
            }
        })
        .collect();
    kmeans(&rows, k, seed)
}
