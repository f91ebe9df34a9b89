//! Smooth-kNN calibration and the symmetric fuzzy neighbor graph.

use serde::{Deserialize, Serialize};

use super::knn::KnnGraph;
use crate::error::{Error, Result};

pub const SMOOTH_KNN_TOLERANCE: f64 = 1e-5;
pub const SMOOTH_KNN_MAX_ITER: usize = 64;

/// Outcome of calibrating one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothKnn {
    pub rho: f64,
    pub sigma: f64,
    /// `|sum_j exp(-max(0, d_j - rho) / sigma) - log2(k)|` at the returned sigma.
    pub residual: f64,
    pub converged: bool,
}

fn membership_sum(dists: &[f64], rho: f64, sigma: f64) -> f64 {
    dists
        .iter()
        .map(|&d| (-(d - rho).max(0.0) / sigma).exp())
        .sum()
}

/// Find `rho` (smallest positive distance) and `sigma` by bisection so the
/// memberships sum to `log2(k)`, with `k = dists.len()`.
pub fn smooth_knn(dists: &[f64]) -> SmoothKnn {
    let k = dists.len();
    let target = (k as f64).log2();
    let rho = dists
        .iter()
        .copied()
        .filter(|&d| d > 0.0)
        .fold(f64::INFINITY, f64::min);
    let rho = if rho.is_finite() { rho } else { 0.0 };
    let mut lo = 0.0;
    let mut hi = f64::INFINITY;
    let mut sigma = 1.0;
    let mut best = (f64::INFINITY, sigma);
    for _ in 0..SMOOTH_KNN_MAX_ITER {
        let s = membership_sum(dists, rho, sigma);
        let r = (s - target).abs();
        if r < best.0 {
            best = (r, sigma);
        }
        if r < SMOOTH_KNN_TOLERANCE {
            return SmoothKnn {
                rho,
                sigma,
                residual: r,
                converged: true,
            };
        }
        if s > target {
            hi = sigma;
            sigma = 0.5 * (lo + hi);
        } else {
            lo = sigma;
            sigma = if hi.is_finite() {
                0.5 * (lo + hi)
            } else {
                sigma * 2.0
            };
        }
    }
    // Fall back to a scale tied to the mean neighbor distance.
    let mean = dists.iter().sum::<f64>() / k.max(1) as f64;
    let fallback = if best.0.is_finite() && best.1 > 0.0 {
        best.1
    } else {
        (1e-3 * mean).max(1e-12)
    };
    SmoothKnn {
        rho,
        sigma: fallback,
        residual: (membership_sum(dists, rho, fallback) - target).abs(),
        converged: false,
    }
}

/// Probabilistic OR of two directed memberships.
pub fn fuzzy_union(a: f64, b: f64) -> f64 {
    a + b - a * b
}

/// Symmetric weighted graph; each undirected edge is stored once with
/// `i < j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyGraph {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
    pub rho: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Nodes whose bisection did not reach the tolerance.
    pub sigma_fallback: Vec<bool>,
    pub residuals: Vec<f64>,
}

impl FuzzyGraph {
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.edges
            .binary_search_by(|e| (e.0, e.1).cmp(&(a, b)))
            .map_or(0.0, |p| self.edges[p].2)
    }

    /// Connected-component label per node, labels in order of first node.
    pub fn components(&self) -> Vec<usize> {
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for &(i, j, _) in &self.edges {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut label = vec![usize::MAX; self.n];
        let mut next = 0;
        let mut out = vec![0; self.n];
        for i in 0..self.n {
            let r = find(&mut parent, i);
            if label[r] == usize::MAX {
                label[r] = next;
                next += 1;
            }
            out[i] = label[r];
        }
        out
    }
}

pub fn fuzzy_graph(knn: &KnnGraph) -> Result<FuzzyGraph> {
    let n = knn.n;
    if knn.indices.len() != n * knn.k {
        return Err(Error::Invalid("kNN graph has ragged rows".into()));
    }
    let mut rho = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    let mut fallback = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    let mut directed: Vec<(usize, usize, f64)> = Vec::with_capacity(n * knn.k);
    for i in 0..n {
        let d = knn.neighbor_distances(i);
        let s = smooth_knn(d);
        if !s.converged {
            log::warn!("smooth kNN did not converge for node {i}; using fallback sigma");
        }
        for (&j, &dij) in knn.neighbors(i).iter().zip(d) {
            let w = (-(dij - s.rho).max(0.0) / s.sigma).exp();
            directed.push((i, j, w));
        }
        rho.push(s.rho);
        sigma.push(s.sigma);
        fallback.push(!s.converged);
        residuals.push(s.residual);
    }
    // merge (i, j) with (j, i)
    let mut keyed: Vec<((usize, usize), f64, bool)> = directed
        .into_iter()
        .filter(|&(i, j, _)| i != j)
        .map(|(i, j, w)| ((i.min(j), i.max(j)), w, i < j))
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then(b.2.cmp(&a.2)));
    let mut edges: Vec<(usize, usize, f64)> = Vec::with_capacity(keyed.len());
    let mut idx = 0;
    while idx < keyed.len() {
        let key = keyed[idx].0;
        let mut forward = 0.0;
        let mut backward = 0.0;
        while idx < keyed.len() && keyed[idx].0 == key {
            if keyed[idx].2 {
                forward = keyed[idx].1;
            } else {
                backward = keyed[idx].1;
            }
            idx += 1;
        }
        let w = fuzzy_union(forward, backward);
        if w > 0.0 {
            edges.push((key.0, key.1, w.min(1.0)));
        }
    }
    Ok(FuzzyGraph {
        n,
        edges,
        rho,
        sigma,
        sigma_fallback: fallback,
        residuals,
    })
}
