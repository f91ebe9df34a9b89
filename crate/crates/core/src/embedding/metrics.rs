//! Embedding quality diagnostics.

use std::collections::HashSet;

use super::knn::{knn_graph, KnnMode};
use crate::error::{Error, Result};

/// Mean over rows of `|kNN_high ∩ kNN_low| / k`, both exact.
pub fn neighborhood_preservation(
    data: &[f64],
    dim: usize,
    embedding: &[f64],
    dims: usize,
    k: usize,
) -> Result<f64> {
    if dim == 0 || dims == 0 || data.len() / dim != embedding.len() / dims {
        return Err(Error::Invalid(
            "matrix and embedding rows do not align".into(),
        ));
    }
    let n = data.len() / dim;
    let high = knn_graph(data, dim, k, KnnMode::Exact, 0)?;
    let low = knn_graph(embedding, dims, k, KnnMode::Exact, 0)?;
    let total: usize = (0..n)
        .map(|i| {
            let a: HashSet<_> = high.neighbors(i).iter().collect();
            low.neighbors(i).iter().filter(|j| a.contains(j)).count()
        })
        .sum();
    Ok(total as f64 / (n * k) as f64)
}

/// Mean silhouette coefficient with Euclidean distance. Singleton clusters
/// contribute 0.
pub fn silhouette(points: &[f64], dims: usize, labels: &[usize]) -> Result<f64> {
    let n = labels.len();
    if dims == 0 || points.len() != n * dims {
        return Err(Error::Invalid("points and labels do not align".into()));
    }
    let n_labels = labels.iter().max().map_or(0, |m| m + 1);
    let sizes = labels.iter().fold(vec![0usize; n_labels], |mut s, &l| {
        s[l] += 1;
        s
    });
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::Undefined("silhouette needs at least two clusters"));
    }
    let p = |i: usize| &points[i * dims..(i + 1) * dims];
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; n_labels];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += super::knn::euclidean(p(i), p(j));
            }
        }
        let own = labels[i];
        if sizes[own] <= 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..n_labels)
            .filter(|&l| l != own && sizes[l] > 0)
            .map(|l| sums[l] / sizes[l] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}
