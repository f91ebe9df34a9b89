//! k-nearest-neighbor graphs: brute force, or NN-descent for large inputs.

use std::collections::HashSet;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Row count above which [`KnnMode::Auto`] switches to NN-descent.
pub const EXACT_LIMIT: usize = 50_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnnMode {
    #[default]
    Auto,
    Exact,
    Approximate,
}

/// Neighbors of every row, nearest first, self excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnGraph {
    pub n: usize,
    pub k: usize,
    /// Row-major `n x k`.
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
    pub exact: bool,
}

impl KnnGraph {
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn neighbor_distances(&self, i: usize) -> &[f64] {
        &self.distances[i * self.k..(i + 1) * self.k]
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// The `k` rows of `data` nearest to `point`, skipping `skip`. Ties are
/// broken by row index.
pub fn nearest_rows(
    data: &[f64],
    dim: usize,
    point: &[f64],
    k: usize,
    skip: Option<usize>,
) -> Vec<(f64, usize)> {
    let n = data.len() / dim;
    let mut all: Vec<(f64, usize)> = (0..n)
        .filter(|&j| Some(j) != skip)
        .map(|j| (euclidean(point, &data[j * dim..(j + 1) * dim]), j))
        .collect();
    let k = k.min(all.len());
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < all.len() {
        all.select_nth_unstable_by(k, cmp);
        all.truncate(k);
    }
    all.sort_by(cmp);
    all
}

pub fn knn_graph(data: &[f64], dim: usize, k: usize, mode: KnnMode, seed: u64) -> Result<KnnGraph> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::Invalid("data does not split into rows".into()));
    }
    let n = data.len() / dim;
    if k == 0 || k >= n {
        return Err(Error::Invalid(format!("k = {k} needs 0 < k < rows = {n}")));
    }
    if !data.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("kNN input".into()));
    }
    let exact = match mode {
        KnnMode::Exact => true,
        KnnMode::Approximate => false,
        KnnMode::Auto => n <= EXACT_LIMIT,
    };
    if exact {
        Ok(exact_knn(data, dim, k))
    } else {
        Ok(nn_descent(data, dim, k, seed))
    }
}

fn exact_knn(data: &[f64], dim: usize, k: usize) -> KnnGraph {
    let n = data.len() / dim;
    let rows: Vec<Vec<(f64, usize)>> = (0..n)
        .into_par_iter()
        .map(|i| nearest_rows(data, dim, &data[i * dim..(i + 1) * dim], k, Some(i)))
        .collect();
    let mut indices = Vec::with_capacity(n * k);
    let mut distances = Vec::with_capacity(n * k);
    for row in rows {
        for (d, j) in row {
            indices.push(j);
            distances.push(d);
        }
    }
    KnnGraph {
        n,
        k,
        indices,
        distances,
        exact: true,
    }
}

/// Sorted bounded neighbor list with "new" flags for NN-descent.
struct Heap {
    items: Vec<(f64, usize, bool)>,
}

impl Heap {
    fn worst(&self) -> f64 {
        self.items.last().map_or(f64::INFINITY, |x| x.0)
    }

    fn push(&mut self, k: usize, d: f64, j: usize) -> bool {
        if self.items.len() == k && d >= self.worst() {
            return false;
        }
        if self.items.iter().any(|x| x.1 == j) {
            return false;
        }
        let pos = self.items.partition_point(|x| (x.0, x.1) < (d, j));
        self.items.insert(pos, (d, j, true));
        self.items.truncate(k);
        true
    }
}

/// NN-descent: start from random neighbors and repeatedly try neighbors of
/// neighbors until almost no list changes.
fn nn_descent(data: &[f64], dim: usize, k: usize, seed: u64) -> KnnGraph {
    let n = data.len() / dim;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut rng = stream_rng(seed, 0);
    let mut heaps: Vec<Heap> = (0..n)
        .map(|i| {
            let mut h = Heap {
                items: Vec::with_capacity(k),
            };
            for j in index::sample(&mut rng, n - 1, k).into_iter() {
                let j = if j >= i { j + 1 } else { j };
                h.push(k, euclidean(row(i), row(j)), j);
            }
            h
        })
        .collect();
    let sample_size = k.min(20);
    for _ in 0..30 {
        // new and old candidates, forward and reverse
        let mut new_c: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut old_c: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            for item in heaps[i].items.iter_mut() {
                if item.2 {
                    if new_c[i].len() < sample_size || rng.gen_bool(0.5) {
                        new_c[i].push(item.1);
                        new_c[item.1].push(i);
                        item.2 = false;
                    }
                } else {
                    old_c[i].push(item.1);
                    old_c[item.1].push(i);
                }
            }
        }
        let mut updates = 0usize;
        for i in 0..n {
            let mut news: Vec<usize> = new_c[i].clone();
            news.sort_unstable();
            news.dedup();
            let mut olds: Vec<usize> = old_c[i].clone();
            olds.sort_unstable();
            olds.dedup();
            for (a_pos, &a) in news.iter().enumerate() {
                for &b in news[a_pos + 1..].iter().chain(olds.iter()) {
                    if a == b {
                        continue;
                    }
                    let d = euclidean(row(a), row(b));
                    updates += heaps[a].push(k, d, b) as usize;
                    updates += heaps[b].push(k, d, a) as usize;
                }
            }
        }
        if (updates as f64) < 0.001 * (n * k) as f64 {
            break;
        }
    }
    let mut indices = Vec::with_capacity(n * k);
    let mut distances = Vec::with_capacity(n * k);
    for h in heaps {
        let mut seen = HashSet::new();
        for (d, j, _) in h.items {
            if seen.insert(j) {
                indices.push(j);
                distances.push(d);
            }
        }
    }
    KnnGraph {
        n,
        k,
        indices,
        distances,
        exact: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random(n: usize, dim: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn collinear_middle_point_picks_the_nearer_end() {
        let g = knn_graph(&[0.0, 1.0, 3.0], 1, 1, KnnMode::Exact, 0).unwrap();
        assert_eq!(g.neighbors(1), &[0]);
    }

    #[test]
    fn duplicates_are_mutual_neighbors_at_zero() {
        let g = knn_graph(&[1.0, 1.0, 1.0, 1.0, 5.0, 5.0], 2, 1, KnnMode::Exact, 0).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
        assert_eq!(g.neighbor_distances(0), &[0.0]);
    }

    #[test]
    fn k_must_be_below_row_count() {
        assert!(knn_graph(&[0.0, 1.0], 1, 2, KnnMode::Exact, 0).is_err());
    }

    #[test]
    fn nn_descent_recall_is_high() {
        let data = random(1500, 5, 3);
        let exact = knn_graph(&data, 5, 10, KnnMode::Exact, 0).unwrap();
        let approx = knn_graph(&data, 5, 10, KnnMode::Approximate, 1).unwrap();
        assert!(!approx.exact);
        let mut hits = 0;
        for i in 0..1500 {
            let truth: HashSet<_> = exact.neighbors(i).iter().collect();
            hits += approx
                .neighbors(i)
                .iter()
                .filter(|j| truth.contains(j))
                .count();
        }
        let recall = hits as f64 / (1500 * 10) as f64;
        assert!(recall >= 0.95, "{recall}");
    }
}
