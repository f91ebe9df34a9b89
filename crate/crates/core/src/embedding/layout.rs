//! Curve fit, spectral initialization and the SGD layout.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::fuzzy::FuzzyGraph;
use super::{EmbedConfig, EmbeddingResult};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Target membership curve: 1 inside `min_dist`, exponential decay beyond.
pub fn curve_target(x: f64, min_dist: f64, spread: f64) -> f64 {
    if x < min_dist {
        1.0
    } else {
        (-(x - min_dist) / spread).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbFit {
    pub a: f64,
    pub b: f64,
    /// Sum of squared residuals on the fitting grid.
    pub sse: f64,
    pub iterations: usize,
}

fn ab_grid(spread: f64) -> Vec<f64> {
    let hi = 3.0 * spread;
    (0..300).map(|i| hi * i as f64 / 299.0).collect()
}

fn ab_sse(a: f64, b: f64, xs: &[f64], ys: &[f64]) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = 1.0 / (1.0 + a * x.powf(2.0 * b)) - y;
            r * r
        })
        .sum()
}

/// Least-squares fit of `1 / (1 + a x^(2b))` to [`curve_target`] on 300
/// points of `[0, 3 spread]`, by Levenberg-Marquardt.
pub fn fit_ab(min_dist: f64, spread: f64) -> AbFit {
    let xs = ab_grid(spread);
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| curve_target(x, min_dist, spread))
        .collect();
    let (mut a, mut b) = (1.8, 0.8);
    let mut sse = ab_sse(a, b, &xs, &ys);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    for it in 0..500 {
        iterations = it + 1;
        // normal equations J^T J and J^T r
        let (mut jaa, mut jab, mut jbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(&ys) {
            if x <= 0.0 {
                continue;
            }
            let p = x.powf(2.0 * b);
            let den = 1.0 + a * p;
            let f = 1.0 / den;
            let r = f - y;
            let da = -p / (den * den);
            let db = -a * p * 2.0 * x.ln() / (den * den);
            jaa += da * da;
            jab += da * db;
            jbb += db * db;
            ga += da * r;
            gb += db * r;
        }
        let mut improved = false;
        for _ in 0..30 {
            let m00 = jaa * (1.0 + lambda);
            let m11 = jbb * (1.0 + lambda);
            let det = m00 * m11 - jab * jab;
            if det.abs() < 1e-300 {
                lambda *= 10.0;
                continue;
            }
            let step_a = -(m11 * ga - jab * gb) / det;
            let step_b = -(m00 * gb - jab * ga) / det;
            let (na, nb) = (a + step_a, b + step_b);
            if na > 0.0 && nb > 0.0 {
                let nsse = ab_sse(na, nb, &xs, &ys);
                if nsse <= sse {
                    let rel = (sse - nsse) / sse.max(1e-300);
                    a = na;
                    b = nb;
                    sse = nsse;
                    lambda = (lambda * 0.3).max(1e-12);
                    improved = rel > 1e-15 || step_a.abs() + step_b.abs() > 1e-12;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    AbFit {
        a,
        b,
        sse,
        iterations,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitKind {
    /// Spectral layout; `fallback_components` were too small or failed and
    /// were placed randomly.
    Spectral {
        fallback_components: usize,
    },
    Random,
}

struct Adjacency {
    nbrs: Vec<Vec<(usize, f64)>>,
}

impl Adjacency {
    fn new(graph: &FuzzyGraph) -> Self {
        let mut nbrs = vec![Vec::new(); graph.n];
        for &(i, j, w) in &graph.edges {
            nbrs[i].push((j, w));
            nbrs[j].push((i, w));
        }
        Self { nbrs }
    }
}

fn orthonormalize(x: &mut DMatrix<f64>) {
    let qr = x.clone().qr();
    *x = qr.q();
}

/// Top nontrivial eigenvectors of the normalized adjacency of one component.
/// Returns `None` when the iteration produces non-finite values.
fn component_spectral(
    adj: &Adjacency,
    members: &[usize],
    dims: usize,
    seed: u64,
) -> Option<DMatrix<f64>> {
    let m = members.len();
    let mut local = vec![usize::MAX; adj.nbrs.len()];
    for (li, &g) in members.iter().enumerate() {
        local[g] = li;
    }
    let deg: Vec<f64> = members
        .iter()
        .map(|&g| adj.nbrs[g].iter().map(|x| x.1).sum())
        .collect();
    if deg.iter().any(|&d| d <= 0.0) {
        return None;
    }
    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut trivial: Vec<f64> = deg.iter().map(|d| d.sqrt()).collect();
    let norm = trivial.iter().map(|v| v * v).sum::<f64>().sqrt();
    trivial.iter_mut().for_each(|v| *v /= norm);

    if m <= 400 {
        let mut dense = DMatrix::<f64>::zeros(m, m);
        for (li, &g) in members.iter().enumerate() {
            for &(j, w) in &adj.nbrs[g] {
                dense[(li, local[j])] += w * inv_sqrt[li] * inv_sqrt[local[j]];
            }
        }
        let eig = SymmetricEigen::new(dense);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&p, &q| eig.eigenvalues[q].total_cmp(&eig.eigenvalues[p]));
        let cols: Vec<_> = order[1..=dims]
            .iter()
            .map(|&c| eig.eigenvectors.column(c).into_owned())
            .collect();
        let out = DMatrix::from_columns(&cols);
        return out.iter().all(|v| v.is_finite()).then_some(out);
    }

    let block = (dims + 4).min(m - 1);
    let mut rng = stream_rng(seed, 3);
    let mut x = DMatrix::<f64>::from_fn(m, block, |_, _| rng.gen_range(-1.0..1.0));
    let deflate = |x: &mut DMatrix<f64>| {
        for c in 0..x.ncols() {
            let dot: f64 = (0..m).map(|r| x[(r, c)] * trivial[r]).sum();
            for r in 0..m {
                x[(r, c)] -= dot * trivial[r];
            }
        }
    };
    let apply = |x: &DMatrix<f64>| {
        let mut y = DMatrix::<f64>::zeros(m, x.ncols());
        for (li, &g) in members.iter().enumerate() {
            for &(j, w) in &adj.nbrs[g] {
                let lj = local[j];
                let s = w * inv_sqrt[li] * inv_sqrt[lj];
                for c in 0..x.ncols() {
                    y[(li, c)] += s * x[(lj, c)];
                }
            }
        }
        // shift to (I + N) / 2 so every eigenvalue is nonnegative
        (y + x) * 0.5
    };
    deflate(&mut x);
    orthonormalize(&mut x);
    let mut prev = vec![0.0; block];
    for _ in 0..3000 {
        let mut y = apply(&x);
        deflate(&mut y);
        let ritz: Vec<f64> = (0..block).map(|c| x.column(c).dot(&y.column(c))).collect();
        x = y;
        orthonormalize(&mut x);
        let delta = ritz
            .iter()
            .zip(&prev)
            .take(dims)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        prev = ritz;
        if !x.iter().all(|v| v.is_finite()) {
            return None;
        }
        if delta < 1e-10 {
            break;
        }
    }
    // Rayleigh-Ritz inside the block
    let ax = apply(&x);
    let h = x.transpose() * &ax;
    let h = (&h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..block).collect();
    order.sort_by(|&p, &q| eig.eigenvalues[q].total_cmp(&eig.eigenvalues[p]));
    let cols: Vec<_> = order[..dims]
        .iter()
        .map(|&c| &x * eig.eigenvectors.column(c))
        .collect();
    let out = DMatrix::from_columns(&cols);
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// Initial coordinates (row-major `n x dims`): spectral per connected
/// component, components laid side by side with extents scaled by size.
pub fn spectral_layout(graph: &FuzzyGraph, dims: usize, seed: u64) -> (Vec<f64>, InitKind) {
    let n = graph.n;
    let adj = Adjacency::new(graph);
    let labels = graph.components();
    let n_comp = labels.iter().max().map_or(0, |&m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_comp];
    for (i, &c) in labels.iter().enumerate() {
        members[c].push(i);
    }
    let mut rng = stream_rng(seed, 2);
    let mut coords = vec![0.0; n * dims];
    let mut fallback = 0;
    let mut cursor = 0.0;
    let mut prev_radius = 0.0;
    for (c, mem) in members.iter().enumerate() {
        let radius = (mem.len() as f64 / n as f64).powf(1.0 / dims as f64);
        let spectral = if mem.len() > dims + 1 {
            component_spectral(&adj, mem, dims, seed ^ c as u64)
        } else {
            None
        };
        let local: Vec<f64> = match spectral {
            Some(v) => {
                let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
                (0..mem.len())
                    .flat_map(|r| (0..dims).map(move |d| (r, d)))
                    .map(|(r, d)| v[(r, d)] / max)
                    .collect()
            }
            None => {
                fallback += 1;
                (0..mem.len() * dims)
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect()
            }
        };
        if c > 0 {
            cursor += prev_radius + radius + 0.5;
        }
        prev_radius = radius;
        for (li, &g) in mem.iter().enumerate() {
            for d in 0..dims {
                let offset = if d == 0 { cursor } else { 0.0 };
                coords[g * dims + d] = offset + radius * local[li * dims + d];
            }
        }
    }
    if fallback == n_comp {
        let coords = (0..n * dims).map(|_| rng.gen_range(-10.0..10.0)).collect();
        return (coords, InitKind::Random);
    }
    let max = coords
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs()))
        .max(1e-300);
    let noise = Normal::new(0.0, 1e-4).unwrap();
    for v in coords.iter_mut() {
        *v = *v * 10.0 / max + noise.sample(&mut rng);
    }
    (
        coords,
        InitKind::Spectral {
            fallback_components: fallback,
        },
    )
}

/// Rescale every axis to `[0, 10]`.
fn rescale(coords: &mut [f64], dims: usize) {
    for d in 0..dims {
        let (lo, hi) = coords
            .iter()
            .skip(d)
            .step_by(dims)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
                (l.min(v), h.max(v))
            });
        let span = (hi - lo).max(1e-12);
        for v in coords.iter_mut().skip(d).step_by(dims) {
            *v = 10.0 * (*v - lo) / span;
        }
    }
}

fn clip(x: f64) -> f64 {
    x.clamp(-4.0, 4.0)
}

/// Directed edge list with its sampling period, dropping edges too weak to
/// be sampled within `epochs`.
pub(crate) fn sampling_schedule(
    edges: &[(usize, usize, f64)],
    epochs: usize,
) -> Vec<(usize, usize, f64)> {
    let w_max = edges.iter().fold(0.0f64, |m, e| m.max(e.2));
    if w_max <= 0.0 {
        return Vec::new();
    }
    let floor = w_max / epochs.max(1) as f64;
    let mut out = Vec::with_capacity(2 * edges.len());
    for &(i, j, w) in edges {
        if w >= floor {
            out.push((i, j, w_max / w));
            out.push((j, i, w_max / w));
        }
    }
    out
}

pub(crate) fn attraction(a: f64, b: f64, dist_sq: f64) -> f64 {
    if dist_sq > 0.0 {
        -2.0 * a * b * dist_sq.powf(b - 1.0) / (a * dist_sq.powf(b) + 1.0)
    } else {
        0.0
    }
}

/// Spectral initialization followed by SGD with negative sampling.
pub fn optimize_layout(graph: FuzzyGraph, cfg: &EmbedConfig) -> Result<EmbeddingResult> {
    cfg.validate()?;
    let n = graph.n;
    let dims = cfg.dims;
    if n < 2 {
        return Err(Error::Invalid("embedding needs at least two rows".into()));
    }
    let AbFit { a, b, .. } = fit_ab(cfg.min_dist, cfg.spread);
    let epochs = cfg.epochs_for(n);
    let (mut y, init) = spectral_layout(&graph, dims, cfg.seed);
    rescale(&mut y, dims);

    let schedule = sampling_schedule(&graph.edges, epochs);
    let neg_rate = cfg.negative_sample_rate as f64;
    let mut next_sample: Vec<f64> = schedule.iter().map(|e| e.2).collect();
    let mut next_negative: Vec<f64> = schedule.iter().map(|e| e.2 / neg_rate).collect();
    let mut rng = stream_rng(cfg.seed, 1);
    let mut cur = vec![0.0; dims];
    for epoch in 0..epochs {
        let alpha = cfg.learning_rate * (1.0 - epoch as f64 / epochs as f64);
        let e = epoch as f64;
        for (idx, &(i, j, period)) in schedule.iter().enumerate() {
            if next_sample[idx] > e {
                continue;
            }
            let dist_sq: f64 = (0..dims)
                .map(|d| (y[i * dims + d] - y[j * dims + d]).powi(2))
                .sum();
            let coeff = attraction(a, b, dist_sq);
            for d in 0..dims {
                let g = clip(coeff * (y[i * dims + d] - y[j * dims + d])) * alpha;
                y[i * dims + d] += g;
                y[j * dims + d] -= g;
            }
            next_sample[idx] += period;

            let period_neg = period / neg_rate;
            let n_neg = ((e - next_negative[idx]) / period_neg).floor().max(0.0) as usize;
            cur.copy_from_slice(&y[i * dims..(i + 1) * dims]);
            for _ in 0..n_neg {
                let k = rng.gen_range(0..n);
                if k == i {
                    continue;
                }
                let dist_sq: f64 = (0..dims).map(|d| (cur[d] - y[k * dims + d]).powi(2)).sum();
                let coeff = if dist_sq > 0.0 {
                    2.0 * b / ((0.001 + dist_sq) * (a * dist_sq.powf(b) + 1.0))
                } else {
                    0.0
                };
                for d in 0..dims {
                    let g = if coeff > 0.0 {
                        clip(coeff * (cur[d] - y[k * dims + d]))
                    } else {
                        4.0
                    };
                    cur[d] += g * alpha;
                }
            }
            y[i * dims..(i + 1) * dims].copy_from_slice(&cur);
            next_negative[idx] += n_neg as f64 * period_neg;
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "embedding coordinates at epoch {epoch}"
            )));
        }
    }
    for (d, &f) in cfg.flip.iter().enumerate() {
        if f {
            y.iter_mut().skip(d).step_by(dims).for_each(|v| *v = -*v);
        }
    }
    Ok(EmbeddingResult {
        n,
        dims,
        coords: y,
        graph,
        config: cfg.clone(),
        seed: cfg.seed,
        a,
        b,
        init,
    })
}
