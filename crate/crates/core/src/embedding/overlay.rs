//! Projection of principal axes into a fitted embedding.

use serde::{Deserialize, Serialize};

use super::fuzzy::smooth_knn;
use super::knn::nearest_rows;
use super::layout::attraction;
use super::EmbeddingResult;
use crate::analysis::{PCAResult, Standardized};
use crate::error::{Error, Result};

/// Recorded in output metadata next to every overlay.
pub const OVERLAY_METHOD: &str = "weighted-knn placement + attraction-only refinement";

const WEIGHT_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisOverlay {
    /// Zero-based principal component.
    pub pc: usize,
    /// Score along the axis for each placed point.
    pub t: Vec<f64>,
    /// Row-major `t.len() x dims`.
    pub coords: Vec<f64>,
    pub dims: usize,
    /// Scores of synthesized points dropped for lack of neighbors.
    pub omitted: Vec<f64>,
    pub method: String,
}

/// Place new points (row-major, `dim` columns) into `fit`, whose rows came
/// from `data`. Returns `None` for a point whose neighbor weights all fall
/// below the floor.
pub fn place_points(
    fit: &EmbeddingResult,
    data: &[f64],
    dim: usize,
    points: &[f64],
) -> Result<Vec<Option<Vec<f64>>>> {
    if dim == 0 || data.len() != fit.n * dim || points.len() % dim != 0 {
        return Err(Error::Invalid(
            "points do not match the fitted matrix".into(),
        ));
    }
    let dims = fit.dims;
    let k = fit.config.n_neighbors.min(fit.n);
    let mut placed = Vec::with_capacity(points.len() / dim);
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    for (p, point) in points.chunks(dim).enumerate() {
        let nn = nearest_rows(data, dim, point, k, None);
        let dists: Vec<f64> = nn.iter().map(|x| x.0).collect();
        let s = smooth_knn(&dists);
        let weights: Vec<f64> = dists
            .iter()
            .map(|&d| (-(d - s.rho).max(0.0) / s.sigma).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        if !(total > WEIGHT_FLOOR) {
            placed.push(None);
            continue;
        }
        let mut at = vec![0.0; dims];
        for ((_, j), w) in nn.iter().zip(&weights) {
            for d in 0..dims {
                at[d] += w / total * fit.point(*j)[d];
            }
            edges.push((p, *j, *w));
        }
        placed.push(Some(at));
    }

    let epochs = fit.config.transform_epochs;
    if epochs > 0 {
        let w_max = edges.iter().fold(0.0f64, |m, e| m.max(e.2));
        let floor = w_max / epochs as f64;
        let schedule: Vec<(usize, usize, f64)> = edges
            .iter()
            .filter(|e| e.2 >= floor)
            .map(|&(p, j, w)| (p, j, w_max / w))
            .collect();
        let mut next: Vec<f64> = schedule.iter().map(|e| e.2).collect();
        for epoch in 0..epochs {
            let alpha = fit.config.learning_rate / 4.0 * (1.0 - epoch as f64 / epochs as f64);
            for (idx, &(p, j, period)) in schedule.iter().enumerate() {
                if next[idx] > epoch as f64 {
                    continue;
                }
                next[idx] += period;
                let Some(at) = placed[p].as_mut() else {
                    continue;
                };
                let target = fit.point(j);
                let dist_sq: f64 = at.iter().zip(target).map(|(x, y)| (x - y) * (x - y)).sum();
                let coeff = attraction(fit.a, fit.b, dist_sq);
                for d in 0..dims {
                    at[d] += (coeff * (at[d] - target[d])).clamp(-4.0, 4.0) * alpha;
                }
            }
        }
    }
    Ok(placed)
}

/// `points` evenly spaced multiples of PC `pc`'s loading through the
/// standardized mean, spanning the observed score range, placed into `fit`.
pub fn embed_axis_overlay(
    fit: &EmbeddingResult,
    std: &Standardized,
    pca: &PCAResult,
    pc: usize,
    points: usize,
) -> Result<AxisOverlay> {
    if std.columns != pca.columns || std.n_rows != pca.n_rows || fit.n != std.n_rows {
        return Err(Error::Invalid(
            "embedding, matrix and PCA do not share rows and columns".into(),
        ));
    }
    if pc >= pca.n_components() {
        return Err(Error::Invalid(format!("no principal component {pc}")));
    }
    let mut out = AxisOverlay {
        pc,
        t: Vec::new(),
        coords: Vec::new(),
        dims: fit.dims,
        omitted: Vec::new(),
        method: OVERLAY_METHOD.to_string(),
    };
    if points == 0 {
        return Ok(out);
    }
    let scores = pca.component_scores(pc);
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ts: Vec<f64> = if points == 1 {
        vec![0.5 * (lo + hi)]
    } else {
        (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect()
    };
    let loading = pca.loading(pc);
    let synth: Vec<f64> = ts
        .iter()
        .flat_map(|&t| loading.iter().map(move |l| t * l))
        .collect();
    let placed = place_points(fit, &std.data, std.n_cols(), &synth)?;
    for (t, p) in ts.into_iter().zip(placed) {
        match p {
            Some(c) => {
                out.t.push(t);
                out.coords.extend(c);
            }
            None => out.omitted.push(t),
        }
    }
    Ok(out)
}
