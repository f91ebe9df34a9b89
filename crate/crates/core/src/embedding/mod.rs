//! Nonlinear 2D/3D embedding of standardized susceptibility vectors.
//!
//! The construction follows the usual UMAP recipe: an exact (or NN-descent)
//! kNN graph, per-node smooth-kNN calibration, a fuzzy union of directed
//! memberships, spectral initialization, and SGD with negative sampling under
//! `1 / (1 + a d^(2b))`. Principal axes can then be projected into a fitted
//! embedding by kNN placement with a short attraction-only refinement.

mod fuzzy;
mod knn;
mod layout;
mod metrics;
mod overlay;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use fuzzy::{
    fuzzy_graph, fuzzy_union, smooth_knn, FuzzyGraph, SmoothKnn, SMOOTH_KNN_MAX_ITER,
    SMOOTH_KNN_TOLERANCE,
};
pub use knn::{euclidean, knn_graph, nearest_rows, KnnGraph, KnnMode, EXACT_LIMIT};
pub use layout::{curve_target, fit_ab, optimize_layout, spectral_layout, AbFit, InitKind};
pub use metrics::{neighborhood_preservation, silhouette};
pub use overlay::{embed_axis_overlay, place_points, AxisOverlay, OVERLAY_METHOD};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub spread: f64,
    pub dims: usize,
    /// `None` picks 500 for up to 10k rows, 200 above.
    pub epochs: Option<usize>,
    pub negative_sample_rate: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub metric: Metric,
    pub knn_mode: KnnMode,
    /// Attraction-only epochs used when placing new points.
    pub transform_epochs: usize,
    /// Per-axis sign flips applied after layout.
    pub flip: Vec<bool>,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            n_neighbors: 45,
            min_dist: 0.1,
            spread: 1.0,
            dims: 2,
            epochs: None,
            negative_sample_rate: 5,
            learning_rate: 1.0,
            seed: 0,
            metric: Metric::Euclidean,
            knn_mode: KnnMode::Auto,
            transform_epochs: 30,
            flip: Vec::new(),
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_neighbors < 2 {
            return Err(Error::Config("n_neighbors must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.min_dist) {
            return Err(Error::Config("min_dist must lie in [0, 1)".into()));
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) || self.min_dist > self.spread {
            return Err(Error::Config(
                "spread must be positive and at least min_dist".into(),
            ));
        }
        if !(self.dims == 2 || self.dims == 3) {
            return Err(Error::Config("dims must be 2 or 3".into()));
        }
        if self.negative_sample_rate == 0 {
            return Err(Error::Config(
                "negative_sample_rate must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.flip.len() > self.dims {
            return Err(Error::Config(
                "more axis flips than output dimensions".into(),
            ));
        }
        Ok(())
    }

    pub fn epochs_for(&self, n: usize) -> usize {
        self.epochs.unwrap_or(if n <= 10_000 { 500 } else { 200 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingResult {
    pub n: usize,
    pub dims: usize,
    /// Row-major `n x dims`.
    pub coords: Vec<f64>,
    pub graph: FuzzyGraph,
    pub config: EmbedConfig,
    pub seed: u64,
    pub a: f64,
    pub b: f64,
    pub init: InitKind,
}

impl EmbeddingResult {
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dims..(i + 1) * self.dims]
    }

    /// Largest distance between two embedded points along any axis-aligned
    /// bounding-box diagonal.
    pub fn diameter(&self) -> f64 {
        let mut lo = vec![f64::INFINITY; self.dims];
        let mut hi = vec![f64::NEG_INFINITY; self.dims];
        for p in self.coords.chunks(self.dims) {
            for d in 0..self.dims {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        lo.iter()
            .zip(&hi)
            .map(|(l, h)| (h - l) * (h - l))
            .sum::<f64>()
            .sqrt()
    }
}

/// kNN graph, fuzzy graph and layout of row-major `data` with `dim` columns.
pub fn embed(data: &[f64], dim: usize, cfg: &EmbedConfig) -> Result<EmbeddingResult> {
    cfg.validate()?;
    let knn = knn_graph(data, dim, cfg.n_neighbors, cfg.knn_mode, cfg.seed)?;
    let graph = fuzzy_graph(&knn)?;
    optimize_layout(graph, cfg)
}
