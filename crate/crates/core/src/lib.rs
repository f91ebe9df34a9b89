//! Per-head, per-token susceptibilities of a small attention-only
//! transformer, and the tooling to look at them.
//!
//! The crate covers the whole path from raw text to figures:
//!
//! - [`tokenizer`], [`corpus`] and [`patterns`]: byte-level tokenization,
//!   context sampling, bigram statistics and the eight token patterns.
//! - [`model`], [`checkpoint`] and [`trainer`]: a two-layer attention-only
//!   transformer with analytic gradients, its checkpoint format and a
//!   training loop.
//! - [`sampler`] and [`susceptibility`]: localized SGLD restricted to one
//!   head, and the covariance estimator that turns draws into per-token
//!   susceptibilities.
//! - [`analysis`] and [`embedding`]: standardization, PCA, pattern tables
//!   and a UMAP-style layout with principal-axis overlays.
//! - [`render`] and [`pipeline`]: SVG figures and the end-to-end run.

pub mod analysis;
pub mod checkpoint;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod io;
pub mod model;
pub mod patterns;
pub mod pipeline;
pub mod render;
pub mod rng;
pub mod sampler;
pub mod susceptibility;
pub mod synth;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
