//! Attention-only transformer: configuration, flat parameter layout and
//! head components.
//!
//! Parameters live in one flat `f64` vector. The layout is
//!
//! ```text
//! embed [V x d] | pos_embed [K x d] |
//!   per layer: ln.gain [d] ln.bias [d] | per head: q [d x dh] k [d x dh] v [d x dh] o [dh x d]
//! ln_final.gain [d] | ln_final.bias [d] | unembed [d x V]
//! ```
//!
//! with layer-norm segments omitted when layer norm is disabled. A head's
//! four matrices are contiguous, so a head component is a single range.

mod cache;
mod circuits;
mod linalg;
mod transformer;

use std::fmt;
use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};

pub use cache::ComponentEvaluator;
pub use circuits::{head_attention_scores, HeadScores};
pub use transformer::{LossRecord, Transformer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalEncoding {
    Learned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub heads_per_layer: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub vocab_size: usize,
    pub max_context: usize,
    #[serde(default = "default_true")]
    pub layernorm: bool,
    #[serde(default = "default_positional")]
    pub positional: PositionalEncoding,
}

fn default_true() -> bool {
    true
}

fn default_positional() -> PositionalEncoding {
    PositionalEncoding::Learned
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            heads_per_layer: 8,
            d_model: 64,
            d_head: 8,
            vocab_size: 512,
            max_context: 64,
            layernorm: true,
            positional: PositionalEncoding::Learned,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::Config("n_layers must be at least 1".into()));
        }
        if self.heads_per_layer == 0 || self.d_head == 0 {
            return Err(Error::Config(
                "heads_per_layer and d_head must be positive".into(),
            ));
        }
        if self.d_model != self.heads_per_layer * self.d_head {
            return Err(Error::Config(format!(
                "d_model {} != heads_per_layer {} x d_head {}",
                self.d_model, self.heads_per_layer, self.d_head
            )));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("vocab_size must be at least 2".into()));
        }
        if self.max_context == 0 {
            return Err(Error::Config("max_context must be positive".into()));
        }
        Ok(())
    }

    pub fn n_heads(&self) -> usize {
        self.n_layers * self.heads_per_layer
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadOffsets {
    pub q: usize,
    pub k: usize,
    pub v: usize,
    pub o: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerOffsets {
    pub ln_gain: Option<usize>,
    pub ln_bias: Option<usize>,
    pub heads: Vec<HeadOffsets>,
}

/// Offsets of every parameter block for one configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub embed: usize,
    pub pos: usize,
    pub layers: Vec<LayerOffsets>,
    pub ln_final_gain: Option<usize>,
    pub ln_final_bias: Option<usize>,
    pub unembed: usize,
    pub total: usize,
    pub segments: Vec<Segment>,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let dh = cfg.d_head;
        let mut segments = Vec::new();
        let mut cursor = 0usize;
        let mut push = |name: String, len: usize| {
            let start = cursor;
            segments.push(Segment { name, start, len });
            cursor += len;
            start
        };
        let embed = push("embed".into(), cfg.vocab_size * d);
        let pos = push("pos_embed".into(), cfg.max_context * d);
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let (ln_gain, ln_bias) = if cfg.layernorm {
                (
                    Some(push(format!("blocks.{l}.ln.gain"), d)),
                    Some(push(format!("blocks.{l}.ln.bias"), d)),
                )
            } else {
                (None, None)
            };
            let heads = (0..cfg.heads_per_layer)
                .map(|h| HeadOffsets {
                    q: push(format!("blocks.{l}.head{h}.q"), d * dh),
                    k: push(format!("blocks.{l}.head{h}.k"), d * dh),
                    v: push(format!("blocks.{l}.head{h}.v"), d * dh),
                    o: push(format!("blocks.{l}.head{h}.o"), dh * d),
                })
                .collect();
            layers.push(LayerOffsets {
                ln_gain,
                ln_bias,
                heads,
            });
        }
        let (ln_final_gain, ln_final_bias) = if cfg.layernorm {
            (
                Some(push("ln_final.gain".into(), d)),
                Some(push("ln_final.bias".into(), d)),
            )
        } else {
            (None, None)
        };
        let unembed = push("unembed".into(), d * cfg.vocab_size);
        Ok(Self {
            embed,
            pos,
            layers,
            ln_final_gain,
            ln_final_bias,
            unembed,
            total: cursor,
            segments,
        })
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }
}

/// Flat model weights together with their named segment table.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub segments: Vec<Segment>,
}

impl ParamVector {
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        let layout = Layout::new(cfg)?;
        Ok(Self {
            values: vec![0.0; layout.total],
            segments: layout.segments,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.segments
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.values[s.range()])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.segments.iter().find(|s| s.name == name)?.range();
        Some(&mut self.values[range])
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Segments must tile `0..len` in order.
    pub fn check_segments(&self) -> Result<()> {
        let mut cursor = 0;
        for s in &self.segments {
            if s.start != cursor || s.len == 0 {
                return Err(Error::format(
                    "segment table",
                    format!("gap or overlap at {}", s.name),
                ));
            }
            cursor += s.len;
        }
        if cursor != self.values.len() {
            return Err(Error::format(
                "segment table",
                format!("covers {cursor} of {} values", self.values.len()),
            ));
        }
        Ok(())
    }
}

/// Draw a scaled-normal initialization, rounded to `f32` precision so the
/// checkpoint format stores it exactly. Every head draws from its own
/// stream keyed by (layer, head).
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamVector> {
    let layout = Layout::new(cfg)?;
    let mut values = vec![0.0; layout.total];
    let d = cfg.d_model as f64;
    let dh = cfg.d_head as f64;
    let fill = |slot: &mut [f64], std: f64, stream: &[u64]| {
        let mut rng = stream_rng(derive_seed(seed, stream), 0);
        for v in slot.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = ((z * std) as f32) as f64;
        }
    };
    let vocab_d = cfg.vocab_size * cfg.d_model;
    fill(&mut values[layout.embed..layout.embed + vocab_d], 0.5, &[0]);
    fill(
        &mut values[layout.pos..layout.pos + cfg.max_context * cfg.d_model],
        0.1,
        &[1],
    );
    let in_std = 1.0 / d.sqrt();
    let out_std =
        1.0 / (dh * cfg.heads_per_layer as f64).sqrt() / (2.0 * cfg.n_layers as f64).sqrt();
    let block = cfg.d_model * cfg.d_head;
    for (l, layer) in layout.layers.iter().enumerate() {
        if let (Some(g), Some(b)) = (layer.ln_gain, layer.ln_bias) {
            values[g..g + cfg.d_model].fill(1.0);
            values[b..b + cfg.d_model].fill(0.0);
        }
        for (h, head) in layer.heads.iter().enumerate() {
            let mut rng = stream_rng(derive_seed(seed, &[2, l as u64, h as u64]), 0);
            let mut draw = |slot: &mut [f64], std: f64| {
                for v in slot.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = ((z * std) as f32) as f64;
                }
            };
            draw(&mut values[head.q..head.q + block], in_std);
            draw(&mut values[head.k..head.k + block], in_std);
            draw(&mut values[head.v..head.v + block], in_std);
            draw(&mut values[head.o..head.o + block], out_std);
        }
    }
    if let (Some(g), Some(b)) = (layout.ln_final_gain, layout.ln_final_bias) {
        values[g..g + cfg.d_model].fill(1.0);
        values[b..b + cfg.d_model].fill(0.0);
    }
    fill(
        &mut values[layout.unembed..layout.unembed + vocab_d],
        in_std,
        &[3],
    );
    Ok(ParamVector {
        values,
        segments: layout.segments,
    })
}

/// A named subset of the weights. For attention heads the index set is the
/// union of the head's Q, K, V and O blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub name: String,
    pub indices: Vec<usize>,
    /// `(layer, head)` when the component is exactly one attention head.
    pub head: Option<(usize, usize)>,
}

impl ComponentSpec {
    pub fn validate(&self, n_params: usize) -> Result<()> {
        if self.indices.is_empty() {
            return Err(Error::Invalid(format!("component {} is empty", self.name)));
        }
        if let Some(&bad) = self.indices.iter().find(|&&i| i >= n_params) {
            return Err(Error::Invalid(format!(
                "component {} index {bad} out of bounds for {n_params} parameters",
                self.name
            )));
        }
        Ok(())
    }
}

impl fmt::Display for ComponentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Label used for head `head` of layer `layer`, e.g. `1:6`.
pub fn head_name(layer: usize, head: usize) -> String {
    format!("{layer}:{head}")
}

pub fn head_component(cfg: &ModelConfig, layer: usize, head: usize) -> Result<ComponentSpec> {
    if layer >= cfg.n_layers || head >= cfg.heads_per_layer {
        return Err(Error::Invalid(format!(
            "head {layer}:{head} outside {} layers x {} heads",
            cfg.n_layers, cfg.heads_per_layer
        )));
    }
    let layout = Layout::new(cfg)?;
    let offsets = layout.layers[layer].heads[head];
    let block = 4 * cfg.d_model * cfg.d_head;
    Ok(ComponentSpec {
        name: head_name(layer, head),
        indices: (offsets.q..offsets.q + block).collect(),
        head: Some((layer, head)),
    })
}

/// Every head, layer-major.
pub fn all_head_components(cfg: &ModelConfig) -> Result<Vec<ComponentSpec>> {
    let mut out = Vec::with_capacity(cfg.n_heads());
    for l in 0..cfg.n_layers {
        for h in 0..cfg.heads_per_layer {
            out.push(head_component(cfg, l, h)?);
        }
    }
    Ok(out)
}
