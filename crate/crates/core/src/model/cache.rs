//! Fast per-sample losses when only one attention head moves.
//!
//! Everything upstream of the head's layer, the layer's normalized input and
//! the summed output of the other heads in that layer are fixed while the
//! head's own weights change. They are computed once at the anchor
//! parameters and reused for every posterior draw.

use super::linalg::log_sum_exp;
use super::Transformer;
use crate::corpus::Sample;
use crate::error::{Error, Result};

struct Entry {
    t: usize,
    target: usize,
    /// Residual plus the other heads' output: all rows, or only the final
    /// row when the head sits in the last layer.
    base: Vec<f64>,
    /// Normalized input of the head's layer, all rows.
    hn: Vec<f64>,
}

pub struct ComponentEvaluator<'m> {
    model: &'m Transformer,
    layer: usize,
    head: usize,
    entries: Vec<Entry>,
}

impl<'m> ComponentEvaluator<'m> {
    /// Build the cache at parameters `anchor` for head `(layer, head)`.
    pub fn new(
        model: &'m Transformer,
        anchor: &[f64],
        layer: usize,
        head: usize,
        samples: &[Sample],
    ) -> Result<Self> {
        let cfg = &model.config;
        if layer >= cfg.n_layers || head >= cfg.heads_per_layer {
            return Err(Error::Invalid(format!("no head {layer}:{head}")));
        }
        let d = cfg.d_model;
        let last = layer + 1 == cfg.n_layers;
        let mut entries = Vec::with_capacity(samples.len());
        for s in samples {
            model.check(anchor, &s.context)?;
            if s.target as usize >= cfg.vocab_size {
                return Err(Error::Invalid(format!(
                    "target {} outside vocabulary",
                    s.target
                )));
            }
            let t = s.context.len();
            let mut x = model.embed(anchor, &s.context);
            model.run_layers_full(anchor, &mut x, t, 0..layer)?;
            let hn = model.layer_input_norm(anchor, layer, &x);
            let base = if last {
                let mut row = x[(t - 1) * d..t * d].to_vec();
                for h in (0..cfg.heads_per_layer).filter(|&h| h != head) {
                    model.head_output_acc(anchor, layer, h, &hn, t, t - 1, &mut row);
                }
                row
            } else {
                for h in (0..cfg.heads_per_layer).filter(|&h| h != head) {
                    model.head_output_acc(anchor, layer, h, &hn, t, 0, &mut x);
                }
                x
            };
            entries.push(Entry {
                t,
                target: s.target as usize,
                base,
                hn,
            });
        }
        Ok(Self {
            model,
            layer,
            head,
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Per-sample losses at `w`, which must agree with the anchor outside
    /// the head's block.
    pub fn losses(&self, w: &[f64]) -> Result<Vec<f64>> {
        let last = self.layer + 1 == self.model.config.n_layers;
        self.entries
            .iter()
            .map(|e| {
                let logits = if last {
                    let mut row = e.base.clone();
                    self.model.head_output_acc(
                        w,
                        self.layer,
                        self.head,
                        &e.hn,
                        e.t,
                        e.t - 1,
                        &mut row,
                    );
                    if !row.iter().all(|v| v.is_finite()) {
                        return Err(Error::NonFinite(format!(
                            "residual stream after layer {}",
                            self.layer
                        )));
                    }
                    self.model.unembed_row(w, &row)
                } else {
                    let mut x = e.base.clone();
                    self.model
                        .head_output_acc(w, self.layer, self.head, &e.hn, e.t, 0, &mut x);
                    self.model.final_logits_from(w, self.layer + 1, x, e.t)?
                };
                let loss = log_sum_exp(&logits) - logits[e.target];
                if loss.is_finite() {
                    Ok(loss)
                } else {
                    Err(Error::NonFinite("per-sample loss".into()))
                }
            })
            .collect()
    }
}
