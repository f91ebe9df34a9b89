use serde::{Deserialize, Serialize};

use super::linalg::{
    dot, layer_norm_backward_rows, layer_norm_rows, log_sum_exp, matmul_a_bt_acc, matmul_acc,
    matmul_at_b_acc, softmax_in_place,
};
use super::{Layout, ModelConfig, ParamVector};
use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::tokenizer::TokenId;

/// Per-sample negative log-likelihoods and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub losses: Vec<f64>,
    pub mean: f64,
}

impl LossRecord {
    pub fn from_losses(losses: Vec<f64>) -> Self {
        let mean = if losses.is_empty() {
            0.0
        } else {
            losses.iter().sum::<f64>() / losses.len() as f64
        };
        Self { losses, mean }
    }
}

struct HeadTrace {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    att: Vec<f64>,
    z: Vec<f64>,
}

struct LayerTrace {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    hn: Vec<f64>,
    heads: Vec<HeadTrace>,
}

struct Trace {
    t: usize,
    layers: Vec<LayerTrace>,
    xhat_f: Vec<f64>,
    inv_std_f: Vec<f64>,
    hf: Vec<f64>,
}

/// Stateless evaluator for one [`ModelConfig`]. Parameters are passed to
/// every call, so one instance is shared freely across threads.
#[derive(Debug, Clone)]
pub struct Transformer {
    pub config: ModelConfig,
    pub layout: Layout,
}

impl Transformer {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let layout = Layout::new(&config)?;
        Ok(Self { config, layout })
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    pub(crate) fn check(&self, w: &[f64], tokens: &[TokenId]) -> Result<()> {
        if w.len() != self.layout.total {
            return Err(Error::Invalid(format!(
                "parameter vector has {} values, model expects {}",
                w.len(),
                self.layout.total
            )));
        }
        if tokens.is_empty() || tokens.len() > self.config.max_context {
            return Err(Error::Invalid(format!(
                "sequence length {} outside 1..={}",
                tokens.len(),
                self.config.max_context
            )));
        }
        if let Some(&bad) = tokens
            .iter()
            .find(|&&t| t as usize >= self.config.vocab_size)
        {
            return Err(Error::Invalid(format!("token {bad} outside vocabulary")));
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        1.0 / (self.config.d_head as f64).sqrt()
    }

    pub(crate) fn embed(&self, w: &[f64], tokens: &[TokenId]) -> Vec<f64> {
        let d = self.config.d_model;
        let mut x = vec![0.0; tokens.len() * d];
        for (i, &tok) in tokens.iter().enumerate() {
            let e = &w[self.layout.embed + tok as usize * d..][..d];
            let p = &w[self.layout.pos + i * d..][..d];
            for c in 0..d {
                x[i * d + c] = e[c] + p[c];
            }
        }
        x
    }

    /// Pre-attention normalization of layer `l` (identity without layer norm).
    pub(crate) fn layer_input_norm(&self, w: &[f64], l: usize, x: &[f64]) -> Vec<f64> {
        let layer = &self.layout.layers[l];
        self.norm(w, layer.ln_gain, layer.ln_bias, x)
    }

    fn norm(&self, w: &[f64], gain: Option<usize>, bias: Option<usize>, x: &[f64]) -> Vec<f64> {
        let d = self.config.d_model;
        match (gain, bias) {
            (Some(g), Some(b)) => {
                let rows = x.len() / d;
                let mut out = vec![0.0; x.len()];
                let mut xhat = vec![0.0; x.len()];
                let mut inv = vec![0.0; rows];
                layer_norm_rows(
                    x,
                    d,
                    &w[g..g + d],
                    &w[b..b + d],
                    &mut out,
                    &mut xhat,
                    &mut inv,
                );
                out
            }
            _ => x.to_vec(),
        }
    }

    /// Output of head `(l, h)` for query rows `q_from..t`, added into `out`
    /// (`(t - q_from) x d_model`). `hn` holds the normalized layer input for
    /// all `t` rows.
    pub(crate) fn head_output_acc(
        &self,
        w: &[f64],
        l: usize,
        h: usize,
        hn: &[f64],
        t: usize,
        q_from: usize,
        out: &mut [f64],
    ) {
        let d = self.config.d_model;
        let dh = self.config.d_head;
        let off = self.layout.layers[l].heads[h];
        let wq = &w[off.q..off.q + d * dh];
        let wk = &w[off.k..off.k + d * dh];
        let wv = &w[off.v..off.v + d * dh];
        let wo = &w[off.o..off.o + dh * d];
        let mut k = vec![0.0; t * dh];
        let mut v = vec![0.0; t * dh];
        matmul_acc(hn, wk, t, d, dh, &mut k);
        matmul_acc(hn, wv, t, d, dh, &mut v);
        let nq = t - q_from;
        let mut q = vec![0.0; nq * dh];
        matmul_acc(&hn[q_from * d..], wq, nq, d, dh, &mut q);
        let scale = self.scale();
        let mut z = vec![0.0; nq * dh];
        let mut scores = vec![0.0; t];
        for r in 0..nq {
            let i = q_from + r;
            let qi = &q[r * dh..(r + 1) * dh];
            for j in 0..=i {
                scores[j] = dot(qi, &k[j * dh..(j + 1) * dh]) * scale;
            }
            softmax_in_place(&mut scores[..=i]);
            let zi = &mut z[r * dh..(r + 1) * dh];
            for j in 0..=i {
                let a = scores[j];
                for c in 0..dh {
                    zi[c] += a * v[j * dh + c];
                }
            }
        }
        matmul_acc(&z, wo, nq, dh, d, out);
    }

    /// Run layers in `layers` over every row of `x` (`t x d`), in place.
    pub(crate) fn run_layers_full(
        &self,
        w: &[f64],
        x: &mut [f64],
        t: usize,
        layers: std::ops::Range<usize>,
    ) -> Result<()> {
        let d = self.config.d_model;
        for l in layers {
            let hn = self.layer_input_norm(w, l, x);
            let mut delta = vec![0.0; t * d];
            for h in 0..self.config.heads_per_layer {
                self.head_output_acc(w, l, h, &hn, t, 0, &mut delta);
            }
            for (a, b) in x.iter_mut().zip(&delta) {
                *a += b;
            }
            check_finite(x, l)?;
        }
        Ok(())
    }

    /// Run layers `start..` on residual `x` (`t x d`) and return the logits
    /// at the final position. The last layer is evaluated only at that row.
    pub(crate) fn final_logits_from(
        &self,
        w: &[f64],
        start: usize,
        mut x: Vec<f64>,
        t: usize,
    ) -> Result<Vec<f64>> {
        let d = self.config.d_model;
        let n_layers = self.config.n_layers;
        let mut last_row: Option<Vec<f64>> = None;
        for l in start..n_layers {
            let hn = self.layer_input_norm(w, l, &x);
            if l + 1 == n_layers {
                let mut row = x[(t - 1) * d..t * d].to_vec();
                for h in 0..self.config.heads_per_layer {
                    self.head_output_acc(w, l, h, &hn, t, t - 1, &mut row);
                }
                check_finite(&row, l)?;
                last_row = Some(row);
            } else {
                let mut delta = vec![0.0; t * d];
                for h in 0..self.config.heads_per_layer {
                    self.head_output_acc(w, l, h, &hn, t, 0, &mut delta);
                }
                for (a, b) in x.iter_mut().zip(&delta) {
                    *a += b;
                }
                check_finite(&x, l)?;
            }
        }
        let row = last_row.unwrap_or_else(|| x[(t - 1) * d..t * d].to_vec());
        Ok(self.unembed_row(w, &row))
    }

    /// Final norm and unembedding of a single residual row.
    pub(crate) fn unembed_row(&self, w: &[f64], row: &[f64]) -> Vec<f64> {
        let d = self.config.d_model;
        let v = self.config.vocab_size;
        let hf = self.norm(w, self.layout.ln_final_gain, self.layout.ln_final_bias, row);
        let mut logits = vec![0.0; v];
        matmul_acc(
            &hf,
            &w[self.layout.unembed..self.layout.unembed + d * v],
            1,
            d,
            v,
            &mut logits,
        );
        logits
    }

    /// Logits for the token following `tokens`.
    pub fn next_token_logits(&self, w: &[f64], tokens: &[TokenId]) -> Result<Vec<f64>> {
        self.check(w, tokens)?;
        let x = self.embed(w, tokens);
        self.final_logits_from(w, 0, x, tokens.len())
    }

    /// `-log p(target | context)` for one sample.
    pub fn sample_loss(&self, w: &[f64], sample: &Sample) -> Result<f64> {
        let logits = self.next_token_logits(w, &sample.context)?;
        let y = sample.target as usize;
        if y >= logits.len() {
            return Err(Error::Invalid(format!("target {y} outside vocabulary")));
        }
        Ok(log_sum_exp(&logits) - logits[y])
    }

    pub fn forward_per_token_loss(
        &self,
        params: &ParamVector,
        batch: &[Sample],
    ) -> Result<LossRecord> {
        self.losses(&params.values, batch)
    }

    pub fn losses(&self, w: &[f64], batch: &[Sample]) -> Result<LossRecord> {
        let losses = batch
            .iter()
            .map(|s| self.sample_loss(w, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(LossRecord::from_losses(losses))
    }

    /// Loss record and gradient of the batch-mean final-position loss.
    pub fn grad_loss(
        &self,
        params: &ParamVector,
        batch: &[Sample],
    ) -> Result<(LossRecord, Vec<f64>)> {
        let refs: Vec<&Sample> = batch.iter().collect();
        self.loss_and_grad(&params.values, &refs)
    }

    pub fn loss_and_grad(&self, w: &[f64], batch: &[&Sample]) -> Result<(LossRecord, Vec<f64>)> {
        self.loss_and_grad_scoped(w, batch, None)
    }

    /// Like [`Transformer::loss_and_grad`], but only the block of head
    /// `(layer, head)` receives a correct gradient; other entries are
    /// unspecified.
    pub fn head_loss_and_grad(
        &self,
        w: &[f64],
        batch: &[&Sample],
        layer: usize,
        head: usize,
    ) -> Result<(LossRecord, Vec<f64>)> {
        if layer >= self.config.n_layers || head >= self.config.heads_per_layer {
            return Err(Error::Invalid(format!("no head {layer}:{head}")));
        }
        self.loss_and_grad_scoped(w, batch, Some((layer, head)))
    }

    fn loss_and_grad_scoped(
        &self,
        w: &[f64],
        batch: &[&Sample],
        only_head: Option<(usize, usize)>,
    ) -> Result<(LossRecord, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        let mut grad = vec![0.0; self.layout.total];
        let weight = 1.0 / batch.len() as f64;
        let mut losses = Vec::with_capacity(batch.len());
        for s in batch {
            self.check(w, &s.context)?;
            let trace = self.forward_trace(w, &s.context)?;
            let t = trace.t;
            let mut logits = self.logits_at(w, &trace, t - 1);
            let y = s.target as usize;
            if y >= logits.len() {
                return Err(Error::Invalid(format!("target {y} outside vocabulary")));
            }
            losses.push(log_sum_exp(&logits) - logits[y]);
            softmax_in_place(&mut logits);
            logits[y] -= 1.0;
            logits.iter_mut().for_each(|g| *g *= weight);
            self.backward(
                w,
                &s.context,
                &trace,
                &[(t - 1, logits)],
                only_head,
                &mut grad,
            );
        }
        Ok((LossRecord::from_losses(losses), grad))
    }

    /// Mean next-token loss over every position of every sequence, and its
    /// gradient. Each sequence has length at most `max_context + 1`.
    pub fn sequence_loss_and_grad(
        &self,
        w: &[f64],
        seqs: &[&[TokenId]],
    ) -> Result<(f64, Vec<f64>)> {
        let total_targets: usize = seqs.iter().map(|s| s.len().saturating_sub(1)).sum();
        if total_targets == 0 {
            return Err(Error::Invalid("no targets in batch".into()));
        }
        let weight = 1.0 / total_targets as f64;
        let mut grad = vec![0.0; self.layout.total];
        let mut loss = 0.0;
        for seq in seqs {
            if seq.len() < 2 {
                continue;
            }
            let inputs = &seq[..seq.len() - 1];
            self.check(w, inputs)?;
            let trace = self.forward_trace(w, inputs)?;
            let mut dlogits = Vec::with_capacity(inputs.len());
            for p in 0..inputs.len() {
                let mut logits = self.logits_at(w, &trace, p);
                let y = seq[p + 1] as usize;
                loss += (log_sum_exp(&logits) - logits[y]) * weight;
                softmax_in_place(&mut logits);
                logits[y] -= 1.0;
                logits.iter_mut().for_each(|g| *g *= weight);
                dlogits.push((p, logits));
            }
            self.backward(w, inputs, &trace, &dlogits, None, &mut grad);
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("sequence loss".into()));
        }
        Ok((loss, grad))
    }

    /// Predicted next-token distribution at every position.
    pub fn position_distributions(&self, w: &[f64], tokens: &[TokenId]) -> Result<Vec<Vec<f64>>> {
        self.check(w, tokens)?;
        let trace = self.forward_trace(w, tokens)?;
        Ok((0..trace.t)
            .map(|p| {
                let mut l = self.logits_at(w, &trace, p);
                softmax_in_place(&mut l);
                l
            })
            .collect())
    }

    /// Attention pattern of head `(l, h)` over `tokens` (`t x t`, causal).
    pub fn attention_pattern(
        &self,
        w: &[f64],
        tokens: &[TokenId],
        l: usize,
        h: usize,
    ) -> Result<Vec<f64>> {
        self.check(w, tokens)?;
        let mut trace = self.forward_trace(w, tokens)?;
        Ok(std::mem::take(&mut trace.layers[l].heads[h].att))
    }

    fn logits_at(&self, w: &[f64], trace: &Trace, p: usize) -> Vec<f64> {
        let d = self.config.d_model;
        let v = self.config.vocab_size;
        let mut logits = vec![0.0; v];
        matmul_acc(
            &trace.hf[p * d..(p + 1) * d],
            &w[self.layout.unembed..self.layout.unembed + d * v],
            1,
            d,
            v,
            &mut logits,
        );
        logits
    }

    fn forward_trace(&self, w: &[f64], tokens: &[TokenId]) -> Result<Trace> {
        let d = self.config.d_model;
        let dh = self.config.d_head;
        let t = tokens.len();
        let scale = self.scale();
        let mut x = self.embed(w, tokens);
        let mut layers = Vec::with_capacity(self.config.n_layers);
        for (l, lo) in self.layout.layers.iter().enumerate() {
            let mut xhat = vec![0.0; t * d];
            let mut inv_std = vec![0.0; t];
            let hn = match (lo.ln_gain, lo.ln_bias) {
                (Some(g), Some(b)) => {
                    let mut out = vec![0.0; t * d];
                    layer_norm_rows(
                        &x,
                        d,
                        &w[g..g + d],
                        &w[b..b + d],
                        &mut out,
                        &mut xhat,
                        &mut inv_std,
                    );
                    out
                }
                _ => x.clone(),
            };
            let mut delta = vec![0.0; t * d];
            let mut heads = Vec::with_capacity(lo.heads.len());
            for off in &lo.heads {
                let mut q = vec![0.0; t * dh];
                let mut k = vec![0.0; t * dh];
                let mut v = vec![0.0; t * dh];
                matmul_acc(&hn, &w[off.q..off.q + d * dh], t, d, dh, &mut q);
                matmul_acc(&hn, &w[off.k..off.k + d * dh], t, d, dh, &mut k);
                matmul_acc(&hn, &w[off.v..off.v + d * dh], t, d, dh, &mut v);
                let mut att = vec![0.0; t * t];
                let mut z = vec![0.0; t * dh];
                for i in 0..t {
                    let row = &mut att[i * t..i * t + i + 1];
                    for (j, s) in row.iter_mut().enumerate() {
                        *s = dot(&q[i * dh..(i + 1) * dh], &k[j * dh..(j + 1) * dh]) * scale;
                    }
                    softmax_in_place(row);
                    for j in 0..=i {
                        let a = att[i * t + j];
                        for c in 0..dh {
                            z[i * dh + c] += a * v[j * dh + c];
                        }
                    }
                }
                matmul_acc(&z, &w[off.o..off.o + dh * d], t, dh, d, &mut delta);
                heads.push(HeadTrace { q, k, v, att, z });
            }
            for (a, b) in x.iter_mut().zip(&delta) {
                *a += b;
            }
            check_finite(&x, l)?;
            layers.push(LayerTrace {
                xhat,
                inv_std,
                hn,
                heads,
            });
        }
        let mut xhat_f = vec![0.0; t * d];
        let mut inv_std_f = vec![0.0; t];
        let hf = match (self.layout.ln_final_gain, self.layout.ln_final_bias) {
            (Some(g), Some(b)) => {
                let mut out = vec![0.0; t * d];
                layer_norm_rows(
                    &x,
                    d,
                    &w[g..g + d],
                    &w[b..b + d],
                    &mut out,
                    &mut xhat_f,
                    &mut inv_std_f,
                );
                out
            }
            _ => x,
        };
        Ok(Trace {
            t,
            layers,
            xhat_f,
            inv_std_f,
            hf,
        })
    }

    /// Accumulate into `grad` the gradient of `sum_p dlogits[p] . logits[p]`.
    fn backward(
        &self,
        w: &[f64],
        tokens: &[TokenId],
        trace: &Trace,
        dlogits: &[(usize, Vec<f64>)],
        only_head: Option<(usize, usize)>,
        grad: &mut [f64],
    ) {
        let d = self.config.d_model;
        let dh = self.config.d_head;
        let vsz = self.config.vocab_size;
        let t = trace.t;
        let scale = self.scale();
        let ue = self.layout.unembed;

        let mut dhf = vec![0.0; t * d];
        for (p, dl) in dlogits {
            let row = &trace.hf[p * d..(p + 1) * d];
            matmul_at_b_acc(row, dl, 1, d, vsz, &mut grad[ue..ue + d * vsz]);
            matmul_a_bt_acc(
                dl,
                &w[ue..ue + d * vsz],
                1,
                vsz,
                d,
                &mut dhf[p * d..(p + 1) * d],
            );
        }
        let mut dx = match (self.layout.ln_final_gain, self.layout.ln_final_bias) {
            (Some(g), Some(b)) => {
                let mut dx = vec![0.0; t * d];
                let (dgain, dbias) = split_pair(grad, g, b, d);
                layer_norm_backward_rows(
                    &dhf,
                    &trace.xhat_f,
                    &trace.inv_std_f,
                    &w[g..g + d],
                    d,
                    &mut dx,
                    dgain,
                    dbias,
                );
                dx
            }
            _ => dhf,
        };

        let first_layer = only_head.map_or(0, |(l, _)| l);
        for (l, lo) in self
            .layout
            .layers
            .iter()
            .enumerate()
            .skip(first_layer)
            .rev()
        {
            let lt = &trace.layers[l];
            let mut dhn = vec![0.0; t * d];
            for (h, off) in lo.heads.iter().enumerate() {
                if only_head.is_some_and(|(ol, oh)| ol == l && oh != h) {
                    continue;
                }
                let ht = &lt.heads[h];
                let wo = &w[off.o..off.o + dh * d];
                // out = z * wo
                matmul_at_b_acc(&ht.z, &dx, t, dh, d, &mut grad[off.o..off.o + dh * d]);
                let mut dz = vec![0.0; t * dh];
                matmul_a_bt_acc(&dx, wo, t, d, dh, &mut dz);
                let mut dq = vec![0.0; t * dh];
                let mut dk = vec![0.0; t * dh];
                let mut dv = vec![0.0; t * dh];
                let mut datt = vec![0.0; t];
                for i in 0..t {
                    let dzi = &dz[i * dh..(i + 1) * dh];
                    let arow = &ht.att[i * t..i * t + i + 1];
                    let mut weighted = 0.0;
                    for j in 0..=i {
                        datt[j] = dot(dzi, &ht.v[j * dh..(j + 1) * dh]);
                        weighted += arow[j] * datt[j];
                        for c in 0..dh {
                            dv[j * dh + c] += arow[j] * dzi[c];
                        }
                    }
                    for j in 0..=i {
                        let ds = arow[j] * (datt[j] - weighted) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        for c in 0..dh {
                            dq[i * dh + c] += ds * ht.k[j * dh + c];
                            dk[j * dh + c] += ds * ht.q[i * dh + c];
                        }
                    }
                }
                matmul_at_b_acc(&lt.hn, &dq, t, d, dh, &mut grad[off.q..off.q + d * dh]);
                matmul_at_b_acc(&lt.hn, &dk, t, d, dh, &mut grad[off.k..off.k + d * dh]);
                matmul_at_b_acc(&lt.hn, &dv, t, d, dh, &mut grad[off.v..off.v + d * dh]);
                if only_head.is_some_and(|(ol, _)| ol == l) {
                    continue;
                }
                matmul_a_bt_acc(&dq, &w[off.q..off.q + d * dh], t, dh, d, &mut dhn);
                matmul_a_bt_acc(&dk, &w[off.k..off.k + d * dh], t, dh, d, &mut dhn);
                matmul_a_bt_acc(&dv, &w[off.v..off.v + d * dh], t, dh, d, &mut dhn);
            }
            if only_head.is_some() && l == first_layer {
                return;
            }
            match (lo.ln_gain, lo.ln_bias) {
                (Some(g), Some(b)) => {
                    let (dgain, dbias) = split_pair(grad, g, b, d);
                    layer_norm_backward_rows(
                        &dhn,
                        &lt.xhat,
                        &lt.inv_std,
                        &w[g..g + d],
                        d,
                        &mut dx,
                        dgain,
                        dbias,
                    );
                }
                _ => {
                    for (a, b) in dx.iter_mut().zip(&dhn) {
                        *a += b;
                    }
                }
            }
        }

        for (i, &tok) in tokens.iter().enumerate() {
            let e = self.layout.embed + tok as usize * d;
            let p = self.layout.pos + i * d;
            for c in 0..d {
                grad[e + c] += dx[i * d + c];
                grad[p + c] += dx[i * d + c];
            }
        }
    }
}

/// Disjoint mutable views of two `d`-length blocks at `a < b`.
fn split_pair(grad: &mut [f64], a: usize, b: usize, d: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a + d <= b);
    let (left, right) = grad.split_at_mut(b);
    (&mut left[a..a + d], &mut right[..d])
}

fn check_finite(x: &[f64], layer: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "residual stream after layer {layer}"
        )))
    }
}
