//! Training loop that writes a checkpoint at each requested step.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_checkpoint, CheckpointMeta};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::{init_params, ModelConfig, ParamVector, Transformer};
use crate::rng::{derive_seed, stream_rng};
use crate::tokenizer::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    Momentum {
        #[serde(default = "default_momentum")]
        momentum: f64,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

fn default_momentum() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Momentum {
            momentum: default_momentum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Peak learning rate.
    pub lr: f64,
    pub warmup_steps: usize,
    /// Final learning rate as a fraction of `lr` at the end of the cosine.
    pub min_lr_ratio: f64,
    pub optimizer: Optimizer,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub weight_decay: f64,
    pub checkpoint_steps: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 16,
            lr: 0.05,
            warmup_steps: 100,
            min_lr_ratio: 0.1,
            optimizer: Optimizer::default(),
            grad_clip: Some(1.0),
            weight_decay: 0.0,
            checkpoint_steps: Vec::new(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(
                "train.lr must be finite and non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.min_lr_ratio) {
            return Err(Error::Config(
                "train.min_lr_ratio must lie in [0, 1]".into(),
            ));
        }
        if self.checkpoint_steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "train.checkpoint_steps must be strictly increasing".into(),
            ));
        }
        if let Some(&last) = self.checkpoint_steps.last() {
            if last > self.steps {
                return Err(Error::Config(format!(
                    "checkpoint step {last} exceeds train.steps {}",
                    self.steps
                )));
            }
        }
        Ok(())
    }

    /// Linear warmup to `lr`, then cosine decay to `lr * min_lr_ratio`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.steps.saturating_sub(self.warmup_steps).max(1) as f64;
        let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.lr * (self.min_lr_ratio + (1.0 - self.min_lr_ratio) * cosine)
    }

    /// Requested checkpoint steps plus the final step, deduplicated.
    pub fn all_checkpoint_steps(&self) -> Vec<usize> {
        let mut steps = self.checkpoint_steps.clone();
        if steps.last() != Some(&self.steps) {
            steps.push(self.steps);
        }
        steps
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoints: Vec<(usize, PathBuf)>,
    pub log: PathBuf,
    pub final_loss: Option<f64>,
}

pub fn checkpoint_file_name(step: usize) -> String {
    format!("ckpt-{step:06}.bin")
}

/// Training windows of `max_context + 1` tokens cut from each document
/// with stride `max_context`. Documents shorter than two tokens are skipped.
pub fn training_windows(corpus: &Corpus, max_context: usize) -> Vec<&[TokenId]> {
    let mut windows = Vec::new();
    for doc in &corpus.documents {
        let toks = &doc.tokens;
        if toks.len() < 2 {
            continue;
        }
        let mut start = 0;
        while start + 1 < toks.len() {
            let end = (start + max_context + 1).min(toks.len());
            windows.push(&toks[start..end]);
            start += max_context;
        }
    }
    windows
}

struct OptimizerState {
    kind: Optimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptimizerState {
    fn new(kind: Optimizer, n: usize) -> Self {
        let v = match kind {
            Optimizer::Adam { .. } => vec![0.0; n],
            Optimizer::Momentum { .. } => Vec::new(),
        };
        Self {
            kind,
            m: vec![0.0; n],
            v,
            t: 0,
        }
    }

    fn step(&mut self, w: &mut [f64], grad: &[f64], lr: f64, weight_decay: f64) {
        self.t += 1;
        match self.kind {
            Optimizer::Momentum { momentum } => {
                for ((wi, mi), &g) in w.iter_mut().zip(&mut self.m).zip(grad) {
                    *mi = momentum * *mi + g + weight_decay * *wi;
                    *wi -= lr * *mi;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for (((wi, mi), vi), &g) in w.iter_mut().zip(&mut self.m).zip(&mut self.v).zip(grad)
                {
                    *mi = beta1 * *mi + (1.0 - beta1) * g;
                    *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                    *wi -= lr * ((*mi / c1) / ((*vi / c2).sqrt() + eps) + weight_decay * *wi);
                }
            }
        }
    }
}

fn rounded(w: &[f64], template: &ParamVector) -> ParamVector {
    ParamVector {
        values: w.iter().map(|&v| (v as f32) as f64).collect(),
        segments: template.segments.clone(),
    }
}

/// Train from a seeded initialization, writing `ckpt-<step>.bin` files and
/// `train_log.tsv` into `out_dir`.
pub fn train_with_checkpoints(
    model_cfg: &ModelConfig,
    corpus: &Corpus,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = Transformer::new(model_cfg.clone())?;
    let windows = training_windows(corpus, model_cfg.max_context);
    if windows.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join("train_log.tsv");
    let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    writeln!(log, "step\tloss\tlr").map_err(|e| Error::io(&log_path, e))?;

    let init = init_params(model_cfg, cfg.seed)?;
    let mut w = init.values.clone();
    let mut opt = OptimizerState::new(cfg.optimizer, w.len());
    let targets = cfg.all_checkpoint_steps();
    let mut next_ckpt = 0;
    let mut written: Vec<(usize, PathBuf)> = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;
    let mut final_loss = None;

    let save = |step: usize, w: &[f64], written: &mut Vec<(usize, PathBuf)>| -> Result<()> {
        let path = out_dir.join(checkpoint_file_name(step));
        let meta = CheckpointMeta {
            model: model_cfg.clone(),
            step: step as u64,
            seed: cfg.seed,
        };
        save_checkpoint(&path, &meta, &rounded(w, &init))?;
        written.push((step, path));
        Ok(())
    };

    for step in 0..=cfg.steps {
        if next_ckpt < targets.len() && targets[next_ckpt] == step {
            save(step, &w, &mut written)?;
            next_ckpt += 1;
        }
        if step == cfg.steps {
            break;
        }
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order = (0..windows.len()).collect();
                order.shuffle(&mut stream_rng(derive_seed(cfg.seed, &[10, epoch]), 0));
                epoch += 1;
                cursor = 0;
            }
            batch.push(windows[order[cursor]]);
            cursor += 1;
        }
        let diverged = |written: &Vec<(usize, PathBuf)>| Error::Diverged {
            step,
            last_checkpoint: written.last().map(|(_, p)| p.clone()),
        };
        let (loss, mut grad) = match model.sequence_loss_and_grad(&w, &batch) {
            Ok(r) => r,
            Err(Error::NonFinite(_)) => return Err(diverged(&written)),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() || !grad.iter().all(|g| g.is_finite()) {
            return Err(diverged(&written));
        }
        if let Some(clip) = cfg.grad_clip {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > clip {
                let s = clip / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
        }
        let lr = cfg.lr_at(step);
        writeln!(log, "{step}\t{loss:.6}\t{lr:.6e}").map_err(|e| Error::io(&log_path, e))?;
        opt.step(&mut w, &grad, lr, cfg.weight_decay);
        if !w.iter().all(|v| v.is_finite()) {
            return Err(diverged(&written));
        }
        final_loss = Some(loss);
        if step % 100 == 0 {
            log::debug!("step {step} loss {loss:.4} lr {lr:.3e}");
        }
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    Ok(TrainOutcome {
        checkpoints: written,
        log: log_path,
        final_loss,
    })
}
