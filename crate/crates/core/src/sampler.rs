//! Localized SGLD restricted to one component.
//!
//! Only the coordinates of the component move; every other weight stays
//! bit-equal to the anchor `w*`. One step is
//!
//! ```text
//! w_j <- w_j - eps/2 * (n_beta * dL_batch/dw_j + gamma * (w_j - w*_j)) + N(0, eps)
//! ```
//!
//! After each step the per-sample losses on a fixed evaluation set are
//! turned into a [`DrawRecord`].

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::model::{ComponentEvaluator, ComponentSpec, Transformer};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SGLDConfig {
    pub epsilon: f64,
    pub gamma: f64,
    pub n_beta: f64,
    pub batch_size: usize,
    pub chains: usize,
    pub draws: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for SGLDConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.001,
            gamma: 300.0,
            n_beta: 30.0,
            batch_size: 16,
            chains: 4,
            draws: 100,
            burn_in: 0,
            seed: 0,
        }
    }
}

impl SGLDConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("sgld: {m}")));
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be non-negative");
        }
        if !(self.n_beta > 0.0 && self.n_beta.is_finite()) {
            return bad("n_beta must be positive");
        }
        if self.chains == 0 {
            return bad("chains must be at least 1");
        }
        if self.draws < 2 {
            return bad("draws must be at least 2");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }
}

/// Loss functionals of one posterior draw.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawRecord {
    pub chain: usize,
    pub draw: usize,
    /// `L(w_t) - L(w*)` on the evaluation set.
    pub delta_loss: f64,
    /// `l_i(w_t) - L(w_t)` for every evaluation sample.
    pub centered_losses: Vec<f64>,
}

impl DrawRecord {
    pub fn from_losses(chain: usize, draw: usize, baseline: f64, losses: &[f64]) -> Self {
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        Self {
            chain,
            draw,
            delta_loss: mean - baseline,
            centered_losses: losses.iter().map(|l| l - mean).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.delta_loss.is_finite() && self.centered_losses.iter().all(|v| v.is_finite())
    }
}

/// A loss landscape the sampler can move through.
pub trait PosteriorTarget: Sync {
    /// Length of the full parameter vector.
    fn dim(&self) -> usize;

    /// Number of samples minibatches are drawn from.
    fn pool_len(&self) -> usize;

    /// Gradient of the mean loss over pool entries `batch`, restricted to
    /// `coords`, written into `out` (same length as `coords`).
    fn component_gradient(
        &self,
        w: &[f64],
        batch: &[usize],
        coords: &[usize],
        out: &mut [f64],
    ) -> Result<()>;

    /// Per-sample losses on the fixed evaluation set.
    fn eval_losses(&self, w: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainFailure {
    pub chain: usize,
    pub step: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ChainSummary {
    pub completed: Vec<usize>,
    pub failures: Vec<ChainFailure>,
}

/// Run every chain in order, handing each completed chain's post-burn-in
/// records to `sink`. A chain that meets a non-finite value is dropped
/// whole and reported.
pub fn run_chains<F>(
    target: &dyn PosteriorTarget,
    w_star: &[f64],
    component: &ComponentSpec,
    cfg: &SGLDConfig,
    mut sink: F,
) -> Result<ChainSummary>
where
    F: FnMut(usize, Vec<DrawRecord>),
{
    cfg.validate()?;
    component.validate(w_star.len())?;
    if target.dim() != w_star.len() {
        return Err(Error::Invalid(format!(
            "target has {} parameters, anchor has {}",
            target.dim(),
            w_star.len()
        )));
    }
    if target.pool_len() == 0 {
        return Err(Error::Invalid("minibatch pool is empty".into()));
    }
    let anchor_losses = target.eval_losses(w_star)?;
    if anchor_losses.is_empty() {
        return Err(Error::Invalid("evaluation set is empty".into()));
    }
    let baseline = anchor_losses.iter().sum::<f64>() / anchor_losses.len() as f64;
    let mut summary = ChainSummary::default();
    for chain in 0..cfg.chains {
        match run_chain(target, w_star, component, cfg, chain, baseline) {
            Ok(records) => {
                summary.completed.push(chain);
                sink(chain, records);
            }
            Err(failure) => {
                log::warn!(
                    "component {}: chain {} aborted at step {}: {}",
                    component.name,
                    failure.chain,
                    failure.step,
                    failure.reason
                );
                summary.failures.push(failure);
            }
        }
    }
    Ok(summary)
}

fn run_chain(
    target: &dyn PosteriorTarget,
    w_star: &[f64],
    component: &ComponentSpec,
    cfg: &SGLDConfig,
    chain: usize,
    baseline: f64,
) -> std::result::Result<Vec<DrawRecord>, ChainFailure> {
    let fail = |step: usize, reason: String| ChainFailure {
        chain,
        step,
        reason,
    };
    let mut rng = stream_rng(cfg.seed, chain as u64);
    let coords = &component.indices;
    let mut w = w_star.to_vec();
    let mut grad = vec![0.0; coords.len()];
    let pool = target.pool_len();
    let batch_size = cfg.batch_size.min(pool);
    let noise_scale = cfg.epsilon.sqrt();
    let half_eps = 0.5 * cfg.epsilon;
    let mut records = Vec::with_capacity(cfg.draws);
    for step in 0..cfg.burn_in + cfg.draws {
        let batch = index::sample(&mut rng, pool, batch_size).into_vec();
        target
            .component_gradient(&w, &batch, coords, &mut grad)
            .map_err(|e| fail(step, e.to_string()))?;
        for (&j, &g) in coords.iter().zip(&grad) {
            let drift = cfg.n_beta * g + cfg.gamma * (w[j] - w_star[j]);
            let z: f64 = rng.sample(StandardNormal);
            w[j] += -half_eps * drift + noise_scale * z;
        }
        if !coords.iter().all(|&j| w[j].is_finite()) {
            return Err(fail(step, "non-finite weights".into()));
        }
        let losses = target
            .eval_losses(&w)
            .map_err(|e| fail(step, e.to_string()))?;
        let record = DrawRecord::from_losses(chain, step, baseline, &losses);
        if !record.is_finite() {
            return Err(fail(step, "non-finite loss".into()));
        }
        if step >= cfg.burn_in {
            records.push(record);
        }
    }
    Ok(records)
}

#[derive(Debug, Clone, Default)]
pub struct SgldRun {
    pub records: Vec<DrawRecord>,
    pub failures: Vec<ChainFailure>,
}

/// Pooled post-burn-in draws of every surviving chain, chain-major.
pub fn sgld_restricted_chain(
    target: &dyn PosteriorTarget,
    w_star: &[f64],
    component: &ComponentSpec,
    cfg: &SGLDConfig,
) -> Result<SgldRun> {
    let mut records = Vec::new();
    let summary = run_chains(target, w_star, component, cfg, |_, r| records.extend(r))?;
    Ok(SgldRun {
        records,
        failures: summary.failures,
    })
}

/// One attention head of a transformer, with final-position losses.
pub struct TransformerTarget<'m> {
    model: &'m Transformer,
    layer: usize,
    head: usize,
    pool: &'m [Sample],
    eval: ComponentEvaluator<'m>,
}

impl<'m> TransformerTarget<'m> {
    /// `pool` feeds the SGLD minibatches; `eval_samples` is the fixed set
    /// the draws are recorded on. The evaluation cache is built at `anchor`.
    pub fn new(
        model: &'m Transformer,
        anchor: &[f64],
        layer: usize,
        head: usize,
        pool: &'m [Sample],
        eval_samples: &[Sample],
    ) -> Result<Self> {
        let eval = ComponentEvaluator::new(model, anchor, layer, head, eval_samples)?;
        Ok(Self {
            model,
            layer,
            head,
            pool,
            eval,
        })
    }
}

impl PosteriorTarget for TransformerTarget<'_> {
    fn dim(&self) -> usize {
        self.model.num_params()
    }

    fn pool_len(&self) -> usize {
        self.pool.len()
    }

    fn component_gradient(
        &self,
        w: &[f64],
        batch: &[usize],
        coords: &[usize],
        out: &mut [f64],
    ) -> Result<()> {
        let refs: Vec<&Sample> = batch.iter().map(|&i| &self.pool[i]).collect();
        let (_, grad) = self
            .model
            .head_loss_and_grad(w, &refs, self.layer, self.head)?;
        for (o, &j) in out.iter_mut().zip(coords) {
            *o = grad[j];
        }
        Ok(())
    }

    fn eval_losses(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.eval.losses(w)
    }
}

const DUMP_MAGIC: &[u8; 8] = b"SATLDRAW";

/// Binary dump: magic, u64 record count, u64 evaluation-set size, then per
/// record u32 chain, u32 draw, f64 delta, f64 x n centered losses (all
/// little-endian).
pub fn write_draw_dump(path: &Path, records: &[DrawRecord]) -> Result<()> {
    let n_eval = records.first().map_or(0, |r| r.centered_losses.len());
    if records.iter().any(|r| r.centered_losses.len() != n_eval) {
        return Err(Error::Invalid(
            "records have different evaluation-set sizes".into(),
        ));
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(|e| Error::io(path, e));
    write(DUMP_MAGIC)?;
    write(&(records.len() as u64).to_le_bytes())?;
    write(&(n_eval as u64).to_le_bytes())?;
    for r in records {
        write(&(r.chain as u32).to_le_bytes())?;
        write(&(r.draw as u32).to_le_bytes())?;
        write(&r.delta_loss.to_le_bytes())?;
        for v in &r.centered_losses {
            write(&v.to_le_bytes())?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_draw_dump(path: &Path) -> Result<Vec<DrawRecord>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = || Error::format("draw dump", "truncated");
    if bytes.len() < 24 || &bytes[..8] != DUMP_MAGIC {
        return Err(Error::format("draw dump", "bad magic"));
    }
    let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
    let count = u64_at(8) as usize;
    let n_eval = u64_at(16) as usize;
    let rec_len = 16 + 8 * n_eval;
    if bytes.len() != 24 + count * rec_len {
        return Err(bad());
    }
    Ok((0..count)
        .map(|k| {
            let b = &bytes[24 + k * rec_len..24 + (k + 1) * rec_len];
            let f = |i: usize| f64::from_le_bytes(b[i..i + 8].try_into().unwrap());
            DrawRecord {
                chain: u32::from_le_bytes(b[0..4].try_into().unwrap()) as usize,
                draw: u32::from_le_bytes(b[4..8].try_into().unwrap()) as usize,
                delta_loss: f(8),
                centered_losses: (0..n_eval).map(|i| f(16 + 8 * i)).collect(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent quadratics `l_i(w) = (w_0 - c_i)^2 / 2` plus an inert
    /// second coordinate.
    struct Quadratic {
        centers: Vec<f64>,
    }

    impl PosteriorTarget for Quadratic {
        fn dim(&self) -> usize {
            2
        }
        fn pool_len(&self) -> usize {
            self.centers.len()
        }
        fn component_gradient(
            &self,
            w: &[f64],
            batch: &[usize],
            coords: &[usize],
            out: &mut [f64],
        ) -> Result<()> {
            let g = batch.iter().map(|&i| w[0] - self.centers[i]).sum::<f64>() / batch.len() as f64;
            for (o, &j) in out.iter_mut().zip(coords) {
                *o = if j == 0 { g } else { 0.0 };
            }
            Ok(())
        }
        fn eval_losses(&self, w: &[f64]) -> Result<Vec<f64>> {
            Ok(self
                .centers
                .iter()
                .map(|c| 0.5 * (w[0] - c).powi(2))
                .collect())
        }
    }

    fn component() -> ComponentSpec {
        ComponentSpec {
            name: "w0".into(),
            indices: vec![0],
            head: None,
        }
    }

    /// Records every parameter vector the evaluation set is scored at.
    struct Spy<'a> {
        inner: &'a Quadratic,
        seen: std::sync::Mutex<Vec<Vec<f64>>>,
    }

    impl PosteriorTarget for Spy<'_> {
        fn dim(&self) -> usize {
            2
        }
        fn pool_len(&self) -> usize {
            self.inner.pool_len()
        }
        fn component_gradient(
            &self,
            w: &[f64],
            b: &[usize],
            c: &[usize],
            o: &mut [f64],
        ) -> Result<()> {
            self.inner.component_gradient(w, b, c, o)
        }
        fn eval_losses(&self, w: &[f64]) -> Result<Vec<f64>> {
            self.seen.lock().unwrap().push(w.to_vec());
            self.inner.eval_losses(w)
        }
    }

    fn visited(w_star: &[f64], cfg: &SGLDConfig) -> Vec<Vec<f64>> {
        let target = Quadratic {
            centers: vec![-1.0, 0.5, 2.0],
        };
        let spy = Spy {
            inner: &target,
            seen: Default::default(),
        };
        sgld_restricted_chain(&spy, w_star, &component(), cfg).unwrap();
        spy.seen.into_inner().unwrap()
    }

    #[test]
    fn coordinates_outside_the_component_never_move() {
        let w_star = [0.25, 0.123456789];
        let cfg = SGLDConfig {
            draws: 50,
            ..Default::default()
        };
        let seen = visited(&w_star, &cfg);
        assert_eq!(seen.len(), 1 + 4 * 50);
        assert!(seen.iter().all(|w| w[1].to_bits() == w_star[1].to_bits()));
        assert!(seen.iter().skip(1).any(|w| w[0] != w_star[0]));
    }

    #[test]
    fn huge_gamma_pins_the_chain_to_the_anchor() {
        let w_star = [0.25, 0.0];
        let cfg = SGLDConfig {
            gamma: 1e9,
            epsilon: 1e-9,
            ..Default::default()
        };
        let seen = visited(&w_star, &cfg);
        let max_dev = seen
            .iter()
            .map(|w| (w[0] - w_star[0]).abs())
            .fold(0.0, f64::max);
        assert!(max_dev < 1e-3, "{max_dev}");
    }

    #[test]
    fn records_are_centered_and_deterministic() {
        let target = Quadratic {
            centers: vec![-1.0, 0.5, 2.0, 0.1],
        };
        let cfg = SGLDConfig {
            draws: 20,
            chains: 3,
            seed: 5,
            ..Default::default()
        };
        let a = sgld_restricted_chain(&target, &[0.2, 0.0], &component(), &cfg).unwrap();
        let b = sgld_restricted_chain(&target, &[0.2, 0.0], &component(), &cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.records.len(), 60);
        for r in &a.records {
            assert!(r.centered_losses.iter().sum::<f64>().abs() < 1e-9);
        }
        let mut keys: Vec<_> = a.records.iter().map(|r| (r.chain, r.draw)).collect();
        keys.dedup();
        assert_eq!(keys.len(), 60);
    }

    #[test]
    fn burn_in_drops_leading_draws() {
        let target = Quadratic {
            centers: vec![0.0, 1.0],
        };
        let cfg = SGLDConfig {
            draws: 10,
            burn_in: 5,
            chains: 1,
            ..Default::default()
        };
        let run = sgld_restricted_chain(&target, &[0.0, 0.0], &component(), &cfg).unwrap();
        assert_eq!(run.records.len(), 10);
        assert_eq!(run.records[0].draw, 5);
    }

    #[test]
    fn diverging_chain_is_dropped_and_reported() {
        let target = Quadratic {
            centers: vec![0.0, 1.0],
        };
        let cfg = SGLDConfig {
            epsilon: 10.0,
            gamma: 1e6,
            draws: 50,
            chains: 2,
            ..Default::default()
        };
        let run = sgld_restricted_chain(&target, &[0.0, 0.0], &component(), &cfg).unwrap();
        assert!(run.records.is_empty());
        assert_eq!(run.failures.len(), 2);
    }

    #[test]
    fn draw_dump_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("draws.bin");
        let records = vec![
            DrawRecord::from_losses(0, 0, 1.0, &[1.0, 2.0, 4.0]),
            DrawRecord::from_losses(1, 3, 1.0, &[0.5, 0.25, 0.0]),
        ];
        write_draw_dump(&path, &records).unwrap();
        assert_eq!(read_draw_dump(&path).unwrap(), records);
    }
}
