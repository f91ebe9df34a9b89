//! Per-token susceptibilities from SGLD draws, the samples-by-heads data
//! matrix, and its aggregations by pattern, training step and spacing run
//! length.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::load_checkpoint;
use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::model::{all_head_components, Transformer};
use crate::patterns::{Pattern, PatternLabelSet};
use crate::rng::derive_seed;
use crate::sampler::{run_chains, DrawRecord, SGLDConfig, TransformerTarget};

/// Streaming covariance between the loss shift and every centered
/// per-sample loss (Welford co-moments).
#[derive(Debug, Clone)]
pub struct CovarianceAccumulator {
    n: usize,
    mean_delta: f64,
    mean_centered: Vec<f64>,
    comoment: Vec<f64>,
}

impl CovarianceAccumulator {
    pub fn new(n_eval: usize) -> Self {
        Self {
            n: 0,
            mean_delta: 0.0,
            mean_centered: vec![0.0; n_eval],
            comoment: vec![0.0; n_eval],
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, record: &DrawRecord) -> Result<()> {
        if record.centered_losses.len() != self.comoment.len() {
            return Err(Error::Invalid(format!(
                "record has {} samples, expected {}",
                record.centered_losses.len(),
                self.comoment.len()
            )));
        }
        self.n += 1;
        let n = self.n as f64;
        let dx = record.delta_loss - self.mean_delta;
        self.mean_delta += dx / n;
        for ((m, c), &y) in self
            .mean_centered
            .iter_mut()
            .zip(&mut self.comoment)
            .zip(&record.centered_losses)
        {
            *m += (y - *m) / n;
            *c += dx * (y - *m);
        }
        Ok(())
    }

    /// `chi_i = -Cov(dL, dl_i)` with population normalization.
    pub fn susceptibilities(&self) -> Result<Vec<f64>> {
        if self.n < 2 {
            return Err(Error::Estimation(format!(
                "need at least 2 draws, have {}",
                self.n
            )));
        }
        let n = self.n as f64;
        Ok(self.comoment.iter().map(|c| -c / n).collect())
    }
}

/// Negated population covariance between `delta_loss` and each sample's
/// centered loss over the pooled draws. Records are pooled in
/// (chain, draw) order, so the result does not depend on input order.
pub fn estimate_per_token_susceptibility(records: &[DrawRecord]) -> Result<Vec<f64>> {
    let first = records
        .first()
        .ok_or_else(|| Error::Estimation("need at least 2 draws, have 0".into()))?;
    let mut sorted: Vec<&DrawRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.chain, r.draw));
    let mut acc = CovarianceAccumulator::new(first.centered_losses.len());
    for r in sorted {
        acc.push(r)?;
    }
    acc.susceptibilities()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowMeta {
    pub sample_id: usize,
    pub tag: String,
    pub labels: PatternLabelSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnReport {
    pub name: String,
    pub seed: u64,
    pub chains_completed: usize,
    pub chains_aborted: usize,
    pub draws: usize,
}

/// Rows are samples, columns are heads in layer-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SusceptibilityMatrix {
    pub step: Option<u64>,
    pub components: Vec<String>,
    pub rows: Vec<RowMeta>,
    /// Row-major `rows.len() x components.len()`.
    pub values: Vec<f64>,
    pub sgld: SGLDConfig,
    pub columns: Vec<ColumnReport>,
}

impl SusceptibilityMatrix {
    /// Assemble from column vectors, checking shapes and finiteness.
    pub fn from_columns(
        step: Option<u64>,
        rows: Vec<RowMeta>,
        columns: Vec<(ColumnReport, Vec<f64>)>,
        sgld: SGLDConfig,
    ) -> Result<Self> {
        let n = rows.len();
        let h = columns.len();
        let mut values = vec![0.0; n * h];
        let mut reports = Vec::with_capacity(h);
        for (j, (report, col)) in columns.into_iter().enumerate() {
            if col.len() != n {
                return Err(Error::Invalid(format!(
                    "column {} has {} rows, expected {n}",
                    report.name,
                    col.len()
                )));
            }
            if !col.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "susceptibility column {}",
                    report.name
                )));
            }
            for (i, v) in col.into_iter().enumerate() {
                values[i * h + j] = v;
            }
            reports.push(report);
        }
        Ok(Self {
            step,
            components: reports.iter().map(|r| r.name.clone()).collect(),
            rows,
            values,
            sgld,
            columns: reports,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.components.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let h = self.n_cols();
        &self.values[i * h..(i + 1) * h]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows())
            .map(|i| self.values[i * self.n_cols() + j])
            .collect()
    }

    pub fn labels(&self) -> Vec<PatternLabelSet> {
        self.rows.iter().map(|r| r.labels).collect()
    }

    /// Keep only the given columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        let h = self.n_cols();
        let values = (0..self.n_rows())
            .flat_map(|i| cols.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.values[i * h + j])
            .collect();
        Self {
            step: self.step,
            components: cols.iter().map(|&j| self.components[j].clone()).collect(),
            rows: self.rows.clone(),
            values,
            sgld: self.sgld.clone(),
            columns: cols.iter().map(|&j| self.columns[j].clone()).collect(),
        }
    }
}

/// Estimate the susceptibility of every attention head for every sample at
/// parameters `w_star`.
///
/// `pool` feeds the SGLD minibatches. Columns run in parallel; each uses
/// the seed derived from `(sgld.seed, column index)`.
pub fn build_susceptibility_matrix(
    model: &Transformer,
    w_star: &[f64],
    step: Option<u64>,
    samples: &[Sample],
    labels: &[PatternLabelSet],
    pool: &[Sample],
    sgld: &SGLDConfig,
) -> Result<SusceptibilityMatrix> {
    sgld.validate()?;
    if samples.is_empty() {
        return Err(Error::Invalid("no evaluation samples".into()));
    }
    if labels.len() != samples.len() {
        return Err(Error::Invalid(format!(
            "{} label sets for {} samples",
            labels.len(),
            samples.len()
        )));
    }
    let components = all_head_components(&model.config)?;
    let columns = components
        .par_iter()
        .enumerate()
        .map(|(j, comp)| -> Result<(ColumnReport, Vec<f64>)> {
            let (layer, head) = comp.head.expect("head component");
            let cfg = SGLDConfig {
                seed: derive_seed(sgld.seed, &[j as u64]),
                ..sgld.clone()
            };
            let target = TransformerTarget::new(model, w_star, layer, head, pool, samples)?;
            let mut acc = CovarianceAccumulator::new(samples.len());
            let mut push_err = None;
            let summary = run_chains(&target, w_star, comp, &cfg, |_, records| {
                for r in &records {
                    if let Err(e) = acc.push(r) {
                        push_err.get_or_insert(e);
                    }
                }
            })?;
            if let Some(e) = push_err {
                return Err(e);
            }
            if summary.completed.is_empty() {
                return Err(Error::Estimation(format!(
                    "every chain of component {} aborted",
                    comp.name
                )));
            }
            let chi = acc.susceptibilities()?;
            log::debug!("component {} done ({} draws)", comp.name, acc.count());
            Ok((
                ColumnReport {
                    name: comp.name.clone(),
                    seed: cfg.seed,
                    chains_completed: summary.completed.len(),
                    chains_aborted: summary.failures.len(),
                    draws: acc.count(),
                },
                chi,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = samples
        .iter()
        .zip(labels)
        .map(|(s, l)| RowMeta {
            sample_id: s.id,
            tag: s.tag.clone(),
            labels: *l,
        })
        .collect();
    SusceptibilityMatrix::from_columns(step, rows, columns, sgld.clone())
}

/// Mean row over the samples carrying `pattern`.
pub fn per_pattern_susceptibility(
    matrix: &SusceptibilityMatrix,
    pattern: Pattern,
) -> Result<Vec<f64>> {
    mean_of_rows(matrix, |r| r.labels.has(pattern))
        .ok_or(Error::Undefined("no samples carry the pattern"))
}

fn mean_of_rows(
    matrix: &SusceptibilityMatrix,
    keep: impl Fn(&RowMeta) -> bool,
) -> Option<Vec<f64>> {
    let h = matrix.n_cols();
    let mut sum = vec![0.0; h];
    let mut count = 0usize;
    for (i, meta) in matrix.rows.iter().enumerate() {
        if keep(meta) {
            count += 1;
            for (s, v) in sum.iter_mut().zip(matrix.row(i)) {
                *s += v;
            }
        }
    }
    (count > 0).then(|| sum.into_iter().map(|s| s / count as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternEntry {
    pub pattern: Pattern,
    pub count: usize,
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSusceptibilityTable {
    pub step: Option<u64>,
    pub components: Vec<String>,
    /// Patterns with at least one sample, in canonical pattern order.
    pub entries: Vec<PatternEntry>,
    /// Patterns no sample carries.
    pub empty: Vec<Pattern>,
}

impl PatternSusceptibilityTable {
    pub fn from_matrix(matrix: &SusceptibilityMatrix) -> Self {
        let mut entries = Vec::new();
        let mut empty = Vec::new();
        for p in Pattern::ALL {
            let count = matrix.rows.iter().filter(|r| r.labels.has(p)).count();
            match per_pattern_susceptibility(matrix, p) {
                Ok(mean) => entries.push(PatternEntry {
                    pattern: p,
                    count,
                    mean,
                }),
                Err(_) => empty.push(p),
            }
        }
        Self {
            step: matrix.step,
            components: matrix.components.clone(),
            entries,
            empty,
        }
    }

    pub fn get(&self, pattern: Pattern) -> Option<&PatternEntry> {
        self.entries.iter().find(|e| e.pattern == pattern)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeseriesRow {
    pub step: u64,
    pub pattern: Pattern,
    pub component: String,
    pub value: f64,
    pub count: usize,
}

/// Per-pattern tables over training, sorted by step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternTimeseries {
    pub components: Vec<String>,
    pub tables: Vec<PatternSusceptibilityTable>,
    /// Steps whose matrix could not be produced, with the reason.
    pub failures: Vec<(u64, String)>,
}

impl PatternTimeseries {
    pub fn steps(&self) -> Vec<u64> {
        self.tables.iter().filter_map(|t| t.step).collect()
    }

    /// Long format: one row per (step, pattern, component).
    pub fn rows(&self) -> Vec<TimeseriesRow> {
        let mut out = Vec::new();
        for t in &self.tables {
            for e in &t.entries {
                for (c, &v) in self.components.iter().zip(&e.mean) {
                    out.push(TimeseriesRow {
                        step: t.step.unwrap_or(0),
                        pattern: e.pattern,
                        component: c.clone(),
                        value: v,
                        count: e.count,
                    });
                }
            }
        }
        out
    }
}

/// Assemble per-checkpoint results. Failed checkpoints are recorded and
/// skipped; at least one must succeed.
pub fn pattern_timeseries_from_matrices(
    results: Vec<(u64, Result<SusceptibilityMatrix>)>,
) -> Result<PatternTimeseries> {
    let mut tables = Vec::new();
    let mut failures = Vec::new();
    let mut components: Option<Vec<String>> = None;
    for (step, res) in results {
        match res {
            Ok(m) => {
                if let Some(c) = &components {
                    if c != &m.components {
                        return Err(Error::Invalid(format!(
                            "step {step} has different components"
                        )));
                    }
                } else {
                    components = Some(m.components.clone());
                }
                let mut table = PatternSusceptibilityTable::from_matrix(&m);
                table.step = Some(step);
                tables.push(table);
            }
            Err(e) => {
                log::warn!("step {step}: {e}");
                failures.push((step, e.to_string()));
            }
        }
    }
    let components =
        components.ok_or_else(|| Error::Estimation("no checkpoint produced a matrix".into()))?;
    tables.sort_by_key(|t| t.step);
    failures.sort_by_key(|f| f.0);
    Ok(PatternTimeseries {
        components,
        tables,
        failures,
    })
}

/// Build a matrix at every checkpoint file and tabulate patterns over
/// training steps.
pub fn per_pattern_timeseries(
    checkpoints: &[&Path],
    samples: &[Sample],
    labels: &[PatternLabelSet],
    pool: &[Sample],
    sgld: &SGLDConfig,
) -> Result<PatternTimeseries> {
    if checkpoints.is_empty() {
        return Err(Error::Invalid("no checkpoints".into()));
    }
    let mut results = Vec::new();
    for (k, path) in checkpoints.iter().enumerate() {
        let res = load_checkpoint(path).and_then(|ck| {
            let model = Transformer::new(ck.meta.model.clone())?;
            build_susceptibility_matrix(
                &model,
                &ck.params.values,
                Some(ck.meta.step),
                samples,
                labels,
                pool,
                sgld,
            )
        });
        let step = match &res {
            Ok(m) => m.step.unwrap_or(k as u64),
            Err(_) => k as u64,
        };
        results.push((step, res));
    }
    pattern_timeseries_from_matrices(results)
}

pub const DEFAULT_SPACING_THRESHOLDS: std::ops::RangeInclusive<usize> = 1..=80;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpacingBucket {
    pub threshold: usize,
    pub count: usize,
    /// `None` when no spacing sample reaches the threshold.
    pub mean: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalSpacingTable {
    pub components: Vec<String>,
    pub buckets: Vec<SpacingBucket>,
}

/// For each threshold `m`, the mean row over spacing samples preceded by
/// at least `m` spacing tokens.
pub fn conditional_spacing_susceptibility(
    matrix: &SusceptibilityMatrix,
    thresholds: &[usize],
) -> ConditionalSpacingTable {
    let buckets = thresholds
        .iter()
        .map(|&m| {
            let keep = |r: &RowMeta| r.labels.spacing && r.labels.preceding_spacing_count >= m;
            SpacingBucket {
                threshold: m,
                count: matrix.rows.iter().filter(|r| keep(r)).count(),
                mean: mean_of_rows(matrix, keep),
            }
        })
        .collect();
    ConditionalSpacingTable {
        components: matrix.components.clone(),
        buckets,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(chain: usize, draw: usize, delta: f64, centered: &[f64]) -> DrawRecord {
        DrawRecord {
            chain,
            draw,
            delta_loss: delta,
            centered_losses: centered.to_vec(),
        }
    }

    #[test]
    fn two_point_covariance_by_hand() {
        let records = [rec(0, 0, 0.0, &[1.0]), rec(0, 1, 2.0, &[-1.0])];
        assert_eq!(
            estimate_per_token_susceptibility(&records).unwrap(),
            vec![1.0]
        );
    }

    #[test]
    fn zero_second_factor_and_identical_draws_give_zero() {
        let records = [rec(0, 0, 0.3, &[0.0, 0.0]), rec(0, 1, -0.2, &[0.0, 0.0])];
        assert_eq!(
            estimate_per_token_susceptibility(&records).unwrap(),
            vec![0.0, 0.0]
        );
        let same = [rec(0, 0, 0.3, &[1.0, -1.0]), rec(1, 0, 0.3, &[1.0, -1.0])];
        assert_eq!(
            estimate_per_token_susceptibility(&same).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn fewer_than_two_draws_is_an_error() {
        assert!(estimate_per_token_susceptibility(&[]).is_err());
        assert!(estimate_per_token_susceptibility(&[rec(0, 0, 1.0, &[1.0])]).is_err());
    }

    #[test]
    fn co_rising_losses_mean_expression() {
        let records: Vec<_> = (0..5)
            .map(|t| rec(0, t, t as f64, &[t as f64, -(t as f64)]))
            .collect();
        let chi = estimate_per_token_susceptibility(&records).unwrap();
        assert!(chi[0] < 0.0 && chi[1] > 0.0);
    }

    #[test]
    fn pooling_order_does_not_matter() {
        let mut records: Vec<_> = (0..6)
            .map(|t| {
                rec(
                    t % 2,
                    t / 2,
                    (t as f64).sin(),
                    &[(t as f64).cos(), -(t as f64).cos()],
                )
            })
            .collect();
        let a = estimate_per_token_susceptibility(&records).unwrap();
        records.reverse();
        assert_eq!(a, estimate_per_token_susceptibility(&records).unwrap());
    }

    fn matrix(rows: &[(&[f64], PatternLabelSet)]) -> SusceptibilityMatrix {
        let h = rows[0].0.len();
        let metas = rows
            .iter()
            .enumerate()
            .map(|(i, (_, l))| RowMeta {
                sample_id: i,
                tag: "t".into(),
                labels: *l,
            })
            .collect();
        let cols = (0..h)
            .map(|j| {
                (
                    ColumnReport {
                        name: format!("0:{j}"),
                        seed: 0,
                        chains_completed: 1,
                        chains_aborted: 0,
                        draws: 2,
                    },
                    rows.iter().map(|(v, _)| v[j]).collect(),
                )
            })
            .collect();
        SusceptibilityMatrix::from_columns(Some(1), metas, cols, SGLDConfig::default()).unwrap()
    }

    fn spacing(count: usize) -> PatternLabelSet {
        PatternLabelSet {
            spacing: true,
            preceding_spacing_count: count,
            ..Default::default()
        }
    }

    #[test]
    fn pattern_mean_averages_flagged_rows_only() {
        let ws = PatternLabelSet {
            word_start: true,
            ..Default::default()
        };
        let m = matrix(&[
            (&[1.0, 3.0], ws),
            (&[9.0, 9.0], spacing(0)),
            (&[3.0, 5.0], ws),
        ]);
        assert_eq!(
            per_pattern_susceptibility(&m, Pattern::WordStart).unwrap(),
            vec![2.0, 4.0]
        );
        assert_eq!(
            per_pattern_susceptibility(&m, Pattern::Spacing).unwrap(),
            vec![9.0, 9.0]
        );
        assert!(per_pattern_susceptibility(&m, Pattern::Numeric).is_err());
        let table = PatternSusceptibilityTable::from_matrix(&m);
        assert_eq!(table.entries.len(), 2);
        assert_eq!(table.empty.len(), 6);
    }

    #[test]
    fn spacing_buckets_follow_minimum_counts() {
        let m = matrix(&[
            (&[1.0], spacing(1)),
            (&[3.0], spacing(3)),
            (&[7.0], spacing(0)),
        ]);
        let t = conditional_spacing_susceptibility(&m, &[1, 2, 3, 4]);
        assert_eq!(t.buckets[0].mean, Some(vec![2.0]));
        assert_eq!(t.buckets[1].mean, Some(vec![3.0]));
        assert_eq!(t.buckets[2].count, 1);
        assert_eq!(t.buckets[3].mean, None);
        assert_eq!(t.buckets[3].count, 0);
    }

    #[test]
    fn timeseries_is_sorted_and_keeps_failures() {
        let m = matrix(&[(&[1.0], spacing(1)), (&[3.0], spacing(3))]);
        let ts = pattern_timeseries_from_matrices(vec![
            (30, Ok(m.clone())),
            (10, Ok(m.clone())),
            (20, Err(Error::Estimation("boom".into()))),
        ])
        .unwrap();
        assert_eq!(ts.steps(), vec![10, 30]);
        assert_eq!(ts.failures.len(), 1);
        assert_eq!(ts.rows().len(), 2);
    }
}
