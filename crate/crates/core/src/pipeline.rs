//! End-to-end run: corpus, tokenizer, training, samples, one susceptibility
//! matrix per checkpoint, analysis, embedding and figures, with a manifest
//! of seeds and output checksums.
//!
//! Stages hand data to each other through files in the run directory, so
//! every stage can also be run on its own from the command line.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    linear_separability, mean_susceptibility_alignment, pattern_pc_variance_fraction,
    pc_extreme_pattern_composition, pca, per_layer_pca, standardize, Composition, PCAResult, Sign,
};
use crate::checkpoint::load_checkpoint;
use crate::corpus::{
    estimate_bigram_table, load_corpus, read_manifest, read_texts, sample_contexts, Corpus, Sample,
};
use crate::embedding::{
    embed, embed_axis_overlay, neighborhood_preservation, EmbedConfig, OVERLAY_METHOD,
};
use crate::error::{Error, Result};
use crate::io;
use crate::model::{head_attention_scores, HeadScores, ModelConfig, Transformer};
use crate::patterns::{Pattern, PatternClassifier, PatternLabelSet};
use crate::render::{
    render_pattern_timeseries, render_scatter, render_spacing_bars, render_spacing_histogram,
    ColorScheme, ScatterOptions,
};
use crate::rng::derive_seed;
use crate::sampler::SGLDConfig;
use crate::susceptibility::{
    build_susceptibility_matrix, conditional_spacing_susceptibility,
    pattern_timeseries_from_matrices, PatternSusceptibilityTable, SusceptibilityMatrix,
    DEFAULT_SPACING_THRESHOLDS,
};
use crate::synth::{write_synthetic_corpus, SynthConfig};
use crate::tokenizer::{TokenId, Tokenizer};
use crate::trainer::{train_with_checkpoints, TrainConfig};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "SUSCEPT_ATLAS_THREADS";

/// Size the global rayon pool from [`THREADS_ENV`]. Returns the cap when one
/// was applied.
pub fn configure_threads() -> Result<Option<usize>> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::Config(format!(
            "{THREADS_ENV} must be a positive integer, got {v:?}"
        ))
    })?;
    // a pool that already exists keeps its size
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(Some(n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    /// Manifest of `path`/`tag` entries, relative to the config file.
    pub manifest: Option<PathBuf>,
    /// Generate a synthetic corpus instead.
    pub synthetic: Option<SynthConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    pub vocab_size: usize,
    /// Existing vocabulary file; training is skipped when set.
    pub vocab: Option<PathBuf>,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            vocab_size: 384,
            vocab: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplesConfig {
    /// Evaluation samples per corpus tag.
    pub per_tag: usize,
    /// Minibatch pool samples per corpus tag for the sampler.
    pub pool_per_tag: usize,
}

impl Default for SamplesConfig {
    fn default() -> Self {
        Self {
            per_tag: 150,
            pool_per_tag: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Also run PCA on each layer's columns separately.
    pub per_layer: bool,
    /// Fraction of same-sign rows in each composition table.
    pub quantile: f64,
    pub spacing_thresholds: Vec<usize>,
    /// Spacing samples with at least this many preceding spacing tokens are
    /// tested for linear separability from those with none.
    pub separability_min_count: usize,
    pub overlay_points: usize,
    /// Neighborhood size for the preservation diagnostic.
    pub preservation_k: usize,
    /// Random repeated blocks used to score heads.
    pub head_score_trials: usize,
    /// Layer-0 heads at or above this previous-token score, and later heads
    /// at or above `induction_threshold` prefix matching, form the
    /// induction circuit.
    pub previous_token_threshold: f64,
    pub induction_threshold: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            per_layer: true,
            quantile: 0.01,
            spacing_thresholds: DEFAULT_SPACING_THRESHOLDS.collect(),
            separability_min_count: 10,
            overlay_points: 50,
            preservation_k: 15,
            head_score_trials: 20,
            previous_token_threshold: 0.4,
            induction_threshold: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub scatter: ScatterOptions,
    pub colors: ColorScheme,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            scatter: ScatterOptions::default(),
            colors: ColorScheme::default(),
        }
    }
}

/// Whole-run configuration. Stage seeds are derived from `seed`; seed
/// fields inside the sections are overwritten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub tokenizer: TokenizerConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub samples: SamplesConfig,
    #[serde(default)]
    pub sgld: SGLDConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub embed: EmbedConfig,
    #[serde(default)]
    pub render: RenderConfig,
}

/// Stage indices fed to [`derive_seed`].
pub mod stage_seed {
    pub const CORPUS: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const SAMPLES: u64 = 3;
    pub const POOL: u64 = 4;
    pub const SGLD: u64 = 5;
    pub const EMBED: u64 = 6;
    pub const HEADS: u64 = 7;
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Copy with every stage seed derived from the global seed.
    pub fn with_derived_seeds(&self) -> Self {
        let mut c = self.clone();
        if let Some(s) = c.corpus.synthetic.as_mut() {
            s.seed = derive_seed(self.seed, &[stage_seed::CORPUS]);
        }
        c.train.seed = derive_seed(self.seed, &[stage_seed::TRAIN]);
        c.sgld.seed = derive_seed(self.seed, &[stage_seed::SGLD]);
        c.embed.seed = derive_seed(self.seed, &[stage_seed::EMBED]);
        c
    }

    pub fn seeds(&self) -> BTreeMap<String, u64> {
        let c = self.with_derived_seeds();
        let mut m = BTreeMap::new();
        m.insert("global".into(), self.seed);
        if let Some(s) = &c.corpus.synthetic {
            m.insert("corpus".into(), s.seed);
        }
        m.insert("train".into(), c.train.seed);
        m.insert(
            "samples".into(),
            derive_seed(self.seed, &[stage_seed::SAMPLES]),
        );
        m.insert("pool".into(), derive_seed(self.seed, &[stage_seed::POOL]));
        m.insert("sgld".into(), c.sgld.seed);
        m.insert("embed".into(), c.embed.seed);
        m.insert("heads".into(), derive_seed(self.seed, &[stage_seed::HEADS]));
        m
    }

    /// Checks every section; run before any computation.
    pub fn validate(&self, base: &Path) -> Result<()> {
        match (&self.corpus.manifest, &self.corpus.synthetic) {
            (None, None) => {
                return Err(Error::Config(
                    "corpus: set either manifest or synthetic".into(),
                ))
            }
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "corpus: manifest and synthetic are exclusive".into(),
                ))
            }
            (Some(m), None) => {
                let p = base.join(m);
                if !p.is_file() {
                    return Err(Error::Config(format!(
                        "corpus manifest {} does not exist",
                        p.display()
                    )));
                }
            }
            (None, Some(s)) => {
                if s.docs_per_tag == 0 {
                    return Err(Error::Config(
                        "corpus: docs_per_tag must be positive".into(),
                    ));
                }
            }
        }
        if let Some(v) = &self.tokenizer.vocab {
            if !base.join(v).is_file() {
                return Err(Error::Config(format!(
                    "vocabulary {} does not exist",
                    base.join(v).display()
                )));
            }
        } else if self.tokenizer.vocab_size < 257 {
            return Err(Error::Config(
                "tokenizer: vocab_size must exceed the 256 byte tokens".into(),
            ));
        }
        let mut model = self.model.clone();
        model.vocab_size = model.vocab_size.max(2);
        model.validate()?;
        self.train.validate()?;
        self.sgld.validate()?;
        self.embed.validate()?;
        self.render.colors.validate()?;
        if self.samples.per_tag == 0 || self.samples.pool_per_tag == 0 {
            return Err(Error::Config(
                "samples: per_tag and pool_per_tag must be positive".into(),
            ));
        }
        let a = &self.analysis;
        if !(a.quantile > 0.0 && a.quantile <= 1.0) {
            return Err(Error::Config(
                "analysis: quantile must lie in (0, 1]".into(),
            ));
        }
        if a.spacing_thresholds.is_empty() {
            return Err(Error::Config(
                "analysis: spacing_thresholds is empty".into(),
            ));
        }
        if a.preservation_k == 0 {
            return Err(Error::Config(
                "analysis: preservation_k must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Corpus texts and their tags. A synthetic corpus is written to
/// `out/corpus` first.
pub fn stage_corpus(
    cfg: &PipelineConfig,
    base: &Path,
    out: &Path,
) -> Result<(PathBuf, Vec<String>)> {
    let manifest = match (&cfg.corpus.manifest, &cfg.corpus.synthetic) {
        (Some(m), _) => base.join(m),
        (None, Some(s)) => write_synthetic_corpus(&out.join("corpus"), s)?,
        (None, None) => return Err(Error::Config("no corpus configured".into())),
    };
    let entries = read_manifest(&manifest)?;
    let texts = read_texts(&entries)?.into_iter().map(|(_, t)| t).collect();
    Ok((manifest, texts))
}

pub fn stage_tokenizer(
    cfg: &PipelineConfig,
    base: &Path,
    texts: &[String],
    out: &Path,
) -> Result<Tokenizer> {
    let tok = match &cfg.tokenizer.vocab {
        Some(v) => Tokenizer::load(&base.join(v))?,
        None => Tokenizer::train(texts, cfg.tokenizer.vocab_size)?,
    };
    let path = out.join("tokenizer").join("vocab.tsv");
    fs::create_dir_all(path.parent().unwrap()).map_err(|e| Error::io(&path, e))?;
    tok.save(&path)?;
    Ok(tok)
}

/// Evaluation samples with their labels, and the sampler's minibatch pool.
pub struct SampleStage {
    pub samples: Vec<Sample>,
    pub labels: Vec<PatternLabelSet>,
    pub pool: Vec<Sample>,
}

pub fn stage_samples(
    cfg: &PipelineConfig,
    corpus: &Corpus,
    tok: &Tokenizer,
    out: &Path,
) -> Result<SampleStage> {
    let k = cfg.model.max_context;
    let set = sample_contexts(
        corpus,
        cfg.samples.per_tag,
        k,
        derive_seed(cfg.seed, &[stage_seed::SAMPLES]),
    )?;
    let pool = sample_contexts(
        corpus,
        cfg.samples.pool_per_tag,
        k,
        derive_seed(cfg.seed, &[stage_seed::POOL]),
    )?;
    for tag in set.with_replacement.iter().chain(&pool.with_replacement) {
        log::warn!("tag {tag} was sampled with replacement");
    }
    let bigrams = estimate_bigram_table(corpus)?;
    let classifier = PatternClassifier::new(tok, &bigrams);
    let labels: Vec<PatternLabelSet> = set.samples.iter().map(|s| classifier.classify(s)).collect();
    let pool_labels: Vec<PatternLabelSet> = pool
        .samples
        .iter()
        .map(|s| classifier.classify(s))
        .collect();
    io::write_samples(
        &out.join("samples").join("samples.tsv"),
        &set.samples,
        &labels,
    )?;
    io::write_samples(
        &out.join("samples").join("pool.tsv"),
        &pool.samples,
        &pool_labels,
    )?;
    Ok(SampleStage {
        samples: set.samples,
        labels,
        pool: pool.samples,
    })
}

/// Tokens seen at least `min_count` times, for scoring heads on
/// in-distribution material. Falls back to every non-special token.
pub fn frequent_tokens(corpus: &Corpus, tok: &Tokenizer, min_count: usize) -> Vec<TokenId> {
    let mut freq = vec![0usize; tok.vocab_size()];
    for d in &corpus.documents {
        for &t in &d.tokens {
            freq[t as usize] += 1;
        }
    }
    let out: Vec<TokenId> = (0..tok.vocab_size() as TokenId)
        .filter(|&t| freq[t as usize] >= min_count && !tok.is_special(t))
        .collect();
    if out.is_empty() {
        (0..tok.vocab_size() as TokenId)
            .filter(|&t| !tok.is_special(t))
            .collect()
    } else {
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadReport {
    pub scores: HeadScores,
    pub in_induction_circuit: bool,
    /// Mean induction susceptibility; `None` without induction samples.
    pub induction_chi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionEntry {
    pub selection: String,
    pub size: usize,
    pub percentages: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerVariance {
    pub layer: usize,
    pub explained_variance: Vec<f64>,
    /// Share of each pattern subset's variance on this layer's PC2.
    pub pc2_fraction: BTreeMap<String, f64>,
}

/// Numbers computed for one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub step: Option<u64>,
    pub n_rows: usize,
    pub explained_variance: Vec<f64>,
    pub dropped_columns: Vec<String>,
    /// Correlation between mean row susceptibility and PC1 score.
    pub mean_alignment: Option<f64>,
    pub compositions: Vec<CompositionEntry>,
    pub per_layer: Vec<LayerVariance>,
    /// Accuracy separating spacing samples with many preceding spacing
    /// tokens from those with none.
    pub spacing_separability: Option<f64>,
    pub spacing_separability_counts: (usize, usize),
    pub heads: Vec<HeadReport>,
    pub neighborhood_preservation: Option<f64>,
}

fn composition_entry(c: &Composition) -> CompositionEntry {
    let sign = match c.sign {
        Sign::Positive => '+',
        Sign::Negative => '-',
    };
    CompositionEntry {
        selection: format!("PC{}{sign}", c.pc + 1),
        size: c.rows.len(),
        percentages: c
            .percentages
            .iter()
            .map(|(p, v)| (p.name().to_string(), *v))
            .collect(),
    }
}

fn compositions(
    pca: &PCAResult,
    m: &SusceptibilityMatrix,
    quantile: f64,
) -> Result<Vec<Composition>> {
    let labels = m.labels();
    let ids: Vec<usize> = m.rows.iter().map(|r| r.sample_id).collect();
    let mut out = Vec::new();
    for pc in 0..pca.n_components().min(2) {
        for sign in [Sign::Positive, Sign::Negative] {
            out.push(pc_extreme_pattern_composition(
                pca, &labels, &ids, pc, sign, quantile,
            )?);
        }
    }
    Ok(out)
}

/// Susceptibility matrix for one checkpoint, written as `matrix.csv` in
/// `dir`.
pub fn stage_susceptibility(
    checkpoint: &Path,
    samples: &SampleStage,
    sgld: &SGLDConfig,
    dir: &Path,
) -> Result<SusceptibilityMatrix> {
    let ck = load_checkpoint(checkpoint)?;
    let model = Transformer::new(ck.meta.model.clone())?;
    let m = build_susceptibility_matrix(
        &model,
        &ck.params.values,
        Some(ck.meta.step),
        &samples.samples,
        &samples.labels,
        &samples.pool,
        sgld,
    )?;
    io::write_matrix(&dir.join("matrix.csv"), &m)?;
    Ok(m)
}

/// PCA reports, composition tables, alignment, per-layer variance
/// fractions and spacing separability for one matrix.
pub fn stage_analyze(
    m: &SusceptibilityMatrix,
    cfg: &AnalysisConfig,
    heads_per_layer: usize,
    dir: &Path,
) -> Result<(AnalysisReport, PCAResult)> {
    let std = standardize(&m.values, m.n_cols())?;
    let p = pca(&std)?;
    io::write_pca_report(&dir.join("pca"), &p, &m.components)?;
    let comps = compositions(&p, m, cfg.quantile)?;
    io::write_composition_table(&dir.join("pca").join("composition.tsv"), &comps)?;
    let labels = m.labels();

    let mut per_layer = Vec::new();
    if cfg.per_layer
        && heads_per_layer > 0
        && m.n_cols() % heads_per_layer == 0
        && m.n_cols() > heads_per_layer
    {
        for (layer, lp) in per_layer_pca(m, heads_per_layer)? {
            io::write_pca_report(&dir.join(format!("pca_layer{layer}")), &lp, &m.components)?;
            let mut pc2_fraction = BTreeMap::new();
            if lp.n_components() >= 2 {
                for pat in Pattern::ALL {
                    if let Ok(f) = pattern_pc_variance_fraction(&lp, &labels, pat, 1) {
                        pc2_fraction.insert(pat.name().to_string(), f);
                    }
                }
            }
            per_layer.push(LayerVariance {
                layer,
                explained_variance: lp.explained_variance.clone(),
                pc2_fraction,
            });
        }
    }

    let hi: Vec<usize> = (0..m.n_rows())
        .filter(|&i| {
            labels[i].spacing && labels[i].preceding_spacing_count >= cfg.separability_min_count
        })
        .collect();
    let zero: Vec<usize> = (0..m.n_rows())
        .filter(|&i| labels[i].spacing && labels[i].preceding_spacing_count == 0)
        .collect();
    let spacing_separability = if hi.is_empty() || zero.is_empty() {
        None
    } else {
        let feats: Vec<Vec<f64>> = hi.iter().chain(&zero).map(|&i| m.row(i).to_vec()).collect();
        let positive: Vec<bool> = (0..feats.len()).map(|k| k < hi.len()).collect();
        Some(linear_separability(&feats, &positive)?)
    };
    let table = conditional_spacing_susceptibility(m, &cfg.spacing_thresholds);
    io::write_spacing_table(&dir.join("spacing_conditional.tsv"), &table)?;

    let report = AnalysisReport {
        step: m.step,
        n_rows: m.n_rows(),
        explained_variance: p.explained_variance.clone(),
        dropped_columns: std
            .dropped
            .iter()
            .map(|&j| m.components[j].clone())
            .collect(),
        mean_alignment: mean_susceptibility_alignment(m, &p).ok(),
        compositions: comps.iter().map(composition_entry).collect(),
        per_layer,
        spacing_separability,
        spacing_separability_counts: (hi.len(), zero.len()),
        heads: Vec::new(),
        neighborhood_preservation: None,
    };
    Ok((report, p))
}

/// Attention scores per head and the induction-circuit membership they
/// imply, joined with each head's mean induction susceptibility.
pub fn head_reports(
    model: &Transformer,
    w: &[f64],
    candidates: &[TokenId],
    m: &SusceptibilityMatrix,
    cfg: &AnalysisConfig,
    seed: u64,
) -> Result<Vec<HeadReport>> {
    let block = (model.config.max_context / 2).max(2);
    let scores = head_attention_scores(model, w, block, candidates, cfg.head_score_trials, seed)?;
    let table = PatternSusceptibilityTable::from_matrix(m);
    let induction = table.get(Pattern::Induction);
    Ok(scores
        .into_iter()
        .map(|s| {
            let in_circuit = if s.layer == 0 {
                s.previous_token >= cfg.previous_token_threshold
            } else {
                s.prefix_matching >= cfg.induction_threshold
            };
            let col = m.components.iter().position(|c| *c == s.name);
            HeadReport {
                induction_chi: induction.zip(col).map(|(e, c)| e.mean[c]),
                in_induction_circuit: in_circuit,
                scores: s,
            }
        })
        .collect())
}

/// Embedding, PC1/PC2 overlays and the scatter figure for one matrix.
pub fn stage_embed(
    m: &SusceptibilityMatrix,
    pca_result: &PCAResult,
    cfg: &PipelineConfig,
    dir: &Path,
) -> Result<f64> {
    let std = standardize(&m.values, m.n_cols())?;
    let e = embed(&std.data, std.n_cols(), &cfg.embed)?;
    let ids: Vec<usize> = m.rows.iter().map(|r| r.sample_id).collect();
    io::write_embedding(&dir.join("embedding.csv"), &ids, &e)?;
    let mut overlays = Vec::new();
    for pc in 0..pca_result.n_components().min(2) {
        overlays.push(embed_axis_overlay(
            &e,
            &std,
            pca_result,
            pc,
            cfg.analysis.overlay_points,
        )?);
    }
    io::write_overlays(&dir.join("overlays.csv"), &overlays)?;
    let mut opts = cfg.render.scatter.clone();
    if opts.title.is_none() {
        opts.title = m.step.map(|s| format!("Step {s}"));
    }
    let svg = render_scatter(
        &e.coords,
        e.dims,
        &m.rows,
        &cfg.render.colors,
        &overlays,
        &opts,
    )?;
    write_text(&dir.join("embedding.svg"), &svg)?;
    let k = cfg
        .analysis
        .preservation_k
        .min(m.n_rows().saturating_sub(1))
        .max(1);
    neighborhood_preservation(&std.data, std.n_cols(), &e.coords, e.dims, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStatus {
    pub name: String,
    pub ok: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub created_unix: u64,
    pub seeds: BTreeMap<String, u64>,
    pub model: ModelConfig,
    pub checkpoint_steps: Vec<u64>,
    pub axis_flips: Vec<bool>,
    pub overlay_method: String,
    pub threads: Option<usize>,
    pub stages: Vec<StageStatus>,
    pub outputs: Vec<OutputEntry>,
    /// True when every stage finished.
    pub complete: bool,
}

impl Manifest {
    /// Output paths and checksums, for comparing runs.
    pub fn checksums(&self) -> BTreeMap<String, String> {
        self.outputs
            .iter()
            .map(|o| (o.path.clone(), o.sha256.clone()))
            .collect()
    }
}

fn collect_outputs(root: &Path, dir: &Path, out: &mut Vec<OutputEntry>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_outputs(root, &p, out)?;
        } else if p.file_name().is_some_and(|n| n != "manifest.json") {
            let rel = p
                .strip_prefix(root)
                .unwrap_or(&p)
                .to_string_lossy()
                .replace('\\', "/");
            out.push(OutputEntry {
                path: rel,
                sha256: sha256_file(&p)?,
            });
        }
    }
    Ok(())
}

pub fn step_dir(out: &Path, step: u64) -> PathBuf {
    out.join("steps").join(format!("step-{step:06}"))
}

/// Run every stage into `out`. Paths in `cfg` are resolved against `base`.
/// A failing checkpoint is recorded and the remaining checkpoints still
/// run; failures before the per-checkpoint stages abort the run.
pub fn run_pipeline(cfg: &PipelineConfig, base: &Path, out: &Path) -> Result<Manifest> {
    cfg.validate(base)?;
    let threads = configure_threads()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    // derived seeds can exceed the TOML integer range; they go to the manifest
    write_text(&out.join("config.toml"), &cfg.to_toml()?)?;
    let cfg = cfg.with_derived_seeds();
    let mut stages = Vec::new();
    let ok = |name: &str| StageStatus {
        name: name.into(),
        ok: true,
        error: None,
    };

    let (manifest_path, texts) = stage_corpus(&cfg, base, out)?;
    stages.push(ok("corpus"));
    let tok = stage_tokenizer(&cfg, base, &texts, out)?;
    stages.push(ok("tokenizer"));
    let corpus = load_corpus(&read_manifest(&manifest_path)?, &tok)?;

    let mut model_cfg = cfg.model.clone();
    model_cfg.vocab_size = tok.vocab_size();
    let trained = train_with_checkpoints(&model_cfg, &corpus, &cfg.train, &out.join("train"))?;
    stages.push(ok("train"));

    let samples = stage_samples(&cfg, &corpus, &tok, out)?;
    stages.push(ok("samples"));
    let spacing_counts: Vec<usize> = samples
        .labels
        .iter()
        .filter(|l| l.spacing)
        .map(|l| l.preceding_spacing_count)
        .collect();
    io::write_histogram(&out.join("spacing_histogram.tsv"), &spacing_counts)?;
    if !spacing_counts.is_empty() {
        write_text(
            &out.join("spacing_histogram.svg"),
            &render_spacing_histogram(&spacing_counts)?,
        )?;
    }

    let candidates = frequent_tokens(&corpus, &tok, 20);
    let model = Transformer::new(model_cfg.clone())?;
    let mut matrices = Vec::new();
    for (step, path) in &trained.checkpoints {
        let step = *step as u64;
        let dir = step_dir(out, step);
        let res = (|| -> Result<SusceptibilityMatrix> {
            let m = stage_susceptibility(path, &samples, &cfg.sgld, &dir)?;
            let (mut report, p) =
                stage_analyze(&m, &cfg.analysis, model_cfg.heads_per_layer, &dir)?;
            let ck = load_checkpoint(path)?;
            let heads_seed = derive_seed(cfg.seed, &[stage_seed::HEADS]);
            report.heads = head_reports(
                &model,
                &ck.params.values,
                &candidates,
                &m,
                &cfg.analysis,
                heads_seed,
            )?;
            let table = conditional_spacing_susceptibility(&m, &cfg.analysis.spacing_thresholds);
            write_text(&dir.join("spacing_bars.svg"), &render_spacing_bars(&table)?)?;
            report.neighborhood_preservation = Some(stage_embed(&m, &p, &cfg, &dir)?);
            io::write_json(&dir.join("analysis.json"), &report)?;
            Ok(m)
        })();
        match &res {
            Ok(_) => stages.push(ok(&format!("step {step}"))),
            Err(e) => {
                log::error!("checkpoint {step}: {e}");
                stages.push(StageStatus {
                    name: format!("step {step}"),
                    ok: false,
                    error: Some(e.to_string()),
                });
            }
        }
        matrices.push((step, res));
    }

    if matrices.iter().any(|(_, r)| r.is_ok()) {
        let ts = pattern_timeseries_from_matrices(matrices)?;
        io::write_timeseries(&out.join("timeseries.tsv"), &ts)?;
        write_text(
            &out.join("timeseries.svg"),
            &render_pattern_timeseries(&ts, &cfg.render.colors)?,
        )?;
        stages.push(ok("timeseries"));
    } else {
        stages.push(StageStatus {
            name: "timeseries".into(),
            ok: false,
            error: Some("no checkpoint produced a matrix".into()),
        });
    }

    let mut outputs = Vec::new();
    collect_outputs(out, out, &mut outputs)?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        seeds: cfg.seeds(),
        model: model_cfg,
        checkpoint_steps: trained.checkpoints.iter().map(|c| c.0 as u64).collect(),
        axis_flips: cfg.embed.flip.clone(),
        overlay_method: OVERLAY_METHOD.to_string(),
        threads,
        complete: stages.iter().all(|s| s.ok),
        stages,
        outputs,
    };
    io::write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
