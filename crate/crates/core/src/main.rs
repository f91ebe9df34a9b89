use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use suscept_atlas::analysis::{pca, standardize};
use suscept_atlas::corpus::{load_corpus, read_manifest};
use suscept_atlas::error::{Error, Result};
use suscept_atlas::io;
use suscept_atlas::pipeline::{self, configure_threads, PipelineConfig, SampleStage};
use suscept_atlas::render::{render_scatter, render_spacing_bars};
use suscept_atlas::susceptibility::conditional_spacing_susceptibility;
use suscept_atlas::tokenizer::Tokenizer;
use suscept_atlas::trainer::train_with_checkpoints;

#[derive(Parser)]
#[command(
    name = "suscept-atlas",
    version,
    about = "Per-token susceptibility atlas for small transformers"
)]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the corpus and tokenizer, then train and checkpoint a model.
    Train,
    /// Draw evaluation samples and the sampler pool, with pattern labels.
    SampleTokens {
        /// Use this vocabulary instead of training one.
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Estimate the susceptibility matrix for one checkpoint.
    #[command(alias = "sample")]
    Susceptibility(SusceptArgs),
    /// PCA, composition tables and spacing statistics for a matrix.
    Analyze {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        per_layer: Option<bool>,
    },
    /// UMAP embedding of a matrix with PC overlays.
    Embed {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        n_neighbors: Option<usize>,
        #[arg(long)]
        min_dist: Option<f64>,
        #[arg(long)]
        dims: Option<usize>,
    },
    /// Draw the scatter for an embedding and the spacing bars for its matrix.
    Render {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        embedding: PathBuf,
        #[arg(long)]
        overlays: Option<PathBuf>,
    },
    /// Run every stage.
    Pipeline,
}

#[derive(Args)]
struct SusceptArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    pool: PathBuf,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    nbeta: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    sgld_batch: Option<usize>,
}

/// Config and the directory its relative paths resolve against. Stage
/// seeds are not derived yet.
fn load_config(cli: &Cli, required: bool) -> Result<(PipelineConfig, PathBuf)> {
    let (mut cfg, base) = match &cli.config {
        Some(p) => {
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (PipelineConfig::load(p)?, base)
        }
        None if required => {
            return Err(Error::Config(
                "--config is required for this command".into(),
            ))
        }
        None => (
            PipelineConfig::from_toml("[corpus]\nsynthetic = {}\n")?,
            PathBuf::from("."),
        ),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate(&base)?;
    Ok((cfg, base))
}

fn derived((cfg, base): (PipelineConfig, PathBuf)) -> (PipelineConfig, PathBuf) {
    (cfg.with_derived_seeds(), base)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(cli: &Cli) -> Result<()> {
    let out = &cli.out;
    match &cli.command {
        Command::Train => {
            let (cfg, base) = derived(load_config(cli, true)?);
            let (manifest, texts) = pipeline::stage_corpus(&cfg, &base, out)?;
            let tok = pipeline::stage_tokenizer(&cfg, &base, &texts, out)?;
            let corpus = load_corpus(&read_manifest(&manifest)?, &tok)?;
            let mut model = cfg.model.clone();
            model.vocab_size = tok.vocab_size();
            let t = train_with_checkpoints(&model, &corpus, &cfg.train, &out.join("train"))?;
            for (step, path) in &t.checkpoints {
                println!("{step}\t{}", path.display());
            }
        }
        Command::SampleTokens { vocab } => {
            let (cfg, base) = derived(load_config(cli, true)?);
            let (manifest, texts) = pipeline::stage_corpus(&cfg, &base, out)?;
            let tok = match vocab {
                Some(v) => Tokenizer::load(v)?,
                None => pipeline::stage_tokenizer(&cfg, &base, &texts, out)?,
            };
            let corpus = load_corpus(&read_manifest(&manifest)?, &tok)?;
            let s = pipeline::stage_samples(&cfg, &corpus, &tok, out)?;
            println!("{} samples, {} pool", s.samples.len(), s.pool.len());
        }
        Command::Susceptibility(a) => {
            let (mut cfg, _) = derived(load_config(cli, false)?);
            let g = &mut cfg.sgld;
            g.gamma = a.gamma.unwrap_or(g.gamma);
            g.n_beta = a.nbeta.unwrap_or(g.n_beta);
            g.epsilon = a.eps.unwrap_or(g.epsilon);
            g.chains = a.chains.unwrap_or(g.chains);
            g.draws = a.draws.unwrap_or(g.draws);
            g.batch_size = a.sgld_batch.unwrap_or(g.batch_size);
            g.validate()?;
            let (samples, labels) = io::read_samples(&a.samples)?;
            let (pool, _) = io::read_samples(&a.pool)?;
            let stage = SampleStage {
                samples,
                labels,
                pool,
            };
            let m = pipeline::stage_susceptibility(&a.checkpoint, &stage, &cfg.sgld, out)?;
            println!(
                "{} x {} matrix in {}",
                m.n_rows(),
                m.n_cols(),
                out.join("matrix.csv").display()
            );
        }
        Command::Analyze { matrix, per_layer } => {
            let (mut cfg, _) = derived(load_config(cli, false)?);
            if let Some(p) = per_layer {
                cfg.analysis.per_layer = *p;
            }
            let m = io::read_matrix(matrix)?;
            let heads = cfg.model.heads_per_layer;
            let (report, _) = pipeline::stage_analyze(&m, &cfg.analysis, heads, out)?;
            write(
                &out.join("spacing_bars.svg"),
                &render_spacing_bars(&conditional_spacing_susceptibility(
                    &m,
                    &cfg.analysis.spacing_thresholds,
                ))?,
            )?;
            io::write_json(&out.join("analysis.json"), &report)?;
            println!("explained variance {:?}", report.explained_variance);
        }
        Command::Embed {
            matrix,
            n_neighbors,
            min_dist,
            dims,
        } => {
            let (mut cfg, _) = derived(load_config(cli, false)?);
            let e = &mut cfg.embed;
            e.n_neighbors = n_neighbors.unwrap_or(e.n_neighbors);
            e.min_dist = min_dist.unwrap_or(e.min_dist);
            e.dims = dims.unwrap_or(e.dims);
            cfg.embed.validate()?;
            let m = io::read_matrix(matrix)?;
            let std = standardize(&m.values, m.n_cols())?;
            let p = pca(&std)?;
            let preservation = pipeline::stage_embed(&m, &p, &cfg, out)?;
            println!("neighborhood preservation {preservation:.3}");
        }
        Command::Render {
            matrix,
            embedding,
            overlays,
        } => {
            let (cfg, _) = derived(load_config(cli, false)?);
            let m = io::read_matrix(matrix)?;
            let (ids, dims, coords) = io::read_embedding(embedding)?;
            let rows = ids
                .iter()
                .map(|id| {
                    m.rows
                        .iter()
                        .find(|r| r.sample_id == *id)
                        .cloned()
                        .ok_or_else(|| Error::Invalid(format!("sample {id} is not in the matrix")))
                })
                .collect::<Result<Vec<_>>>()?;
            let ov = match overlays {
                Some(p) => io::read_overlays(p)?,
                None => Vec::new(),
            };
            let svg = render_scatter(
                &coords,
                dims,
                &rows,
                &cfg.render.colors,
                &ov,
                &cfg.render.scatter,
            )?;
            write(&out.join("embedding.svg"), &svg)?;
            let table = conditional_spacing_susceptibility(&m, &cfg.analysis.spacing_thresholds);
            write(&out.join("spacing_bars.svg"), &render_spacing_bars(&table)?)?;
        }
        Command::Pipeline => {
            let (cfg, base) = load_config(cli, true)?;
            // run_pipeline derives the stage seeds itself
            let manifest = pipeline::run_pipeline(&cfg, &base, out)?;
            for s in &manifest.stages {
                match &s.error {
                    None => println!("ok\t{}", s.name),
                    Some(e) => println!("failed\t{}\t{e}", s.name),
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
