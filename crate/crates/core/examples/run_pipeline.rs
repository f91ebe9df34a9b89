//! Run every stage from a config file (default: the tiny smoke config) and
//! list what was written.

use std::path::PathBuf;

use suscept_atlas::pipeline::{run_pipeline, PipelineConfig};

fn main() -> suscept_atlas::Result<()> {
    let config = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.toml")
        });
    let out = std::env::temp_dir().join("suscept-atlas-run");
    let cfg = PipelineConfig::load(&config)?;
    let base = config.parent().unwrap_or(std::path::Path::new("."));
    let manifest = run_pipeline(&cfg, base, &out)?;
    for s in &manifest.stages {
        println!(
            "{:<12} {}",
            s.name,
            if s.ok {
                "ok"
            } else {
                s.error.as_deref().unwrap_or("failed")
            }
        );
    }
    println!("{} files under {}", manifest.outputs.len(), out.display());
    Ok(())
}
