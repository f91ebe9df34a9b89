//! Render the time-series, spacing-bar and histogram figures from made-up
//! susceptibility values.

use suscept_atlas::patterns::PatternLabelSet;
use suscept_atlas::render::{
    render_pattern_timeseries, render_spacing_bars, render_spacing_histogram, ColorScheme,
};
use suscept_atlas::sampler::SGLDConfig;
use suscept_atlas::susceptibility::{
    conditional_spacing_susceptibility, pattern_timeseries_from_matrices, ColumnReport, RowMeta,
    SusceptibilityMatrix,
};
use suscept_atlas::{Error, Result};

fn matrix(step: u64, n: usize) -> Result<SusceptibilityMatrix> {
    let rows: Vec<RowMeta> = (0..n)
        .map(|i| RowMeta {
            sample_id: i,
            tag: "demo".into(),
            labels: PatternLabelSet {
                spacing: i % 4 == 0,
                word_start: i % 4 == 1,
                numeric: i % 4 == 2,
                preceding_spacing_count: i / 4,
                ..Default::default()
            },
        })
        .collect();
    let columns = ["0:0", "0:1", "1:0", "1:1"]
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let report = ColumnReport {
                name: name.to_string(),
                seed: 0,
                chains_completed: 1,
                chains_aborted: 0,
                draws: 1,
            };
            let growth = step as f64 / 100.0;
            let col = (0..n)
                .map(|i| growth * ((i % 4) as f64 - 1.5) * (j as f64 + 1.0) * 1e-3)
                .collect();
            (report, col)
        })
        .collect();
    SusceptibilityMatrix::from_columns(Some(step), rows, columns, SGLDConfig::default())
}

fn write(name: &str, svg: String) -> Result<()> {
    let path = std::env::temp_dir().join(name);
    std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> Result<()> {
    let steps = [100, 200, 400, 800];
    let results = steps.iter().map(|&s| (s, matrix(s, 80))).collect();
    let ts = pattern_timeseries_from_matrices(results)?;
    write(
        "timeseries.svg",
        render_pattern_timeseries(&ts, &ColorScheme::default())?,
    )?;

    let last = matrix(800, 80)?;
    let thresholds: Vec<usize> = (1..=30).collect();
    write(
        "spacing_bars.svg",
        render_spacing_bars(&conditional_spacing_susceptibility(&last, &thresholds))?,
    )?;

    let counts: Vec<usize> = last
        .rows
        .iter()
        .filter(|r| r.labels.spacing)
        .map(|r| r.labels.preceding_spacing_count)
        .collect();
    write("spacing_histogram.svg", render_spacing_histogram(&counts)?)?;
    Ok(())
}
