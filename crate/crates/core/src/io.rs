//! Delimited-text and JSON files exchanged between pipeline stages.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{Composition, PCAResult, Sign};
use crate::corpus::Sample;
use crate::embedding::{AxisOverlay, EmbeddingResult};
use crate::error::{Error, Result};
use crate::patterns::{Pattern, PatternLabelSet};
use crate::sampler::SGLDConfig;
use crate::susceptibility::{
    ColumnReport, ConditionalSpacingTable, PatternTimeseries, RowMeta, SusceptibilityMatrix,
};
use crate::tokenizer::TokenId;

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        what: "delimited file",
        reason: format!("{}: {e}", path.display()),
    }
}

fn writer(path: &Path, delimiter: u8) -> Result<csv::Writer<fs::File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_path(path)
        .map_err(|e| csv_err(path, e))
}

fn reader(path: &Path, delimiter: u8) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .from_path(path)
        .map_err(|e| csv_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format {
        what: "json",
        reason: e.to_string(),
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        what: "json",
        reason: format!("{}: {e}", path.display()),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRecord {
    id: usize,
    tag: String,
    doc_index: usize,
    position: usize,
    context: String,
    target: TokenId,
    lookahead: Option<TokenId>,
    word_start: u8,
    word_part: u8,
    word_end: u8,
    induction: u8,
    spacing: u8,
    delimiter: u8,
    formatting: u8,
    numeric: u8,
    preceding_spacing_count: usize,
    word_end_truncated: u8,
}

/// Tab-separated, one row per sample with its context ids, target, pattern
/// flags and preceding-spacing count.
pub fn write_samples(path: &Path, samples: &[Sample], labels: &[PatternLabelSet]) -> Result<()> {
    if samples.len() != labels.len() {
        return Err(Error::Invalid("samples and labels differ in length".into()));
    }
    let mut w = writer(path, b'\t')?;
    for (s, l) in samples.iter().zip(labels) {
        let rec = SampleRecord {
            id: s.id,
            tag: s.tag.clone(),
            doc_index: s.doc_index,
            position: s.position,
            context: s
                .context
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(" "),
            target: s.target,
            lookahead: s.lookahead,
            word_start: l.word_start as u8,
            word_part: l.word_part as u8,
            word_end: l.word_end as u8,
            induction: l.induction as u8,
            spacing: l.spacing as u8,
            delimiter: l.delimiter as u8,
            formatting: l.formatting as u8,
            numeric: l.numeric as u8,
            preceding_spacing_count: l.preceding_spacing_count,
            word_end_truncated: l.word_end_truncated as u8,
        };
        w.serialize(rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_samples(path: &Path) -> Result<(Vec<Sample>, Vec<PatternLabelSet>)> {
    let mut r = reader(path, b'\t')?;
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for rec in r.deserialize::<SampleRecord>() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let context = rec
            .context
            .split_whitespace()
            .map(|t| t.parse::<TokenId>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format {
                what: "samples",
                reason: format!("sample {}: {e}", rec.id),
            })?;
        samples.push(Sample {
            id: rec.id,
            tag: rec.tag,
            doc_index: rec.doc_index,
            position: rec.position,
            context,
            target: rec.target,
            lookahead: rec.lookahead,
        });
        labels.push(PatternLabelSet {
            word_start: rec.word_start != 0,
            word_part: rec.word_part != 0,
            word_end: rec.word_end != 0,
            induction: rec.induction != 0,
            spacing: rec.spacing != 0,
            delimiter: rec.delimiter != 0,
            formatting: rec.formatting != 0,
            numeric: rec.numeric != 0,
            preceding_spacing_count: rec.preceding_spacing_count,
            word_end_truncated: rec.word_end_truncated != 0,
        });
    }
    Ok((samples, labels))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub step: Option<u64>,
    pub components: Vec<String>,
    pub sgld: SGLDConfig,
    pub columns: Vec<ColumnReport>,
    pub rows: Vec<RowMeta>,
}

/// `matrix.csv` becomes `matrix.meta.json`.
pub fn matrix_meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Comma-separated `sample_id,<component>...` plus a JSON sidecar with the
/// step, sampler settings and per-row pattern flags.
pub fn write_matrix(path: &Path, m: &SusceptibilityMatrix) -> Result<()> {
    let mut w = writer(path, b',')?;
    let mut header = vec!["sample_id".to_string()];
    header.extend(m.components.iter().cloned());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (i, r) in m.rows.iter().enumerate() {
        let mut rec = vec![r.sample_id.to_string()];
        rec.extend(m.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let meta = MatrixMeta {
        step: m.step,
        components: m.components.clone(),
        sgld: m.sgld.clone(),
        columns: m.columns.clone(),
        rows: m.rows.clone(),
    };
    write_json(&matrix_meta_path(path), &meta)
}

pub fn read_matrix(path: &Path) -> Result<SusceptibilityMatrix> {
    let meta: MatrixMeta = read_json(&matrix_meta_path(path))?;
    let mut r = reader(path, b',')?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let components: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if components != meta.components {
        return Err(Error::Format {
            what: "matrix",
            reason: "header does not match the sidecar component list".into(),
        });
    }
    let mut values = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let id: usize = rec[0].parse().map_err(|_| Error::Format {
            what: "matrix",
            reason: format!("bad sample id {:?}", &rec[0]),
        })?;
        if meta.rows.get(i).map(|r| r.sample_id) != Some(id) {
            return Err(Error::Format {
                what: "matrix",
                reason: format!("row {i} has sample id {id}, sidecar disagrees"),
            });
        }
        for f in rec.iter().skip(1) {
            values.push(f.parse::<f64>().map_err(|_| Error::Format {
                what: "matrix",
                reason: format!("bad value {f:?} in row {i}"),
            })?);
        }
    }
    if values.len() != meta.rows.len() * components.len() {
        return Err(Error::Format {
            what: "matrix",
            reason: "row count does not match the sidecar".into(),
        });
    }
    Ok(SusceptibilityMatrix {
        step: meta.step,
        components,
        rows: meta.rows,
        values,
        sgld: meta.sgld,
        columns: meta.columns,
    })
}

/// `loadings.tsv` (one row per kept column, one column per PC) and
/// `explained_variance.tsv` in `dir`.
pub fn write_pca_report(dir: &Path, pca: &PCAResult, column_names: &[String]) -> Result<()> {
    let k = pca.n_components();
    let path = dir.join("loadings.tsv");
    let mut w = writer(&path, b'\t')?;
    let mut header = vec!["component".to_string()];
    header.extend((1..=k).map(|i| format!("PC{i}")));
    w.write_record(&header).map_err(|e| csv_err(&path, e))?;
    for (f, &col) in pca.columns.iter().enumerate() {
        let name = column_names
            .get(col)
            .cloned()
            .unwrap_or_else(|| col.to_string());
        let mut rec = vec![name];
        rec.extend((0..k).map(|pc| pca.loadings[f * k + pc].to_string()));
        w.write_record(&rec).map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("explained_variance.tsv");
    let mut w = writer(&path, b'\t')?;
    w.write_record(["pc", "eigenvalue", "explained_variance", "cumulative"])
        .map_err(|e| csv_err(&path, e))?;
    let mut cum = 0.0;
    for pc in 0..k {
        cum += pca.explained_variance[pc];
        w.write_record([
            format!("PC{}", pc + 1),
            pca.eigenvalues[pc].to_string(),
            pca.explained_variance[pc].to_string(),
            cum.to_string(),
        ])
        .map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Patterns as rows, one column per (PC, sign) selection such as `PC1+`.
/// Selections without rows leave their column blank.
pub fn write_composition_table(path: &Path, comps: &[Composition]) -> Result<()> {
    let mut w = writer(path, b'\t')?;
    let mut header = vec!["pattern".to_string()];
    header.extend(comps.iter().map(|c| {
        let sign = match c.sign {
            Sign::Positive => '+',
            Sign::Negative => '-',
        };
        format!("PC{}{sign}", c.pc + 1)
    }));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for p in Pattern::ALL {
        let mut rec = vec![p.name().to_string()];
        rec.extend(
            comps
                .iter()
                .map(|c| c.percent(p).map_or(String::new(), |v| format!("{v:.2}"))),
        );
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    let mut sizes = vec!["n".to_string()];
    sizes.extend(comps.iter().map(|c| c.rows.len().to_string()));
    w.write_record(&sizes).map_err(|e| csv_err(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

const AXES: [&str; 3] = ["x", "y", "z"];

/// `sample_id,x,y[,z]`.
pub fn write_embedding(path: &Path, sample_ids: &[usize], e: &EmbeddingResult) -> Result<()> {
    if sample_ids.len() != e.n {
        return Err(Error::Invalid(
            "sample ids do not align with the embedding".into(),
        ));
    }
    let mut w = writer(path, b',')?;
    let mut header = vec!["sample_id"];
    header.extend(&AXES[..e.dims]);
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (i, id) in sample_ids.iter().enumerate() {
        let mut rec = vec![id.to_string()];
        rec.extend(e.point(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn parse_f64(path: &Path, s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Format {
        what: "delimited file",
        reason: format!("{}: bad number {s:?}", path.display()),
    })
}

/// Returns sample ids, dimension and row-major coordinates.
pub fn read_embedding(path: &Path) -> Result<(Vec<usize>, usize, Vec<f64>)> {
    let mut r = reader(path, b',')?;
    let dims = r
        .headers()
        .map_err(|e| csv_err(path, e))?
        .len()
        .saturating_sub(1);
    if !(dims == 2 || dims == 3) {
        return Err(Error::Format {
            what: "embedding",
            reason: format!("{dims} coordinate columns"),
        });
    }
    let mut ids = Vec::new();
    let mut coords = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        ids.push(parse_f64(path, &rec[0])? as usize);
        for f in rec.iter().skip(1) {
            coords.push(parse_f64(path, f)?);
        }
    }
    Ok((ids, dims, coords))
}

/// `pc_index,t,x,y[,z]` with one-based PC indices.
pub fn write_overlays(path: &Path, overlays: &[AxisOverlay]) -> Result<()> {
    let dims = overlays.first().map_or(2, |o| o.dims);
    let mut w = writer(path, b',')?;
    let mut header = vec!["pc_index", "t"];
    header.extend(&AXES[..dims]);
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for o in overlays {
        for (t, c) in o.t.iter().zip(o.coords.chunks(o.dims)) {
            let mut rec = vec![(o.pc + 1).to_string(), t.to_string()];
            rec.extend(c.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_overlays(path: &Path) -> Result<Vec<AxisOverlay>> {
    let mut r = reader(path, b',')?;
    let dims = r
        .headers()
        .map_err(|e| csv_err(path, e))?
        .len()
        .saturating_sub(2);
    let mut out: Vec<AxisOverlay> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let pc = (parse_f64(path, &rec[0])? as usize).saturating_sub(1);
        if out.last().map(|o| o.pc) != Some(pc) {
            out.push(AxisOverlay {
                pc,
                t: Vec::new(),
                coords: Vec::new(),
                dims,
                omitted: Vec::new(),
                method: crate::embedding::OVERLAY_METHOD.to_string(),
            });
        }
        let o = out.last_mut().unwrap();
        o.t.push(parse_f64(path, &rec[1])?);
        for f in rec.iter().skip(2) {
            o.coords.push(parse_f64(path, f)?);
        }
    }
    Ok(out)
}

/// Long format: `step, pattern, component, value, count`.
pub fn write_timeseries(path: &Path, ts: &PatternTimeseries) -> Result<()> {
    let mut w = writer(path, b'\t')?;
    w.write_record(["step", "pattern", "component", "value", "count"])
        .map_err(|e| csv_err(path, e))?;
    for r in ts.rows() {
        w.write_record([
            r.step.to_string(),
            r.pattern.name().to_string(),
            r.component,
            r.value.to_string(),
            r.count.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `threshold, count, component, mean`; the mean is blank for empty
/// buckets.
pub fn write_spacing_table(path: &Path, table: &ConditionalSpacingTable) -> Result<()> {
    let mut w = writer(path, b'\t')?;
    w.write_record(["threshold", "count", "component", "mean"])
        .map_err(|e| csv_err(path, e))?;
    for b in &table.buckets {
        for (c, name) in table.components.iter().enumerate() {
            let mean = b.mean.as_ref().map_or(String::new(), |m| m[c].to_string());
            w.write_record([
                b.threshold.to_string(),
                b.count.to_string(),
                name.clone(),
                mean,
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `value, frequency` for every observed value.
pub fn write_histogram(path: &Path, counts: &[usize]) -> Result<()> {
    let mut w = writer(path, b'\t')?;
    w.write_record(["preceding_spacing", "frequency"])
        .map_err(|e| csv_err(path, e))?;
    let max = counts.iter().copied().max().unwrap_or(0);
    let mut freq = vec![0usize; max + 1];
    for &c in counts {
        freq[c] += 1;
    }
    for (v, f) in freq.iter().enumerate().filter(|(_, &f)| f > 0) {
        w.write_record([v.to_string(), f.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
