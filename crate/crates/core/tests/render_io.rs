use roxmltree::{Document, Node};

use suscept_atlas::corpus::Sample;
use suscept_atlas::embedding::AxisOverlay;
use suscept_atlas::io;
use suscept_atlas::patterns::{Pattern, PatternLabelSet};
use suscept_atlas::render::*;
use suscept_atlas::sampler::SGLDConfig;
use suscept_atlas::susceptibility::*;

fn labels(ps: &[Pattern]) -> PatternLabelSet {
    let mut l = PatternLabelSet::default();
    for &p in ps {
        l.set(p, true);
    }
    l
}

fn matrix(n: usize, heads: &[&str], step: Option<u64>) -> SusceptibilityMatrix {
    let rows = (0..n)
        .map(|i| RowMeta {
            sample_id: 100 + i,
            tag: if i % 2 == 0 { "prose" } else { "code" }.into(),
            labels: PatternLabelSet {
                spacing: i % 3 == 0,
                word_start: i % 3 == 1,
                preceding_spacing_count: i,
                ..Default::default()
            },
        })
        .collect();
    let cols = heads
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let report = ColumnReport {
                name: name.to_string(),
                seed: j as u64,
                chains_completed: 4,
                chains_aborted: 0,
                draws: 100,
            };
            let col = (0..n)
                .map(|i| ((i * 7 + j * 3) % 11) as f64 * 1e-3 - 4e-3)
                .collect();
            (report, col)
        })
        .collect();
    SusceptibilityMatrix::from_columns(step, rows, cols, SGLDConfig::default()).unwrap()
}

fn with_class<'a>(doc: &'a Document, class: &str) -> Vec<Node<'a, 'a>> {
    doc.descendants()
        .filter(|n| n.attribute("class") == Some(class))
        .collect()
}

fn f(n: &Node, attr: &str) -> f64 {
    n.attribute(attr).unwrap().parse().unwrap()
}

#[test]
fn scatter_has_one_marker_per_row_and_labeled_overlays() {
    let m = matrix(25, &["0:0", "0:1"], Some(3));
    let coords: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
    let overlays: Vec<AxisOverlay> = (0..2)
        .map(|pc| AxisOverlay {
            pc,
            t: vec![-1.0, 0.0, 1.0],
            coords: vec![0.0, 0.0, 0.5, 0.5, 1.0, 1.0],
            dims: 2,
            omitted: vec![],
            method: "test".into(),
        })
        .collect();
    let svg = render_scatter(
        &coords,
        2,
        &m.rows,
        &ColorScheme::default(),
        &overlays,
        &ScatterOptions::default(),
    )
    .unwrap();
    let doc = Document::parse(&svg).unwrap();
    let markers = with_class(&doc, "marker");
    assert_eq!(markers.len(), 25);
    let ids: std::collections::BTreeSet<&str> = markers
        .iter()
        .map(|n| n.attribute("data-id").unwrap())
        .collect();
    assert_eq!(ids.len(), 25);
    let lines = with_class(&doc, "overlay");
    assert_eq!(lines.len(), 2);
    let pcs: Vec<&str> = lines
        .iter()
        .map(|n| n.attribute("data-pc").unwrap())
        .collect();
    assert_eq!(pcs, ["1", "2"]);
    let names: Vec<&str> = with_class(&doc, "overlay-label")
        .iter()
        .filter_map(|n| n.text())
        .collect();
    assert_eq!(names, ["PC1", "PC2"]);
    assert_eq!(with_class(&doc, "legend").len(), 1);
}

#[test]
fn scatter_resolves_colors_by_priority() {
    let scheme = ColorScheme::default();
    let rows = vec![RowMeta {
        sample_id: 0,
        tag: "t".into(),
        labels: labels(&[Pattern::Induction, Pattern::WordEnd]),
    }];
    let svg = render_scatter(
        &[0.0, 0.0],
        2,
        &rows,
        &scheme,
        &[],
        &ScatterOptions::default(),
    )
    .unwrap();
    let doc = Document::parse(&svg).unwrap();
    let marker = with_class(&doc, "marker")[0];
    assert_eq!(marker.attribute("data-pattern"), Some("induction"));
    assert_eq!(
        marker.attribute("fill"),
        Some(scheme.color(Pattern::Induction).hex().as_str())
    );
}

#[test]
fn scatter_rejects_misaligned_rows() {
    let m = matrix(4, &["0:0"], None);
    let err = render_scatter(
        &[0.0; 6],
        2,
        &m.rows,
        &ColorScheme::default(),
        &[],
        &ScatterOptions::default(),
    )
    .unwrap_err();
    assert!(err.to_string().contains("103"), "{err}");
}

fn timeseries(heads: &[String], steps: &[u64], drop_at: Option<u64>) -> PatternTimeseries {
    let results = steps
        .iter()
        .map(|&s| {
            let mut m = matrix(
                12,
                &heads.iter().map(String::as_str).collect::<Vec<_>>(),
                Some(s),
            );
            if Some(s) == drop_at {
                for r in &mut m.rows {
                    r.labels.word_start = false;
                }
            }
            (s, Ok(m))
        })
        .collect();
    pattern_timeseries_from_matrices(results).unwrap()
}

#[test]
fn timeseries_has_sixteen_panels_with_layer_frames() {
    let heads: Vec<String> = (0..2)
        .flat_map(|l| (0..8).map(move |h| format!("{l}:{h}")))
        .collect();
    let ts = timeseries(&heads, &[10, 20, 30], None);
    let svg = render_pattern_timeseries(&ts, &ColorScheme::default()).unwrap();
    let doc = Document::parse(&svg).unwrap();
    let panels = with_class(&doc, "panel");
    assert_eq!(panels.len(), 16);
    for (k, p) in panels.iter().enumerate() {
        assert_eq!(p.attribute("data-component"), Some(heads[k].as_str()));
        let frame = p
            .children()
            .find(|c| c.attribute("class") == Some("panel-frame"))
            .unwrap();
        let want = if k < 8 { "#808080" } else { "#000000" };
        assert_eq!(frame.attribute("stroke"), Some(want), "panel {k}");
    }
    let curve = panels[0]
        .descendants()
        .find(|c| c.attribute("data-pattern") == Some("spacing"))
        .unwrap();
    let values: Vec<f64> = curve
        .attribute("data-values")
        .unwrap()
        .split(' ')
        .map(|v| v.parse().unwrap())
        .collect();
    let entry = ts.tables[1].get(Pattern::Spacing).unwrap();
    assert_eq!(values[1], entry.mean[0]);
}

#[test]
fn missing_pattern_splits_the_curve() {
    let heads = vec!["0:0".to_string(), "1:0".to_string()];
    let ts = timeseries(&heads, &[1, 2, 3], Some(2));
    let svg = render_pattern_timeseries(&ts, &ColorScheme::default()).unwrap();
    let doc = Document::parse(&svg).unwrap();
    let panel = with_class(&doc, "panel")[0];
    let runs: Vec<&str> = panel
        .descendants()
        .filter(|c| c.attribute("data-pattern") == Some("word_start"))
        .map(|c| c.attribute("data-steps").unwrap())
        .collect();
    assert_eq!(runs, ["1", "3"]);
    let full: Vec<&str> = panel
        .descendants()
        .filter(|c| c.attribute("data-pattern") == Some("spacing"))
        .map(|c| c.attribute("data-steps").unwrap())
        .collect();
    assert_eq!(full, ["1 2 3"]);
}

#[test]
fn single_checkpoint_draws_flat_segments() {
    let heads = vec!["0:0".to_string()];
    let ts = timeseries(&heads, &[5], None);
    let svg = render_pattern_timeseries(&ts, &ColorScheme::default()).unwrap();
    let doc = Document::parse(&svg).unwrap();
    for c in with_class(&doc, "curve") {
        let pts: Vec<(f64, f64)> = c
            .attribute("points")
            .unwrap()
            .split(' ')
            .map(|p| {
                let (x, y) = p.split_once(',').unwrap();
                (x.parse().unwrap(), y.parse().unwrap())
            })
            .collect();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].1, pts[1].1);
        assert_eq!(c.attribute("data-steps"), Some("5"));
    }
}

#[test]
fn spacing_bar_heights_equal_table_values() {
    let m = matrix(40, &["0:0", "0:1", "1:0"], Some(1));
    let thresholds: Vec<usize> = (1..=80).collect();
    let table = conditional_spacing_susceptibility(&m, &thresholds);
    let svg = render_spacing_bars(&table).unwrap();
    let doc = Document::parse(&svg).unwrap();
    let groups = with_class(&doc, "bar-group");
    assert_eq!(groups.len(), 3);
    for (c, g) in groups.iter().enumerate() {
        let scale = f(g, "data-scale");
        for bar in g.children().filter(|n| n.attribute("class") == Some("bar")) {
            let t: usize = bar.attribute("data-threshold").unwrap().parse().unwrap();
            let bucket = table.buckets.iter().find(|b| b.threshold == t).unwrap();
            let chi = bucket.mean.as_ref().unwrap()[c];
            assert_eq!(f(&bar, "data-chi"), chi);
            assert!(
                (f(&bar, "height") - chi.abs() * scale).abs() <= 1e-9 * (1.0 + chi.abs() * scale)
            );
            assert_eq!(
                bar.attribute("fill"),
                Some(spacing_color(t).rgb().hex().as_str())
            );
        }
    }
    // counts only reach 39, so thresholds 40..=80 are empty
    let omitted = with_class(&doc, "omitted");
    assert_eq!(omitted.len(), 1);
    let listed: Vec<usize> = omitted[0]
        .attribute("data-thresholds")
        .unwrap()
        .split(' ')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(listed.first(), Some(&40));
    assert_eq!(listed.last(), Some(&80));
}

#[test]
fn single_threshold_gives_one_bar_per_group() {
    let m = matrix(20, &["0:0", "1:0"], None);
    let table = conditional_spacing_susceptibility(&m, &[1]);
    let doc_text = render_spacing_bars(&table).unwrap();
    let doc = Document::parse(&doc_text).unwrap();
    for g in with_class(&doc, "bar-group") {
        assert_eq!(
            g.children()
                .filter(|n| n.attribute("class") == Some("bar"))
                .count(),
            1
        );
    }
}

#[test]
fn histogram_bins_follow_log_counts() {
    // value v occurs 2^(6 - v) times
    let counts: Vec<usize> = (0..=6usize)
        .flat_map(|v| std::iter::repeat(v).take(1 << (6 - v)))
        .collect();
    let svg = render_spacing_histogram(&counts).unwrap();
    let doc = Document::parse(&svg).unwrap();
    let bins = with_class(&doc, "bin");
    assert_eq!(bins.len(), 7);
    let heights: Vec<f64> = bins.iter().map(|b| f(b, "height")).collect();
    let step = heights[0] - heights[1];
    assert!(step > 0.0);
    for w in heights.windows(2) {
        assert!(((w[0] - w[1]) - step).abs() < 1e-6, "{heights:?}");
    }
}

#[test]
fn histogram_edge_cases() {
    let svg = render_spacing_histogram(&[0, 0, 0]).unwrap();
    let doc = Document::parse(&svg).unwrap();
    let bins = with_class(&doc, "bin");
    assert_eq!(bins.len(), 1);
    assert_eq!(bins[0].attribute("data-count"), Some("3"));
    assert!(render_spacing_histogram(&[]).is_err());
}

#[test]
fn matrix_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let m = matrix(9, &["0:0", "0:1", "1:0", "1:1"], Some(42));
    let path = dir.path().join("m.csv");
    io::write_matrix(&path, &m).unwrap();
    let back = io::read_matrix(&path).unwrap();
    assert_eq!(back, m);
    let header = std::fs::read_to_string(&path).unwrap();
    assert!(header.starts_with("sample_id,0:0,0:1,1:0,1:1\n"));
}

#[test]
fn samples_tsv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let samples: Vec<Sample> = (0..5)
        .map(|i| Sample {
            id: i,
            tag: "code".into(),
            doc_index: i / 2,
            position: 3 + i,
            context: (0..3 + i as u32).collect(),
            target: 7,
            lookahead: if i == 4 { None } else { Some(9) },
        })
        .collect();
    let lab: Vec<PatternLabelSet> = (0..5)
        .map(|i| PatternLabelSet {
            spacing: i % 2 == 0,
            preceding_spacing_count: i,
            word_end_truncated: i == 4,
            ..Default::default()
        })
        .collect();
    let path = dir.path().join("s.tsv");
    io::write_samples(&path, &samples, &lab).unwrap();
    let (s2, l2) = io::read_samples(&path).unwrap();
    assert_eq!(s2, samples);
    assert_eq!(l2, lab);
}

#[test]
fn overlays_round_trip_with_one_based_index() {
    let dir = tempfile::tempdir().unwrap();
    let overlays = vec![AxisOverlay {
        pc: 1,
        t: vec![-0.5, 0.5],
        coords: vec![1.0, 2.0, 3.0, 4.0],
        dims: 2,
        omitted: vec![],
        method: suscept_atlas::embedding::OVERLAY_METHOD.into(),
    }];
    let path = dir.path().join("o.csv");
    io::write_overlays(&path, &overlays).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("2,"), "{text}");
    let back = io::read_overlays(&path).unwrap();
    assert_eq!(back[0].pc, 1);
    assert_eq!(back[0].coords, overlays[0].coords);
    assert_eq!(back[0].t, overlays[0].t);
}
