use serde::{Deserialize, Serialize};

use super::svg::{points_attr, Scale, Svg};
use super::{spacing_color, ColorScheme};
use crate::embedding::AxisOverlay;
use crate::error::{Error, Result};
use crate::patterns::Pattern;
use crate::susceptibility::{ConditionalSpacingTable, PatternTimeseries, RowMeta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScatterOptions {
    pub title: Option<String>,
    /// Color spacing samples by preceding-spacing count instead of the
    /// pattern color.
    pub spacing_gradient: bool,
    pub size: f64,
    pub marker_radius: f64,
}

impl Default for ScatterOptions {
    fn default() -> Self {
        Self {
            title: None,
            spacing_gradient: false,
            size: 800.0,
            marker_radius: 1.6,
        }
    }
}

fn s(v: f64) -> String {
    format!("{v:.3}")
}

fn legend(svg: &mut Svg, scheme: &ColorScheme, x: f64, y: f64) {
    svg.open("g", &[("class", "legend".into())]);
    let mut entries: Vec<(String, String)> = scheme
        .priority
        .iter()
        .map(|&p| (p.label().to_string(), scheme.color(p).hex()))
        .collect();
    entries.push(("No pattern".into(), scheme.unpatterned.hex()));
    for (i, (label, color)) in entries.iter().enumerate() {
        let yy = y + 16.0 * i as f64;
        svg.leaf(
            "rect",
            &[
                ("x", s(x)),
                ("y", s(yy - 9.0)),
                ("width", "10".into()),
                ("height", "10".into()),
                ("fill", color.clone()),
            ],
        );
        svg.text(
            &[("x", s(x + 15.0)), ("y", s(yy)), ("font-size", "11".into())],
            label,
        );
    }
    svg.close("g");
}

/// One marker per embedded sample plus labeled principal-axis polylines.
/// Three-dimensional embeddings are drawn on their first two axes.
pub fn render_scatter(
    coords: &[f64],
    dims: usize,
    rows: &[RowMeta],
    scheme: &ColorScheme,
    overlays: &[AxisOverlay],
    opts: &ScatterOptions,
) -> Result<String> {
    if !(dims == 2 || dims == 3) || coords.len() % dims != 0 {
        return Err(Error::Invalid(
            "coordinates must have 2 or 3 columns".into(),
        ));
    }
    let n = coords.len() / dims;
    if rows.len() < n {
        return Err(Error::Invalid(format!(
            "no row metadata for embedding rows {:?}",
            (rows.len()..n).collect::<Vec<_>>()
        )));
    }
    if rows.len() > n {
        return Err(Error::Invalid(format!(
            "no embedding coordinates for sample ids {:?}",
            rows[n..].iter().map(|r| r.sample_id).collect::<Vec<_>>()
        )));
    }
    let margin = 30.0;
    let plot = opts.size;
    let legend_w = 140.0;
    let xs = coords.iter().step_by(dims).copied();
    let ys = coords.iter().skip(1).step_by(dims).copied();
    let ox = overlays
        .iter()
        .flat_map(|o| o.coords.iter().step_by(o.dims).copied());
    let oy = overlays
        .iter()
        .flat_map(|o| o.coords.iter().skip(1).step_by(o.dims).copied());
    let sx = Scale::fit(xs.chain(ox), margin, margin + plot);
    let sy = Scale::fit(ys.chain(oy), margin + plot, margin);

    let mut svg = Svg::new(plot + 2.0 * margin + legend_w, plot + 2.0 * margin);
    if let Some(t) = &opts.title {
        svg.text(
            &[
                ("x", s(margin)),
                ("y", "20".into()),
                ("font-size", "14".into()),
            ],
            t,
        );
    }
    let rank = |r: &RowMeta| {
        scheme
            .resolve(&r.labels)
            .and_then(|p| scheme.priority.iter().position(|&q| q == p))
            .map_or(usize::MAX, |i| i)
    };
    // low-priority markers first so high-priority ones are drawn on top
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(rank(&rows[i])));
    svg.open("g", &[("class", "markers".into())]);
    for i in order {
        let r = &rows[i];
        let p = &coords[i * dims..(i + 1) * dims];
        let pattern = scheme.resolve(&r.labels);
        let fill = match pattern {
            Some(Pattern::Spacing) if opts.spacing_gradient => {
                spacing_color(r.labels.preceding_spacing_count).rgb()
            }
            _ => scheme.color_for(&r.labels),
        };
        svg.leaf(
            "circle",
            &[
                ("class", "marker".into()),
                ("data-id", r.sample_id.to_string()),
                ("data-pattern", pattern.map_or("none", |p| p.name()).into()),
                ("cx", s(sx.map(p[0]))),
                ("cy", s(sy.map(p[1]))),
                ("r", s(opts.marker_radius)),
                ("fill", fill.hex()),
            ],
        );
    }
    svg.close("g");
    for o in overlays {
        let pts: Vec<(f64, f64)> = o
            .coords
            .chunks(o.dims)
            .map(|c| (sx.map(c[0]), sy.map(c[1])))
            .collect();
        let label = format!("PC{}", o.pc + 1);
        svg.leaf(
            "polyline",
            &[
                ("class", "overlay".into()),
                ("data-pc", (o.pc + 1).to_string()),
                ("points", points_attr(&pts)),
                ("fill", "none".into()),
                ("stroke", "#000000".into()),
                ("stroke-width", "1.5".into()),
            ],
        );
        if let Some(&(x, y)) = pts.last() {
            svg.text(
                &[
                    ("class", "overlay-label".into()),
                    ("x", s(x + 4.0)),
                    ("y", s(y)),
                    ("font-size", "12".into()),
                ],
                &label,
            );
        }
    }
    legend(&mut svg, scheme, margin + plot + 15.0, margin + 10.0);
    Ok(svg.finish())
}

fn layer_of(component: &str) -> Option<usize> {
    component.split(':').next()?.parse().ok()
}

/// One panel per component in table order (layer-major for head names),
/// pattern-colored curves against a step axis shared by all panels.
/// Layer-0 panels are outlined gray, later layers black.
pub fn render_pattern_timeseries(ts: &PatternTimeseries, scheme: &ColorScheme) -> Result<String> {
    if ts.tables.is_empty() || ts.components.is_empty() {
        return Err(Error::Invalid("empty susceptibility time series".into()));
    }
    let steps: Vec<u64> = ts.tables.iter().map(|t| t.step.unwrap_or(0)).collect();
    let first_layer = layer_of(&ts.components[0]);
    let cols = match first_layer {
        Some(l) => ts
            .components
            .iter()
            .take_while(|c| layer_of(c) == Some(l))
            .count(),
        None => ts.components.len().min(8),
    }
    .max(1);
    let n_rows = ts.components.len().div_ceil(cols);
    let (pw, ph, gap, margin) = (180.0, 130.0, 18.0, 40.0);
    let legend_w = 140.0;
    let width = margin * 2.0 + cols as f64 * (pw + gap) + legend_w;
    let height = margin * 2.0 + n_rows as f64 * (ph + gap);
    let mut svg = Svg::new(width, height);

    for (c, name) in ts.components.iter().enumerate() {
        let x0 = margin + (c % cols) as f64 * (pw + gap);
        let y0 = margin + (c / cols) as f64 * (ph + gap);
        let sx = Scale::fit(steps.iter().map(|&v| v as f64), x0 + 6.0, x0 + pw - 6.0);
        let values = ts
            .tables
            .iter()
            .flat_map(|t| t.entries.iter().map(move |e| e.mean[c]));
        let sy = Scale::fit(values, y0 + ph - 8.0, y0 + 18.0);
        let layer = layer_of(name);
        let outline = if layer.unwrap_or(0) == 0 {
            "#808080"
        } else {
            "#000000"
        };
        svg.open(
            "g",
            &[
                ("class", "panel".into()),
                ("data-component", name.clone()),
                ("data-layer", layer.map_or(String::new(), |l| l.to_string())),
            ],
        );
        svg.leaf(
            "rect",
            &[
                ("class", "panel-frame".into()),
                ("x", s(x0)),
                ("y", s(y0)),
                ("width", s(pw)),
                ("height", s(ph)),
                ("fill", "none".into()),
                ("stroke", outline.into()),
                ("stroke-width", "1.5".into()),
            ],
        );
        svg.text(
            &[
                ("x", s(x0 + 5.0)),
                ("y", s(y0 + 13.0)),
                ("font-size", "11".into()),
            ],
            name,
        );
        for &p in &scheme.priority {
            // split into runs of consecutive steps where the pattern exists
            let mut runs: Vec<Vec<(u64, f64)>> = vec![Vec::new()];
            for t in &ts.tables {
                match t.entries.iter().find(|e| e.pattern == p) {
                    Some(e) => runs
                        .last_mut()
                        .unwrap()
                        .push((t.step.unwrap_or(0), e.mean[c])),
                    None if !runs.last().unwrap().is_empty() => runs.push(Vec::new()),
                    None => {}
                }
            }
            for run in runs.into_iter().filter(|r| !r.is_empty()) {
                let mut pts: Vec<(f64, f64)> = run
                    .iter()
                    .map(|&(st, v)| (sx.map(st as f64), sy.map(v)))
                    .collect();
                if pts.len() == 1 {
                    let (x, y) = pts[0];
                    pts = vec![(x - 4.0, y), (x + 4.0, y)];
                }
                svg.leaf(
                    "polyline",
                    &[
                        ("class", "curve".into()),
                        ("data-pattern", p.name().into()),
                        (
                            "data-steps",
                            run.iter()
                                .map(|r| r.0.to_string())
                                .collect::<Vec<_>>()
                                .join(" "),
                        ),
                        (
                            "data-values",
                            run.iter()
                                .map(|r| r.1.to_string())
                                .collect::<Vec<_>>()
                                .join(" "),
                        ),
                        ("points", points_attr(&pts)),
                        ("fill", "none".into()),
                        ("stroke", scheme.color(p).hex()),
                        ("stroke-width", "1.2".into()),
                    ],
                );
            }
        }
        svg.close("g");
    }
    let axis_y = margin + n_rows as f64 * (ph + gap) + 4.0;
    let (lo, hi) = (steps.iter().min().unwrap(), steps.iter().max().unwrap());
    svg.text(
        &[
            ("class", "step-axis".into()),
            ("x", s(margin)),
            ("y", s(axis_y)),
            ("font-size", "11".into()),
        ],
        &format!("training step {lo} to {hi}"),
    );
    legend(
        &mut svg,
        scheme,
        margin + cols as f64 * (pw + gap) + 10.0,
        margin + 10.0,
    );
    Ok(svg.finish())
}

/// Bars of mean susceptibility per threshold, one group per component,
/// colored with the spacing-count rule. Thresholds without samples are
/// left out and listed in an annotation.
pub fn render_spacing_bars(table: &ConditionalSpacingTable) -> Result<String> {
    if table.buckets.is_empty() || table.components.is_empty() {
        return Err(Error::Invalid("empty conditional spacing table".into()));
    }
    let filled: Vec<_> = table.buckets.iter().filter(|b| b.mean.is_some()).collect();
    let omitted: Vec<usize> = table
        .buckets
        .iter()
        .filter(|b| b.mean.is_none())
        .map(|b| b.threshold)
        .collect();
    let (bar_w, gh, gap, margin) = (3.0, 160.0, 24.0, 40.0);
    let gw = (table.buckets.len() as f64 * bar_w).max(60.0);
    let cols = 4.min(table.components.len());
    let n_rows = table.components.len().div_ceil(cols);
    let width = 2.0 * margin + cols as f64 * (gw + gap);
    let height = 2.0 * margin + n_rows as f64 * (gh + gap) + 20.0;
    let (lo, hi) = filled
        .iter()
        .flat_map(|b| b.mean.as_ref().unwrap().iter().copied())
        .fold((0.0f64, 0.0f64), |(l, h), v| (l.min(v), h.max(v)));
    // pixels per unit of susceptibility, shared by all groups
    let span = (hi - lo).max(1e-300);
    let px = (gh - 30.0) / span;

    let mut svg = Svg::new(width, height);
    for (c, name) in table.components.iter().enumerate() {
        let x0 = margin + (c % cols) as f64 * (gw + gap);
        let y0 = margin + (c / cols) as f64 * (gh + gap);
        let zero = y0 + 20.0 + hi * px;
        svg.open(
            "g",
            &[
                ("class", "bar-group".into()),
                ("data-component", name.clone()),
                ("data-scale", px.to_string()),
            ],
        );
        svg.text(
            &[
                ("x", s(x0)),
                ("y", s(y0 + 12.0)),
                ("font-size", "11".into()),
            ],
            name,
        );
        svg.leaf(
            "line",
            &[
                ("x1", s(x0)),
                ("x2", s(x0 + gw)),
                ("y1", s(zero)),
                ("y2", s(zero)),
                ("stroke", "#999999".into()),
                ("stroke-width", "0.5".into()),
            ],
        );
        for (k, b) in table.buckets.iter().enumerate() {
            let Some(mean) = &b.mean else { continue };
            let v = mean[c];
            let h = v.abs() * px;
            let y = if v >= 0.0 { zero - h } else { zero };
            svg.leaf(
                "rect",
                &[
                    ("class", "bar".into()),
                    ("data-threshold", b.threshold.to_string()),
                    ("data-count", b.count.to_string()),
                    ("data-chi", v.to_string()),
                    ("x", s(x0 + k as f64 * bar_w)),
                    ("y", y.to_string()),
                    ("width", s(bar_w)),
                    ("height", h.to_string()),
                    ("fill", spacing_color(b.threshold).rgb().hex()),
                ],
            );
        }
        svg.close("g");
    }
    if !omitted.is_empty() {
        let list = omitted
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        svg.text(
            &[
                ("class", "omitted".into()),
                ("data-thresholds", list.clone()),
                ("x", s(margin)),
                ("y", s(height - 12.0)),
                ("font-size", "11".into()),
            ],
            &format!("no spacing samples at thresholds: {list}"),
        );
    }
    Ok(svg.finish())
}

/// Frequency of each preceding-spacing count with a log-scaled frequency
/// axis. Counts with zero frequency have no bar.
pub fn render_spacing_histogram(counts: &[usize]) -> Result<String> {
    if counts.is_empty() {
        return Err(Error::Invalid("no spacing counts to plot".into()));
    }
    let max = *counts.iter().max().unwrap();
    let mut freq = vec![0usize; max + 1];
    for &c in counts {
        freq[c] += 1;
    }
    let top = *freq.iter().max().unwrap() as f64;
    let (pw, ph, margin) = (720.0, 360.0, 50.0);
    // the axis starts at 0.5 so single occurrences stay visible
    let floor = 0.5f64.log10();
    let sy = Scale::new(floor, top.log10().max(floor + 1.0), margin + ph, margin);
    let bw = pw / (max + 1) as f64;
    let mut svg = Svg::new(pw + 2.0 * margin, ph + 2.0 * margin);
    svg.open(
        "g",
        &[("class", "y-axis".into()), ("data-scale", "log10".into())],
    );
    let mut decade = 1.0;
    while decade <= top.max(1.0) {
        let y = sy.map(decade.log10());
        svg.leaf(
            "line",
            &[
                ("x1", s(margin - 4.0)),
                ("x2", s(margin + pw)),
                ("y1", s(y)),
                ("y2", s(y)),
                ("stroke", "#dddddd".into()),
            ],
        );
        svg.text(
            &[("x", s(4.0)), ("y", s(y + 4.0)), ("font-size", "10".into())],
            &format!("{decade}"),
        );
        decade *= 10.0;
    }
    svg.close("g");
    svg.open("g", &[("class", "bins".into())]);
    for (value, &f) in freq.iter().enumerate() {
        if f == 0 {
            continue;
        }
        let y = sy.map((f as f64).log10());
        svg.leaf(
            "rect",
            &[
                ("class", "bin".into()),
                ("data-value", value.to_string()),
                ("data-count", f.to_string()),
                ("x", s(margin + value as f64 * bw)),
                ("y", y.to_string()),
                ("width", s(bw.max(0.5))),
                ("height", (margin + ph - y).to_string()),
                ("fill", spacing_color(value).rgb().hex()),
            ],
        );
    }
    svg.close("g");
    svg.text(
        &[
            ("x", s(margin)),
            ("y", s(margin + ph + 30.0)),
            ("font-size", "11".into()),
        ],
        "preceding spacing tokens",
    );
    Ok(svg.finish())
}
