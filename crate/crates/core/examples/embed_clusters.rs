//! Lay out three Gaussian clusters in two dimensions, score the result and
//! write a scatter plot.

use rand::Rng;
use rand_distr::StandardNormal;
use suscept_atlas::embedding::{embed, neighborhood_preservation, silhouette, EmbedConfig};
use suscept_atlas::patterns::PatternLabelSet;
use suscept_atlas::render::{render_scatter, ColorScheme, ScatterOptions};
use suscept_atlas::rng::stream_rng;
use suscept_atlas::susceptibility::RowMeta;

fn main() -> suscept_atlas::Result<()> {
    let (n, dim) = (600, 8);
    let mut rng = stream_rng(5, 0);
    let mut data = Vec::with_capacity(n * dim);
    let mut cluster = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 3;
        cluster.push(c);
        for d in 0..dim {
            let noise: f64 = rng.sample(StandardNormal);
            data.push(if d == c { 6.0 } else { 0.0 } + noise);
        }
    }
    let cfg = EmbedConfig {
        n_neighbors: 15,
        seed: 1,
        ..Default::default()
    };
    let e = embed(&data, dim, &cfg)?;
    println!("silhouette {:.3}", silhouette(&e.coords, e.dims, &cluster)?);
    println!(
        "neighborhood preservation {:.3}",
        neighborhood_preservation(&data, dim, &e.coords, e.dims, 15)?
    );

    // borrow pattern colors to tell the clusters apart
    let rows: Vec<RowMeta> = cluster
        .iter()
        .enumerate()
        .map(|(i, &c)| RowMeta {
            sample_id: i,
            tag: format!("cluster {c}"),
            labels: PatternLabelSet {
                spacing: c == 0,
                numeric: c == 1,
                delimiter: c == 2,
                ..Default::default()
            },
        })
        .collect();
    let svg = render_scatter(
        &e.coords,
        e.dims,
        &rows,
        &ColorScheme::default(),
        &[],
        &ScatterOptions::default(),
    )?;
    let path = std::env::temp_dir().join("clusters.svg");
    std::fs::write(&path, svg).map_err(|err| suscept_atlas::Error::io(&path, err))?;
    println!("wrote {}", path.display());
    Ok(())
}
