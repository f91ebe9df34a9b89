//! PCA of a matrix whose columns share one dominant direction.

use rand::Rng;
use rand_distr::StandardNormal;
use suscept_atlas::analysis::{pca, standardize};
use suscept_atlas::rng::stream_rng;

fn main() -> suscept_atlas::Result<()> {
    let (n, k) = (500, 6);
    let mut rng = stream_rng(3, 0);
    let loading = [1.0, 0.8, -0.6, 0.5, 0.0, -0.9];
    let mut values = Vec::with_capacity(n * k);
    for _ in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        for l in loading {
            let noise: f64 = rng.sample(StandardNormal);
            values.push(2.0 * l * z + 0.3 * noise);
        }
    }
    let std = standardize(&values, k)?;
    let p = pca(&std)?;
    for (i, ev) in p.explained_variance.iter().enumerate() {
        println!("PC{} explains {:5.1}%", i + 1, 100.0 * ev);
    }
    let pc1: Vec<String> = p.loading(0).iter().map(|v| format!("{v:+.2}")).collect();
    println!("PC1 loading: {}", pc1.join(" "));
    Ok(())
}
