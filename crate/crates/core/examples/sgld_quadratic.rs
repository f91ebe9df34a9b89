//! Localized SGLD on a one-dimensional quadratic posterior. The evaluation
//! losses are `w^2` and `0`, so the loss change is `w^2 / 2` and the two
//! susceptibilities are `-s^4 / 2` and `+s^4 / 2` for posterior variance
//! `s^2 = 1 / (n_beta + gamma)`.

use suscept_atlas::model::ComponentSpec;
use suscept_atlas::sampler::{sgld_restricted_chain, PosteriorTarget, SGLDConfig};
use suscept_atlas::susceptibility::estimate_per_token_susceptibility;
use suscept_atlas::Result;

struct Quadratic;

impl PosteriorTarget for Quadratic {
    fn dim(&self) -> usize {
        1
    }

    fn pool_len(&self) -> usize {
        1
    }

    fn component_gradient(
        &self,
        w: &[f64],
        _: &[usize],
        _: &[usize],
        out: &mut [f64],
    ) -> Result<()> {
        out[0] = w[0];
        Ok(())
    }

    fn eval_losses(&self, w: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![w[0] * w[0], 0.0])
    }
}

fn main() -> Result<()> {
    let component = ComponentSpec {
        name: "w".into(),
        indices: vec![0],
        head: None,
    };
    let cfg = SGLDConfig {
        epsilon: 1e-3,
        chains: 4,
        draws: 4000,
        burn_in: 200,
        batch_size: 1,
        ..Default::default()
    };
    let run = sgld_restricted_chain(&Quadratic, &[0.0], &component, &cfg)?;
    let chi = estimate_per_token_susceptibility(&run.records)?;
    println!(
        "{} draws, {} failed chains",
        run.records.len(),
        run.failures.len()
    );
    let s2 = 1.0 / (cfg.n_beta + cfg.gamma);
    println!(
        "chi = [{:.3e}, {:.3e}], expected [{:.3e}, {:.3e}]",
        chi[0],
        chi[1],
        -s2 * s2 / 2.0,
        s2 * s2 / 2.0
    );
    Ok(())
}
