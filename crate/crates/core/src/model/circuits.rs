//! Attention-pattern scores used to locate previous-token, current-token
//! and induction heads.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{head_name, Transformer};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tokenizer::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadScores {
    pub name: String,
    pub layer: usize,
    pub head: usize,
    /// Mean attention from position `i` to `i - 1`.
    pub previous_token: f64,
    /// Mean attention from a position to itself.
    pub current_token: f64,
    /// On a random block repeated twice: mean attention from each token of
    /// the second copy to the token after its first occurrence.
    pub prefix_matching: f64,
}

/// Score every head on `trials` random blocks of `block` tokens drawn from
/// `candidates`, each block repeated twice.
pub fn head_attention_scores(
    model: &Transformer,
    w: &[f64],
    block: usize,
    candidates: &[TokenId],
    trials: usize,
    seed: u64,
) -> Result<Vec<HeadScores>> {
    let cfg = &model.config;
    let block = block.min(cfg.max_context / 2).max(2);
    if candidates.is_empty() {
        return Err(Error::Invalid(
            "no candidate tokens for attention scores".into(),
        ));
    }
    let mut rng = stream_rng(seed, 0);
    let n = cfg.n_heads();
    let mut prev = vec![0.0; n];
    let mut cur = vec![0.0; n];
    let mut prefix = vec![0.0; n];
    for _ in 0..trials {
        let half: Vec<TokenId> = (0..block)
            .map(|_| candidates[rng.gen_range(0..candidates.len())])
            .collect();
        let tokens: Vec<TokenId> = half.iter().chain(half.iter()).copied().collect();
        let t = tokens.len();
        for l in 0..cfg.n_layers {
            for h in 0..cfg.heads_per_layer {
                let att = model.attention_pattern(w, &tokens, l, h)?;
                let idx = l * cfg.heads_per_layer + h;
                prev[idx] += (1..t).map(|i| att[i * t + i - 1]).sum::<f64>() / (t - 1) as f64;
                cur[idx] += (0..t).map(|i| att[i * t + i]).sum::<f64>() / t as f64;
                prefix[idx] +=
                    (block..t).map(|i| att[i * t + i - block + 1]).sum::<f64>() / block as f64;
            }
        }
    }
    let trials = trials.max(1) as f64;
    Ok((0..n)
        .map(|idx| {
            let (layer, head) = (idx / cfg.heads_per_layer, idx % cfg.heads_per_layer);
            HeadScores {
                name: head_name(layer, head),
                layer,
                head,
                previous_token: prev[idx] / trials,
                current_token: cur[idx] / trials,
                prefix_matching: prefix[idx] / trials,
            }
        })
        .collect())
}
