//! Train a small model on the synthetic corpus, then measure per-token
//! susceptibilities of every head on a handful of samples and score the
//! heads' attention patterns.

use suscept_atlas::checkpoint::load_checkpoint;
use suscept_atlas::corpus::{
    estimate_bigram_table, load_corpus, read_manifest, read_texts, sample_contexts,
};
use suscept_atlas::model::{head_attention_scores, ModelConfig, Transformer};
use suscept_atlas::patterns::PatternClassifier;
use suscept_atlas::sampler::SGLDConfig;
use suscept_atlas::susceptibility::{build_susceptibility_matrix, PatternSusceptibilityTable};
use suscept_atlas::synth::{write_synthetic_corpus, SynthConfig};
use suscept_atlas::tokenizer::Tokenizer;
use suscept_atlas::trainer::{train_with_checkpoints, TrainConfig};

fn main() -> suscept_atlas::Result<()> {
    let steps: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(300);
    let dir = std::env::temp_dir().join("suscept-atlas-train");
    let manifest = write_synthetic_corpus(
        &dir.join("corpus"),
        &SynthConfig {
            docs_per_tag: 60,
            ..Default::default()
        },
    )?;
    let entries = read_manifest(&manifest)?;
    let texts: Vec<String> = read_texts(&entries)?.into_iter().map(|(_, t)| t).collect();
    let tok = Tokenizer::train(&texts, 320)?;
    let corpus = load_corpus(&entries, &tok)?;

    let model_cfg = ModelConfig {
        heads_per_layer: 4,
        d_model: 32,
        d_head: 8,
        max_context: 32,
        vocab_size: tok.vocab_size(),
        ..Default::default()
    };
    let train = TrainConfig {
        steps,
        batch_size: 16,
        lr: 0.01,
        warmup_steps: steps / 10,
        ..Default::default()
    };
    let outcome = train_with_checkpoints(&model_cfg, &corpus, &train, &dir.join("run"))?;
    println!(
        "trained {steps} steps, last batch loss {:.3}",
        outcome.final_loss.unwrap_or(f64::NAN)
    );
    let ck = load_checkpoint(&outcome.checkpoints.last().unwrap().1)?;
    let model = Transformer::new(model_cfg.clone())?;

    let bigrams = estimate_bigram_table(&corpus)?;
    let classifier = PatternClassifier::new(&tok, &bigrams);
    let eval = sample_contexts(&corpus, 10, model_cfg.max_context, 1)?.samples;
    let pool = sample_contexts(&corpus, 50, model_cfg.max_context, 2)?.samples;
    let labels: Vec<_> = eval.iter().map(|s| classifier.classify(s)).collect();
    let sgld = SGLDConfig {
        chains: 2,
        draws: 20,
        ..Default::default()
    };
    let m = build_susceptibility_matrix(
        &model,
        &ck.params.values,
        Some(steps as u64),
        &eval,
        &labels,
        &pool,
        &sgld,
    )?;
    println!(
        "susceptibility matrix: {} samples x {} heads",
        m.n_rows(),
        m.n_cols()
    );
    let table = PatternSusceptibilityTable::from_matrix(&m);
    for e in &table.entries {
        let means: Vec<String> = e.mean.iter().map(|v| format!("{v:+.1e}")).collect();
        println!(
            "{:<12} n={:<3} {}",
            e.pattern.label(),
            e.count,
            means.join(" ")
        );
    }

    let candidates: Vec<u32> = (0..tok.vocab_size() as u32)
        .filter(|&t| !tok.is_special(t))
        .collect();
    for s in head_attention_scores(&model, &ck.params.values, 12, &candidates, 8, 3)? {
        println!(
            "head {}: previous {:.2} current {:.2} prefix {:.2}",
            s.name, s.previous_token, s.current_token, s.prefix_matching
        );
    }
    Ok(())
}
