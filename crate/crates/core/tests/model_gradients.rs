use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use suscept_atlas::corpus::Sample;
use suscept_atlas::model::{head_component, init_params, ModelConfig, Transformer};
use suscept_atlas::tokenizer::TokenId;

fn tiny(layernorm: bool) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        heads_per_layer: 2,
        d_model: 8,
        d_head: 4,
        vocab_size: 11,
        max_context: 6,
        layernorm,
        ..Default::default()
    }
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, max_len: usize, vocab: u32) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let len = rng.gen_range(1..=max_len);
            Sample {
                id: i,
                tag: "t".into(),
                doc_index: 0,
                position: len,
                context: (0..len).map(|_| rng.gen_range(0..vocab)).collect(),
                target: rng.gen_range(0..vocab),
                lookahead: None,
            }
        })
        .collect()
}

/// Central differences of the batch-mean loss, coordinate by coordinate.
fn finite_difference(model: &Transformer, w: &[f64], batch: &[Sample], step: f64) -> Vec<f64> {
    let mut w = w.to_vec();
    (0..w.len())
        .map(|i| {
            let orig = w[i];
            w[i] = orig + step;
            let up = model.losses(&w, batch).unwrap().mean;
            w[i] = orig - step;
            let down = model.losses(&w, batch).unwrap().mean;
            w[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-5))
        .fold(0.0, f64::max)
}

#[test]
fn analytic_gradient_matches_central_differences() {
    for layernorm in [true, false] {
        for seed in [11u64, 12, 13] {
            let cfg = tiny(layernorm);
            let model = Transformer::new(cfg.clone()).unwrap();
            let params = init_params(&cfg, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let batch = random_batch(&mut rng, 4, 5, 11);
            let (_, grad) = model.grad_loss(&params, &batch).unwrap();
            let numeric = finite_difference(&model, &params.values, &batch, 1e-4);
            let err = max_relative_error(&grad, &numeric);
            assert!(err < 1e-4, "layernorm={layernorm} seed={seed}: {err}");
        }
    }
}

#[test]
fn sequence_gradient_matches_central_differences() {
    let cfg = tiny(true);
    let model = Transformer::new(cfg.clone()).unwrap();
    let params = init_params(&cfg, 4).unwrap();
    let seqs: Vec<Vec<TokenId>> = vec![vec![1, 2, 3, 4, 5, 6, 7], vec![3, 3, 9]];
    let refs: Vec<&[TokenId]> = seqs.iter().map(|s| s.as_slice()).collect();
    let (_, grad) = model.sequence_loss_and_grad(&params.values, &refs).unwrap();
    let mut w = params.values.clone();
    let mut worst: f64 = 0.0;
    for i in (0..w.len()).step_by(3) {
        let orig = w[i];
        w[i] = orig + 1e-4;
        let up = model.sequence_loss_and_grad(&w, &refs).unwrap().0;
        w[i] = orig - 1e-4;
        let down = model.sequence_loss_and_grad(&w, &refs).unwrap().0;
        w[i] = orig;
        let n = (up - down) / 2e-4;
        worst = worst.max((grad[i] - n).abs() / grad[i].abs().max(n.abs()).max(1e-5));
    }
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn unused_positions_get_zero_gradient() {
    let cfg = tiny(true);
    let model = Transformer::new(cfg.clone()).unwrap();
    let params = init_params(&cfg, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch = random_batch(&mut rng, 3, 3, 11);
    let (_, grad) = model.grad_loss(&params, &batch).unwrap();
    let pos = params
        .segments
        .iter()
        .find(|s| s.name == "pos_embed")
        .unwrap();
    let d = cfg.d_model;
    for p in 3..cfg.max_context {
        assert!(grad[pos.start + p * d..pos.start + (p + 1) * d]
            .iter()
            .all(|&g| g == 0.0));
    }
}

#[test]
fn duplicated_sample_doubles_its_weight() {
    let cfg = tiny(true);
    let model = Transformer::new(cfg.clone()).unwrap();
    let params = init_params(&cfg, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let b = random_batch(&mut rng, 2, 4, 11);
    let (a, c) = (b[0].clone(), b[1].clone());
    let (_, g_a) = model.grad_loss(&params, &[a.clone()]).unwrap();
    let (_, g_c) = model.grad_loss(&params, &[c.clone()]).unwrap();
    let (_, g_aac) = model.grad_loss(&params, &[a.clone(), a, c]).unwrap();
    for i in 0..g_a.len() {
        let expected = (2.0 * g_a[i] + g_c[i]) / 3.0;
        assert!((g_aac[i] - expected).abs() < 1e-12);
    }
}

#[test]
fn later_tokens_do_not_change_earlier_predictions() {
    let cfg = tiny(true);
    let model = Transformer::new(cfg.clone()).unwrap();
    let params = init_params(&cfg, 7).unwrap();
    let base: Vec<TokenId> = vec![1, 5, 2, 8, 3, 4];
    let mut altered = base.clone();
    altered[4] = 0;
    altered[5] = 10;
    let a = model.position_distributions(&params.values, &base).unwrap();
    let b = model
        .position_distributions(&params.values, &altered)
        .unwrap();
    for p in 0..4 {
        assert_eq!(a[p], b[p]);
    }
    for dist in &a {
        assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn permuting_heads_leaves_the_loss_unchanged() {
    let cfg = ModelConfig {
        heads_per_layer: 4,
        d_model: 16,
        ..tiny(true)
    };
    let model = Transformer::new(cfg.clone()).unwrap();
    let params = init_params(&cfg, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let batch = random_batch(&mut rng, 5, 6, 11);
    let base = model.forward_per_token_loss(&params, &batch).unwrap();
    for layer in 0..2 {
        let a = head_component(&cfg, layer, 0).unwrap();
        let b = head_component(&cfg, layer, 3).unwrap();
        let mut swapped = params.clone();
        for (&i, &j) in a.indices.iter().zip(&b.indices) {
            swapped.values.swap(i, j);
        }
        let loss = model.forward_per_token_loss(&swapped, &batch).unwrap();
        for (x, y) in base.losses.iter().zip(&loss.losses) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn head_scoped_gradient_matches_full_gradient_on_the_head_block() {
    let cfg = ModelConfig {
        n_layers: 3,
        ..tiny(true)
    };
    let model = Transformer::new(cfg.clone()).unwrap();
    let params = init_params(&cfg, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let batch = random_batch(&mut rng, 4, 6, 11);
    let refs: Vec<&Sample> = batch.iter().collect();
    let (full_loss, full) = model.loss_and_grad(&params.values, &refs).unwrap();
    for layer in 0..3 {
        for head in 0..2 {
            let (loss, scoped) = model
                .head_loss_and_grad(&params.values, &refs, layer, head)
                .unwrap();
            assert_eq!(loss, full_loss);
            for &i in &head_component(&cfg, layer, head).unwrap().indices {
                assert!((scoped[i] - full[i]).abs() < 1e-12);
            }
        }
    }
}
