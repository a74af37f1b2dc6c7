mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spdf_core::model::{GptModel, ModelConfig, TokenBatch};
use spdf_core::ops::TokenId;
use spdf_core::optim::{self, OptimizerConfig};
use spdf_core::sparsity::{apply_masks, build_masks, densify, mask_stats, SparsityPlan};
use spdf_core::train::{check_static_masks, Checkpoint, PretrainStart};

use common::{plan, run, tiny_config, tiny_corpus};

#[test]
fn zero_counts_exact_for_all_levels() {
    let cfg = ModelConfig::new(2, 24, 3, 100, 8);
    let model = GptModel::<f32>::init(&cfg, 0).unwrap();
    for s in [0.0, 0.5, 0.75, 0.9] {
        let masks = build_masks(&model, &SparsityPlan::uniform(&model, s).unwrap(), 3).unwrap();
        for (name, m) in masks.iter() {
            let want = (s * m.len() as f64).round() as usize;
            assert_eq!(m.zeros(), want, "{name} at s={s}");
        }
        let report = mask_stats(&masks);
        // each matrix rounds independently, so the overall count is off by at most half a weight per matrix
        let bound = 0.5 * report.layers.len() as f64 / report.total as f64;
        assert!((report.overall_sparsity - s).abs() <= bound + 1e-15);
        assert_eq!(report.total, cfg.sparsifiable_params());
    }
}

#[test]
fn masks_are_seed_deterministic() {
    let model = GptModel::<f32>::init(&tiny_config(), 0).unwrap();
    let plan = SparsityPlan::uniform(&model, 0.6).unwrap();
    assert_eq!(
        build_masks(&model, &plan, 11).unwrap(),
        build_masks(&model, &plan, 11).unwrap()
    );
    assert_ne!(
        build_masks(&model, &plan, 11).unwrap(),
        build_masks(&model, &plan, 12).unwrap()
    );
}

#[test]
fn apply_is_idempotent_and_measured_sparsity_matches() {
    let mut model = GptModel::<f32>::init(&tiny_config(), 2).unwrap();
    let masks = build_masks(&model, &SparsityPlan::uniform(&model, 0.75).unwrap(), 1).unwrap();
    apply_masks(&mut model, &masks).unwrap();
    let once = model.clone();
    apply_masks(&mut model, &masks).unwrap();
    assert_eq!(once, model);
    let (zeros, total) = model
        .params()
        .iter()
        .filter(|p| p.kind.is_sparsifiable())
        .fold((0, 0), |(z, t), p| {
            (
                z + p.value().data().iter().filter(|&&v| v == 0.0).count(),
                t + p.value().len(),
            )
        });
    let measured = zeros as f64 / total as f64;
    assert_eq!(zeros, mask_stats(&masks).zeros);
    assert!(
        (measured - 0.75).abs() <= 0.5 * masks.len() as f64 / total as f64,
        "{measured}"
    );
}

fn random_inputs(seed: u64, n: usize, cfg: &ModelConfig) -> Vec<Vec<TokenId>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..=cfg.context_window);
            (0..len)
                .map(|_| rng.random_range(0..cfg.vocab_size as TokenId))
                .collect()
        })
        .collect()
}

#[test]
fn densify_preserves_logits_and_reactivates_weights() {
    let data = tiny_corpus();
    let cfg = tiny_config();
    let mut checked = 0;
    for (seed, s) in [(0, 0.5), (1, 0.75), (2, 0.5), (3, 0.75)] {
        let (sparse, _) = run(&plan(s, seed, 30), PretrainStart::Fresh(cfg.clone()), &data);
        let masks = sparse.masks.clone().unwrap();
        let inputs = random_inputs(seed, 12, &cfg);
        let before: Vec<_> = inputs
            .iter()
            .map(|x| sparse.model.logits(x, Some(&masks)).unwrap())
            .collect();
        let dense = densify(sparse);
        assert!(dense.masks.is_none());
        for (x, b) in inputs.iter().zip(&before) {
            let after = dense.model.logits(x, None).unwrap();
            assert_eq!(b.data(), after.data(), "logits changed by densify");
        }

        let mut model = dense.model.clone();
        let mut opt = dense.opt.clone();
        let seqs: Vec<&[TokenId]> = (0..4).map(|i| data.chunk(i)).collect();
        model
            .loss_and_grad(&TokenBatch::next_token(&seqs).unwrap(), None)
            .unwrap();
        optim::step(
            &mut model,
            None,
            &OptimizerConfig::default(),
            &mut opt,
            1e-3,
        )
        .unwrap();
        let (mut reactivated, mut masked) = (0usize, 0usize);
        for p in model.params() {
            if let Some(m) = masks.get(&p.name) {
                for j in m.masked_indices() {
                    masked += 1;
                    reactivated += (p.value().data()[j] != 0.0) as usize;
                }
            }
        }
        assert!(
            reactivated as f64 >= 0.01 * masked as f64,
            "{reactivated} of {masked}"
        );
        checked += 1;
    }
    assert!(checked >= 3);
}

#[test]
fn densify_of_dense_checkpoint_is_noop() {
    let c = Checkpoint::new(GptModel::<f32>::init(&tiny_config(), 0).unwrap(), None, 0);
    assert_eq!(densify(c.clone()), c);
}

#[test]
fn static_masks_hold_for_500_steps() {
    let (ckpt, log) = run(
        &plan(0.75, 5, 500),
        PretrainStart::Fresh(tiny_config()),
        &tiny_corpus(),
    );
    assert_eq!(log.len(), 500);
    check_static_masks(&ckpt).unwrap();
    let masks = ckpt.masks.as_ref().unwrap();
    assert!((mask_stats(masks).overall_sparsity - 0.75).abs() < 1e-3);
    let mut n = 0;
    for (i, p) in ckpt.model.params().iter().enumerate() {
        if let Some(m) = masks.get(&p.name) {
            for j in m.masked_indices() {
                assert_eq!(p.value().data()[j].to_bits(), 0);
                assert_eq!(ckpt.opt.m[i].data()[j], 0.0);
                assert_eq!(ckpt.opt.v[i].data()[j], 0.0);
                n += 1;
            }
        } else {
            assert!(!p.kind.is_sparsifiable());
        }
    }
    assert!(n > 0);
    // unmasked weights did train
    let init = GptModel::<f32>::init(&tiny_config(), 5).unwrap();
    assert_ne!(init.params()[2].value(), ckpt.model.params()[2].value());
}

#[test]
fn masked_weight_stays_zero_under_direct_steps() {
    let cfg = tiny_config();
    let mut model = GptModel::<f32>::init(&cfg, 1).unwrap();
    let masks = build_masks(&model, &SparsityPlan::uniform(&model, 0.5).unwrap(), 1).unwrap();
    apply_masks(&mut model, &masks).unwrap();
    let mut opt = optim::OptState::new(&model);
    for _ in 0..100 {
        // nonzero upstream gradient everywhere, masked positions included
        for p in model.params_mut() {
            p.tensor.grad.fill(0.3);
        }
        optim::step(
            &mut model,
            Some(&masks),
            &OptimizerConfig::default(),
            &mut opt,
            1e-2,
        )
        .unwrap();
    }
    let c = Checkpoint {
        model,
        masks: Some(masks),
        opt,
        rng: rand::SeedableRng::seed_from_u64(0),
    };
    check_static_masks(&c).unwrap();
}
