mod common;

use std::cell::RefCell;

use spdf_core::data::{
    make_finetune_examples, train_bpe, DataRecord, PromptTarget, Vocabulary, EOT_ID,
};
use spdf_core::metrics::{score_run, GenerationCase};
use spdf_core::model::{GenConfig, GptModel, ModelConfig};
use spdf_core::sparsity::mask_stats;
use spdf_core::train::*;
use spdf_core::Error;

use common::{losses, plan, run, tiny_config, tiny_corpus};

#[test]
fn same_seed_gives_bit_identical_first_50_losses() {
    let data = tiny_corpus();
    let (_, a) = run(
        &plan(0.5, 9, 50),
        PretrainStart::Fresh(tiny_config()),
        &data,
    );
    let (_, b) = run(
        &plan(0.5, 9, 50),
        PretrainStart::Fresh(tiny_config()),
        &data,
    );
    assert_eq!(a.len(), 50);
    assert_eq!(losses(&a), losses(&b));
    let (_, c) = run(
        &plan(0.5, 10, 50),
        PretrainStart::Fresh(tiny_config()),
        &data,
    );
    assert_ne!(losses(&a), losses(&c));
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let data = tiny_corpus();
    let (full_ckpt, full) = run(
        &plan(0.75, 4, 40),
        PretrainStart::Fresh(tiny_config()),
        &data,
    );
    let (half, first) = run(
        &plan(0.75, 4, 20),
        PretrainStart::Fresh(tiny_config()),
        &data,
    );
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.ckpt");
    half.save(&path).unwrap();
    let resumed = Checkpoint::load(&path).unwrap();
    let (end, second) = run(
        &plan(0.75, 4, 40),
        PretrainStart::Resume(Box::new(resumed)),
        &data,
    );
    let joined: Vec<_> = first.iter().chain(&second).cloned().collect();
    assert_eq!(joined, full);
    assert_eq!(end, full_ckpt);
}

#[test]
fn loss_drops_by_a_fifth_within_200_steps() {
    let data = tiny_corpus();
    let ln_v = (tiny_config().vocab_size as f64).ln();
    for seed in 0..3 {
        let (_, log) = run(
            &plan(0.0, seed, 200),
            PretrainStart::Fresh(tiny_config()),
            &data,
        );
        let tail: f64 = log[190..]
            .iter()
            .map(|r| r.train_loss.unwrap())
            .sum::<f64>()
            / 10.0;
        assert!(tail <= 0.8 * ln_v, "seed {seed}: {tail} vs ln V {ln_v}");
    }
}

#[test]
fn sparse_plan_checkpoint_reports_target_sparsity() {
    let (c, _) = run(
        &plan(0.5, 0, 2),
        PretrainStart::Fresh(tiny_config()),
        &tiny_corpus(),
    );
    assert!((mask_stats(c.masks.as_ref().unwrap()).overall_sparsity - 0.5).abs() < 1e-3);
}

#[test]
fn checkpoints_and_metrics_log_written() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = plan(0.5, 1, 7);
    p.eval_every = 3;
    p.checkpoint_dir = Some(dir.path().join("ckpt"));
    let log_path = dir.path().join("metrics.log");
    let mut sink = JsonlSink::append(&log_path).unwrap();
    let c = pretrain(
        &p,
        PretrainStart::Fresh(tiny_config()),
        &tiny_corpus(),
        &mut sink,
    )
    .unwrap();
    drop(sink);
    assert_eq!(
        Checkpoint::load(&dir.path().join("ckpt/last.ckpt")).unwrap(),
        c
    );
    let lines: Vec<MetricRecord> = std::fs::read_to_string(&log_path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 7);
    assert_eq!(lines[6].tokens, c.tokens_seen());
    assert!(lines
        .iter()
        .all(|r| r.train_loss.is_some() && r.val_loss.is_none()));
}

#[test]
fn nonfinite_loss_returns_last_good_checkpoint() {
    let data = tiny_corpus();
    let (mut c, _) = run(&plan(0.0, 0, 3), PretrainStart::Fresh(tiny_config()), &data);
    c.model.params_mut()[0].tensor.value.data_mut()[(b't' as usize) * 16] = f32::NAN;
    let before = c.clone();
    match pretrain(
        &plan(0.0, 0, 10),
        PretrainStart::Resume(Box::new(c)),
        &data,
        &mut NullSink,
    ) {
        Err(Error::Diverged { step, last_good }) => {
            assert_eq!(step, 4);
            assert_eq!(last_good.step(), before.step());
            assert_eq!(last_good.rng, before.rng);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

fn uniform_example(n_target: usize) -> PromptTarget {
    PromptTarget {
        prompt: vec![1, 2, 3],
        target: (0..n_target as u32).map(|i| 10 + i).collect(),
    }
}

#[test]
fn uniform_logits_give_ppl_of_vocab_size() {
    let cfg = ModelConfig::new(1, 8, 2, 256, 16);
    let model = GptModel::<f32>::zeros(&cfg).unwrap();
    let ppl = evaluate_ppl(&model, None, &[uniform_example(5), uniform_example(9)], 0).unwrap();
    assert!((ppl - 256.0).abs() < 0.5, "{ppl}");
    let m = GptModel::<f32>::init(&cfg, 0).unwrap();
    assert!(evaluate_ppl(&m, None, &[uniform_example(4)], 0).unwrap() >= 1.0);
}

fn tiny_task() -> (Vocabulary, Vec<DataRecord>) {
    let records: Vec<DataRecord> = [
        (
            "Blue Spice",
            "French",
            "The Blue Spice serves French food .",
        ),
        (
            "The Mill",
            "Italian",
            "Italian food is served at The Mill .",
        ),
        ("Zizzi", "Chinese", "Zizzi is a Chinese restaurant ."),
        ("Aromi", "English", "For English food , try Aromi ."),
    ]
    .iter()
    .map(|(n, f, r)| DataRecord {
        fields: vec![
            ("name".into(), n.to_string()),
            ("food".into(), f.to_string()),
        ],
        references: vec![r.to_string()],
    })
    .collect();
    let text: Vec<String> = records
        .iter()
        .flat_map(|r| {
            [
                spdf_core::data::linearize(&r.fields),
                r.references[0].clone(),
            ]
        })
        .collect();
    (train_bpe(&text, 320).unwrap(), records)
}

fn memorize(vocab: &Vocabulary, examples: &[PromptTarget]) -> FinetuneOutcome {
    let cfg = ModelConfig::new(2, 32, 2, vocab.vocab_size(), 48);
    let ckpt = Checkpoint::new(GptModel::<f32>::init(&cfg, 0).unwrap(), None, 0);
    let mut p = TrainPlan::finetune(4, 150, 1e-2, 0);
    p.patience = 1000;
    let task = TaskData {
        train: examples.to_vec(),
        validation: examples.to_vec(),
    };
    finetune(&p, ckpt, &task, vocab.pad_id(), None, &mut NullSink).unwrap()
}

#[test]
fn memorized_set_reaches_ppl_one_and_bleu_above_95() {
    let (vocab, records) = tiny_task();
    let examples = make_finetune_examples(&vocab, &records).unwrap();
    let out = memorize(&vocab, &examples);
    let ppl = evaluate_ppl(&out.best.model, None, &examples, vocab.pad_id()).unwrap();
    assert!(ppl < 1.05, "ppl {ppl}");
    let cases: Vec<GenerationCase> = records
        .iter()
        .map(|r| GenerationCase {
            prompt: vocab.encode(&spdf_core::data::linearize(&r.fields)),
            references: r.references.clone(),
        })
        .collect();
    let gen = GenConfig {
        beam_size: 4,
        max_new_tokens: 30,
        eot_id: EOT_ID,
        ..GenConfig::default()
    };
    let a = score_run(&out.best.model, None, &vocab, &cases, &examples, &gen).unwrap();
    let b = score_run(&out.best.model, None, &vocab, &cases, &examples, &gen).unwrap();
    assert!(a.bleu > 95.0, "bleu {}", a.bleu);
    assert_eq!(a, b);
}

#[test]
fn random_model_bleu_in_range() {
    let (vocab, records) = tiny_task();
    let cfg = ModelConfig::new(1, 16, 2, vocab.vocab_size(), 48);
    let model = GptModel::<f32>::init(&cfg, 1).unwrap();
    let cases: Vec<GenerationCase> = records
        .iter()
        .map(|r| GenerationCase {
            prompt: vocab.encode(&spdf_core::data::linearize(&r.fields)),
            references: r.references.clone(),
        })
        .collect();
    let gen = GenConfig {
        beam_size: 2,
        max_new_tokens: 10,
        ..GenConfig::default()
    };
    let r = score_run(&model, None, &vocab, &cases, &[], &gen).unwrap();
    assert!((0.0..=100.0).contains(&r.bleu));
    assert!(r.perplexity.is_none());
}

fn small_task(vocab: &Vocabulary) -> TaskData {
    let (_, records) = tiny_task();
    let ex = make_finetune_examples(vocab, &records).unwrap();
    TaskData {
        train: ex.clone(),
        validation: ex,
    }
}

fn sparse_checkpoint(vocab: &Vocabulary, s: f64) -> Checkpoint {
    let cfg = ModelConfig::new(1, 16, 2, vocab.vocab_size(), 48);
    let mut p = TrainPlan::pretrain(2, 1000, 10, 1e-3, 3);
    p.sparsity = s;
    init_checkpoint(&cfg, &p).unwrap()
}

#[test]
fn dense_finetune_starts_at_sparse_loss() {
    let (vocab, _) = tiny_task();
    let task = small_task(&vocab);
    let sparse = sparse_checkpoint(&vocab, 0.75);
    let sparse_loss = mean_target_nll(
        &sparse.model,
        sparse.masks.as_ref(),
        &task.validation,
        vocab.pad_id(),
    )
    .unwrap();
    let mut p = TrainPlan::finetune(2, 1, 1e-3, 0);
    p.densify_on_finetune = true;
    let out = finetune(&p, sparse, &task, vocab.pad_id(), None, &mut NullSink).unwrap();
    assert_eq!(out.history[0].val_loss.to_bits(), sparse_loss.to_bits());
    assert!(out.best.masks.is_none());
}

#[test]
fn sparse_finetune_keeps_masks() {
    let (vocab, _) = tiny_task();
    let task = small_task(&vocab);
    let sparse = sparse_checkpoint(&vocab, 0.5);
    let masks = sparse.masks.clone();
    let mut p = TrainPlan::finetune(2, 3, 1e-3, 0);
    p.densify_on_finetune = false;
    p.patience = 10;
    let out = finetune(&p, sparse, &task, vocab.pad_id(), None, &mut NullSink).unwrap();
    assert_eq!(out.best.masks, masks);
    assert_eq!(out.history.len(), 4);
    check_static_masks(&out.best).unwrap();
}

#[test]
fn early_stopping_returns_minimum_not_last() {
    let (vocab, _) = tiny_task();
    let task = small_task(&vocab);
    let curve = [5.0, 4.0, 3.0, 3.5, 4.5, 6.0, 7.0];
    let snapshots: RefCell<Vec<GptModel<f32>>> = RefCell::new(Vec::new());
    let mut validator =
        |epoch: usize, m: &GptModel<f32>, _: Option<&spdf_core::sparsity::MaskSet>| {
            snapshots.borrow_mut().push(m.clone());
            Ok(curve[epoch])
        };
    let mut p = TrainPlan::finetune(2, 6, 1e-3, 0);
    p.patience = 2;
    let out = finetune(
        &p,
        sparse_checkpoint(&vocab, 0.0),
        &task,
        vocab.pad_id(),
        Some(&mut validator),
        &mut NullSink,
    )
    .unwrap();
    assert_eq!(out.best_epoch, 2);
    assert!(out.early_stopped);
    assert_eq!(
        out.history.iter().map(|h| h.val_loss).collect::<Vec<_>>(),
        curve[..5].to_vec()
    );
    let snaps = snapshots.borrow();
    assert_eq!(out.best.model, snaps[2]);
    assert_ne!(out.best.model, snaps[4]);
}

#[test]
fn finetune_requires_validation_split() {
    let (vocab, _) = tiny_task();
    let mut task = small_task(&vocab);
    task.validation.clear();
    let r = finetune(
        &TrainPlan::finetune(2, 1, 1e-3, 0),
        sparse_checkpoint(&vocab, 0.0),
        &task,
        vocab.pad_id(),
        None,
        &mut NullSink,
    );
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn finetune_loss_ignores_prompt_logits() {
    let (vocab, records) = tiny_task();
    let ex = make_finetune_examples(&vocab, &records).unwrap();
    let model = sparse_checkpoint(&vocab, 0.0).model;
    let base = mean_target_nll(&model, None, &ex, vocab.pad_id()).unwrap();
    // changing prompt tokens after the first changes the context but not which positions are scored
    let counts: Vec<usize> = ex
        .iter()
        .map(|e| e.loss_mask().iter().filter(|&&b| b).count())
        .collect();
    let expected: Vec<usize> = ex.iter().map(|e| e.target.len()).collect();
    assert_eq!(counts, expected);
    assert!(base.is_finite() && base > 0.0);
}

#[test]
fn grid_search_picks_known_best_and_reports_all_cells() {
    let p = TrainPlan::finetune(8, 5, 1e-4, 0);
    let single = grid_search(&p, &[1e-4], &[8], |_| Ok(1.0)).unwrap();
    assert_eq!(single.best, p);
    assert_eq!(single.cells.len(), 1);

    let lrs = [1e-4, 5e-5, 2.5e-5];
    let batches = [8, 16, 32, 64];
    let r = grid_search(&p, &lrs, &batches, |c| {
        Ok(if c.optimizer.peak_lr == 5e-5 && c.batch_size == 32 {
            0.5
        } else {
            1.0
        })
    })
    .unwrap();
    assert_eq!(r.cells.len(), 12);
    assert_eq!((r.best.optimizer.peak_lr, r.best.batch_size), (5e-5, 32));

    let tie = grid_search(&p, &lrs, &[16, 8], |_| Ok(2.0)).unwrap();
    assert_eq!(
        (tie.best.optimizer.peak_lr, tie.best.batch_size),
        (2.5e-5, 8)
    );
    assert!(grid_search(&p, &[], &[8], |_| Ok(1.0)).is_err());
}

#[test]
fn early_stopper_patience() {
    let mut s = EarlyStopper::new(1);
    assert_eq!(s.observe(3.0), (true, false));
    assert_eq!(s.observe(2.0), (true, false));
    assert_eq!(s.observe(2.5), (false, true));
    assert_eq!(s.best(), 2.0);
}
