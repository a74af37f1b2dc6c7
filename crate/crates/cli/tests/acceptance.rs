//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Criteria 8 and 9 run the full multi-seed toy experiment and dominate the runtime.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spdf_core::data::{pack, PackedDataset, Vocabulary};
use spdf_core::flops::{
    chinchilla_tokens, combined_pipeline_flops, flops_per_sequence, solve_seq_len, FlopQuery,
};
use spdf_core::gradcheck::{numeric_gradient, relative_error, weighted_sum};
use spdf_core::harness::preset;
use spdf_core::harness::{experiment_spdf, ExperimentConfig, ExperimentReport, FinetuneMode, Task};
use spdf_core::metrics::{corpus_bleu, BleuOptions};
use spdf_core::model::{GptModel, ModelConfig, TokenBatch, IGNORE_INDEX};
use spdf_core::ops::*;
use spdf_core::optim::{self, lr_at, OptimizerConfig, ScheduleConfig};
use spdf_core::sparsity::{apply_masks, build_masks, densify, mask_stats, SparsityPlan};
use spdf_core::train::{
    check_static_masks, pretrain, Checkpoint, MetricRecord, PretrainStart, TrainPlan,
};
use spdf_core::Tensor64;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ok<T>(r: spdf_core::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("FLOP table reproduction", c1_flop_table),
        ("end-to-end speedup reproduction", c2_speedups),
        ("Chinchilla budgets", c3_chinchilla),
        ("densification identity", c4_densify),
        ("static-mask invariant", c5_static_masks),
        ("gradient correctness", c6_gradients),
        ("schedule correctness", c7_schedule),
        ("dense vs sparse fine-tuning direction", c8_dense_vs_sparse),
        ("harder task degrades more", c9_harder_task),
        ("determinism and resume", c10_determinism),
        ("BLEU correctness", c11_bleu),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {n:>2} {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n:>2} {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn c1_flop_table() -> Outcome {
    let mut worst = 0.0f64;
    for (name, want, ratios) in [
        (
            "gpt2-small",
            [1.99e12, 1.47e12, 1.20e12],
            [1.0, 0.737, 0.601],
        ),
        ("gpt3-xl", [1.86e13, 1.12e13, 7.46e12], [1.0, 0.601, 0.401]),
    ] {
        let model = preset(name).map_err(|e| e.to_string())?.model;
        for ((s, w), ratio) in [0.0, 0.5, 0.75].into_iter().zip(want).zip(ratios) {
            let r = flops_per_sequence(&FlopQuery::new(model.clone(), s, 2048, 1.0))
                .map_err(|e| e.to_string())?;
            let rel = (r.flops_per_seq / w - 1.0).abs();
            worst = worst.max(rel);
            ensure(
                rel <= 0.01,
                format!("{name} S={s}: {:.3e} vs {w:.3e}", r.flops_per_seq),
            )?;
            ensure(
                (r.reduction_ratio - ratio).abs() <= 0.005,
                format!("{name} S={s}: ratio {:.4} vs {ratio}", r.reduction_ratio),
            )?;
        }
    }
    Ok(format!(
        "6 entries, worst relative error {:.2}%",
        100.0 * worst
    ))
}

fn c2_speedups() -> Outcome {
    let p = preset("gpt3-xl").map_err(|e| e.to_string())?;
    let target = 1.39e12;
    let t = solve_seq_len(&p.model, target).map_err(|e| e.to_string())?;
    let per_seq = flops_per_sequence(&FlopQuery::new(p.model.clone(), 0.0, t, 1.0))
        .map_err(|e| e.to_string())?
        .flops_per_seq;
    ensure(
        (per_seq / target - 1.0).abs() <= 0.01,
        format!("fine-tune T={t} gives {per_seq:.3e}"),
    )?;
    let mut seen = Vec::new();
    for n in [1.26e5, 0.54e5, 1.25e5, 0.34e5] {
        for (s, lo, hi) in [
            (0.75, 2.48 - 0.03, 2.49 + 0.03),
            (0.5, 1.66 - 0.03, 1.66 + 0.03),
        ] {
            let pre = FlopQuery::new(p.model.clone(), s, 2048, p.n_sequences());
            let ft = FlopQuery::new(p.model.clone(), 0.0, t, n);
            let x = combined_pipeline_flops(&pre, &ft)
                .map_err(|e| e.to_string())?
                .speedup;
            ensure(
                (lo..=hi).contains(&x),
                format!("S={s}, {n:.2e} sequences: {x:.3}x"),
            )?;
            seen.push(x);
        }
    }
    Ok(format!(
        "fine-tune T={t}; speedups {}",
        seen.iter()
            .map(|x| format!("{x:.3}"))
            .collect::<Vec<_>>()
            .join(" ")
    ))
}

fn c3_chinchilla() -> Outcome {
    let a = chinchilla_tokens(125e6);
    let b = chinchilla_tokens(1.3e9);
    ensure(a == 2.5e9, format!("125M -> {a:e}"))?;
    ensure(b == 26e9, format!("1.3B -> {b:e}"))?;
    Ok(format!("125M -> {a:.2e}, 1.3B -> {b:.2e}"))
}

fn toy_config() -> ModelConfig {
    ModelConfig::new(2, 32, 4, 257, 32)
}

fn toy_corpus(ctx: usize) -> PackedDataset {
    let docs: Vec<String> = (0..80)
        .map(|i| {
            format!(
                "name : {} | food : {} || {} serves {} food.",
                ["Aromi", "Blue Spice", "Cotto"][i % 3],
                ["Italian", "French", "Indian", "Thai"][i % 4],
                ["Aromi", "Blue Spice", "Cotto"][i % 3],
                ["Italian", "French", "Indian", "Thai"][i % 4]
            )
        })
        .collect();
    pack(&Vocabulary::bytes_only(), &docs, ctx).expect("pack")
}

fn toy_plan(sparsity: f64, seed: u64, steps: u64) -> TrainPlan {
    let mut p = TrainPlan::pretrain(4, 1_000_000, 2_000, 3e-3, seed);
    p.sparsity = sparsity;
    p.max_steps = Some(steps);
    p
}

fn toy_run(
    plan: &TrainPlan,
    start: PretrainStart,
    data: &PackedDataset,
) -> Result<(Checkpoint, Vec<MetricRecord>), String> {
    let mut log = Vec::new();
    let c = pretrain(plan, start, data, &mut log).map_err(|e| e.to_string())?;
    Ok((c, log))
}

fn c4_densify() -> Outcome {
    let cfg = toy_config();
    let data = toy_corpus(cfg.context_window);
    let mut min_frac = f64::INFINITY;
    let mut compared = 0;
    for (seed, s) in [(0, 0.5), (1, 0.75), (2, 0.5), (3, 0.75)] {
        let (sparse, _) = toy_run(
            &toy_plan(s, seed, 25),
            PretrainStart::Fresh(cfg.clone()),
            &data,
        )?;
        let masks = sparse.masks.clone().ok_or("sparse run has no masks")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Vec<u32>> = (0..12)
            .map(|_| {
                let len = rng.random_range(1..=cfg.context_window);
                (0..len)
                    .map(|_| rng.random_range(0..cfg.vocab_size as u32))
                    .collect()
            })
            .collect();
        let before: Vec<_> = inputs
            .iter()
            .map(|x| {
                sparse
                    .model
                    .logits(x, Some(&masks))
                    .map_err(|e| e.to_string())
            })
            .collect::<Result<_, _>>()?;
        let dense = densify(sparse);
        ensure(dense.masks.is_none(), "masks survived densify")?;
        for (x, b) in inputs.iter().zip(&before) {
            let after = dense.model.logits(x, None).map_err(|e| e.to_string())?;
            ensure(
                b.data()
                    .iter()
                    .zip(after.data())
                    .all(|(p, q)| p.to_bits() == q.to_bits()),
                format!("seed {seed} S={s}: logits changed"),
            )?;
            compared += 1;
        }
        let mut model = dense.model.clone();
        let mut opt = dense.opt.clone();
        let seqs: Vec<&[u32]> = (0..4).map(|i| data.chunk(i)).collect();
        let batch = TokenBatch::next_token(&seqs).map_err(|e| e.to_string())?;
        model
            .loss_and_grad(&batch, None)
            .map_err(|e| e.to_string())?;
        optim::step(
            &mut model,
            None,
            &OptimizerConfig::default(),
            &mut opt,
            1e-3,
        )
        .map_err(|e| e.to_string())?;
        let (mut live, mut total) = (0usize, 0usize);
        for p in model.params() {
            if let Some(m) = masks.get(&p.name) {
                for j in m.masked_indices() {
                    total += 1;
                    live += (p.value().data()[j] != 0.0) as usize;
                }
            }
        }
        let frac = live as f64 / total as f64;
        ensure(
            frac >= 0.01,
            format!("seed {seed} S={s}: only {:.2}% reactivated", 100.0 * frac),
        )?;
        min_frac = min_frac.min(frac);
    }
    Ok(format!(
        "4 checkpoints, {compared} inputs bit-identical, min reactivated {:.1}%",
        100.0 * min_frac
    ))
}

fn c5_static_masks() -> Outcome {
    let cfg = toy_config();
    let data = toy_corpus(cfg.context_window);
    let (ckpt, log) = toy_run(&toy_plan(0.75, 5, 500), PretrainStart::Fresh(cfg), &data)?;
    ensure(log.len() == 500, format!("{} steps logged", log.len()))?;
    check_static_masks(&ckpt).map_err(|e| e.to_string())?;
    let masks = ckpt.masks.as_ref().ok_or("no masks")?;
    let mut n = 0usize;
    for (i, p) in ckpt.model.params().iter().enumerate() {
        if let Some(m) = masks.get(&p.name) {
            for j in m.masked_indices() {
                ensure(
                    p.value().data()[j].to_bits() == 0,
                    format!("{}[{j}] moved", p.name),
                )?;
                ensure(
                    ckpt.opt.m[i].data()[j] == 0.0 && ckpt.opt.v[i].data()[j] == 0.0,
                    format!("{}[{j}] has optimizer state", p.name),
                )?;
                n += 1;
            }
        }
    }
    Ok(format!(
        "{n} masked weights all exactly 0 after 500 steps, overall sparsity {:.4}",
        mask_stats(masks).overall_sparsity
    ))
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor64 {
    Tensor64::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn c6_gradients() -> Outcome {
    const SEEDS: u64 = 20;
    const H: f64 = 1e-5;
    let mut worst = 0.0f64;
    let mut check =
        |what: &str, seed: u64, a: &Tensor64, n: &Tensor64, tol: f64| -> Result<(), String> {
            let e = relative_error(a.data(), n.data());
            worst = worst.max(e);
            ensure(e < tol, format!("{what} seed {seed}: {e:.2e}"))
        };
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let (a, b) = (
            rand_tensor(&mut rng, &[3, 4], -1.0, 1.0),
            rand_tensor(&mut rng, &[4, 2], -1.0, 1.0),
        );
        let w = rand_tensor(&mut rng, &[3, 2], -1.0, 1.0);
        let (da, db) = ok(matmul_backward(&a, &b, &w))?;
        check(
            "matmul dA",
            seed,
            &da,
            &numeric_gradient(&a, 1e-3, |x| weighted_sum(&matmul(x, &b).unwrap(), &w)),
            1e-6,
        )?;
        check(
            "matmul dB",
            seed,
            &db,
            &numeric_gradient(&b, 1e-3, |x| weighted_sum(&matmul(&a, x).unwrap(), &w)),
            1e-6,
        )?;

        let x = rand_tensor(&mut rng, &[2, 3, 5], -1.0, 1.0);
        let g = rand_tensor(&mut rng, &[5], -1.0, 1.0);
        let bias = rand_tensor(&mut rng, &[5], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &[2, 3, 5], -1.0, 1.0);
        let eps = DEFAULT_LAYERNORM_EPS;
        let (_, cache) = ok(layernorm(&x, &g, &bias, eps))?;
        let (dx, dg, dbias) = ok(layernorm_backward(&cache, &g, &w))?;
        let f = |x: &Tensor64, g: &Tensor64, b: &Tensor64| {
            weighted_sum(&layernorm(x, g, b, eps).unwrap().0, &w)
        };
        check(
            "layernorm dx",
            seed,
            &dx,
            &numeric_gradient(&x, H, |v| f(v, &g, &bias)),
            1e-5,
        )?;
        check(
            "layernorm dgain",
            seed,
            &dg,
            &numeric_gradient(&g, H, |v| f(&x, v, &bias)),
            1e-5,
        )?;
        check(
            "layernorm dbias",
            seed,
            &dbias,
            &numeric_gradient(&bias, H, |v| f(&x, &g, v)),
            1e-5,
        )?;

        let x = rand_tensor(&mut rng, &[4, 6], -4.0, 4.0);
        let w = rand_tensor(&mut rng, &[4, 6], -1.0, 1.0);
        let dx = ok(gelu_backward(&x, &w))?;
        check(
            "gelu",
            seed,
            &dx,
            &numeric_gradient(&x, H, |v| weighted_sum(&gelu(v).unwrap(), &w)),
            1e-5,
        )?;

        let x = rand_tensor(&mut rng, &[3, 4, 5], -3.0, 3.0);
        let w = rand_tensor(&mut rng, &[3, 4, 5], -1.0, 1.0);
        for axis in 0..3 {
            let y = ok(softmax(&x, axis))?;
            let dx = ok(softmax_backward(&y, &w, axis))?;
            let n = numeric_gradient(&x, H, |v| weighted_sum(&softmax(v, axis).unwrap(), &w));
            check("softmax", seed, &dx, &n, 1e-5)?;
        }

        let table = rand_tensor(&mut rng, &[7, 3], -1.0, 1.0);
        let ids: Vec<TokenId> = (0..6).map(|_| rng.random_range(0..7)).collect();
        let w = rand_tensor(&mut rng, &[6, 3], -1.0, 1.0);
        let dt = ok(embedding_backward(&ids, &w, 7))?;
        let n = numeric_gradient(&table, H, |t| {
            weighted_sum(&embedding_lookup(t, &ids).unwrap(), &w)
        });
        check("embedding", seed, &dt, &n, 1e-5)?;

        let logits = rand_tensor(&mut rng, &[5, 6], -2.0, 2.0);
        let targets: Vec<TokenId> = (0..5)
            .map(|i| {
                if i == 2 {
                    IGNORE_INDEX
                } else {
                    rng.random_range(0..6)
                }
            })
            .collect();
        let ce = ok(cross_entropy(&logits, &targets, IGNORE_INDEX))?;
        let dl = cross_entropy_backward(&ce, &targets, IGNORE_INDEX, 1.0);
        let n = numeric_gradient(&logits, H, |l| {
            cross_entropy(l, &targets, IGNORE_INDEX).unwrap().loss
        });
        check("cross entropy", seed, &dl, &n, 1e-5)?;
    }
    let op_worst = worst;

    let mut model_worst = 0.0f64;
    let mut probes = 0;
    for (seed, sparsity) in [(0, None), (1, Some(0.5))] {
        let cfg = ModelConfig::new(2, 8, 2, 13, 5);
        let e = model_spot_check(&cfg, seed, sparsity, 120)?;
        probes += 120;
        model_worst = model_worst.max(e);
        ensure(e < 1e-3, format!("full model seed {seed}: {e:.2e}"))?;
    }
    Ok(format!(
        "7 ops x {SEEDS} seeds, worst op error {op_worst:.1e}; {probes} model probes, worst {model_worst:.1e}"
    ))
}

fn model_spot_check(
    cfg: &ModelConfig,
    seed: u64,
    sparsity: Option<f64>,
    n_probes: usize,
) -> Result<f64, String> {
    const H: f64 = 1e-5;
    let err = |e: spdf_core::Error| e.to_string();
    let mut model = GptModel::<f64>::init(cfg, seed).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for p in model.params_mut() {
        for v in p.tensor.value.data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    let masks = match sparsity {
        Some(s) => {
            let m = build_masks(
                &model,
                &SparsityPlan::uniform(&model, s).map_err(err)?,
                seed,
            )
            .map_err(err)?;
            apply_masks(&mut model, &m).map_err(err)?;
            Some(m)
        }
        None => None,
    };
    let (b, t) = (2, cfg.context_window);
    let v = cfg.vocab_size as TokenId;
    let inputs: Vec<TokenId> = (0..b * t).map(|_| rng.random_range(0..v)).collect();
    let targets: Vec<TokenId> = (0..b * t).map(|_| rng.random_range(0..v)).collect();
    let batch = TokenBatch::new(b, t, inputs, targets).map_err(err)?;
    model.loss_and_grad(&batch, masks.as_ref()).map_err(err)?;
    let n_params = model.params().len();
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for _ in 0..n_probes {
        let pi = rng.random_range(0..n_params);
        let j = rng.random_range(0..model.params()[pi].value().len());
        analytic.push(model.params()[pi].grad().data()[j]);
        let orig = model.params()[pi].value().data()[j];
        let mut probe = model.clone();
        probe.params_mut()[pi].tensor.value.data_mut()[j] = orig + H;
        let up = probe.forward_loss(&batch, masks.as_ref()).map_err(err)?.0;
        probe.params_mut()[pi].tensor.value.data_mut()[j] = orig - H;
        let down = probe.forward_loss(&batch, masks.as_ref()).map_err(err)?.0;
        numeric.push((up - down) / (2.0 * H));
    }
    Ok(relative_error(&analytic, &numeric))
}

fn c7_schedule() -> Outcome {
    let peak = 6e-4;
    let (warm, total) = (1_000u64, 101_000u64);
    let s = ScheduleConfig::cosine(warm, total);
    let at_warm = lr_at(&s, peak, warm);
    let at_end = lr_at(&s, peak, total);
    ensure(at_warm == peak, format!("warmup end {at_warm:e}"))?;
    ensure(at_end == 0.1 * peak, format!("budget end {at_end:e}"))?;
    let mid = warm + (total - warm) / 2;
    let got = lr_at(&s, peak, mid);
    let progress = (mid - warm) as f64 / (total - warm) as f64;
    let want = 0.1 * peak + 0.9 * peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    ensure(
        (got - want).abs() <= 1e-9,
        format!("midpoint {got:e} vs {want:e}"),
    )?;
    Ok(format!(
        "peak {at_warm:.3e} at warmup end, {at_end:.3e} at end, midpoint {got:.6e}"
    ))
}

/// The multi-seed experiment is shared by criteria 8 and 9.
fn experiment() -> &'static Result<ExperimentReport, String> {
    static REPORT: std::sync::OnceLock<Result<ExperimentReport, String>> =
        std::sync::OnceLock::new();
    REPORT.get_or_init(|| {
        let start = Instant::now();
        let report = experiment_spdf(&ExperimentConfig::default(), &mut |msg| {
            eprintln!("  {msg}")
        })
        .map_err(|e| e.to_string())?;
        println!("{}", report.to_text());
        println!("experiment wall time {:.0}s", start.elapsed().as_secs_f64());
        Ok(report)
    })
}

fn c8_dense_vs_sparse() -> Outcome {
    let start = Instant::now();
    let r = experiment().as_ref().map_err(|e| e.clone())?;
    let secs = start.elapsed().as_secs_f64();
    ensure(r.config.seeds.len() >= 5, "fewer than 5 seeds")?;
    let failed: Vec<_> = r.cells.iter().filter(|c| c.failed()).collect();
    ensure(failed.is_empty(), format!("{} cells failed", failed.len()))?;
    let med = |s, m| {
        r.median(s, Task::DataToText, m)
            .ok_or(format!("no BLEU at S={s}"))
    };
    let (dense, sparse) = (
        med(0.75, FinetuneMode::Dense)?,
        med(0.75, FinetuneMode::Sparse)?,
    );
    let g75 = r.dense_sparse_gap(0.75).ok_or("no gap at 0.75")?;
    let g50 = r.dense_sparse_gap(0.5).ok_or("no gap at 0.5")?;
    let detail = format!(
        "S=0.75 median dense {dense:.2} vs sparse {sparse:.2}; gap 0.75 = {g75:.2}, gap 0.5 = {g50:.2}; {secs:.0}s"
    );
    ensure(dense >= sparse, detail.clone())?;
    ensure(g75 >= g50 || (g50 - g75).abs() <= 0.5, detail.clone())?;
    ensure(secs <= 7200.0, detail.clone())?;
    Ok(detail)
}

fn c9_harder_task() -> Outcome {
    let r = experiment().as_ref().map_err(|e| e.clone())?;
    let mut rows = Vec::new();
    for &seed in &r.config.seeds {
        match r.relative_degradation(seed, 0.75) {
            Some((bleu_drop, ppl_rise)) => rows.push(format!(
                "seed {seed}: ppl rise {:+.1}% vs bleu drop {:+.1}%{}",
                100.0 * ppl_rise,
                100.0 * bleu_drop,
                if ppl_rise > bleu_drop {
                    " (yes)"
                } else {
                    " (no)"
                }
            )),
            None => rows.push(format!("seed {seed}: missing")),
        }
    }
    let (wins, total) = r.harder_task_degrades_more(0.75);
    let detail = format!("{wins}/{total} seeds; {}", rows.join("; "));
    ensure(total >= 5 && wins >= 3, detail.clone())?;
    Ok(detail)
}

fn c10_determinism() -> Outcome {
    let cfg = toy_config();
    let data = toy_corpus(cfg.context_window);
    let bits = |log: &[MetricRecord]| -> Vec<u64> {
        log.iter()
            .filter_map(|r| r.train_loss)
            .map(f64::to_bits)
            .collect()
    };
    let (_, a) = toy_run(
        &toy_plan(0.5, 9, 50),
        PretrainStart::Fresh(cfg.clone()),
        &data,
    )?;
    let (_, b) = toy_run(
        &toy_plan(0.5, 9, 50),
        PretrainStart::Fresh(cfg.clone()),
        &data,
    )?;
    ensure(
        a.len() == 50 && bits(&a).len() == 50,
        "expected 50 logged losses",
    )?;
    ensure(bits(&a) == bits(&b), "repeat run diverged")?;

    let (full_ckpt, full) = toy_run(
        &toy_plan(0.75, 4, 40),
        PretrainStart::Fresh(cfg.clone()),
        &data,
    )?;
    let (half, first) = toy_run(&toy_plan(0.75, 4, 20), PretrainStart::Fresh(cfg), &data)?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("half.ckpt");
    half.save(&path).map_err(|e| e.to_string())?;
    let resumed = Checkpoint::load(&path).map_err(|e| e.to_string())?;
    let (end, second) = toy_run(
        &toy_plan(0.75, 4, 40),
        PretrainStart::Resume(Box::new(resumed)),
        &data,
    )?;
    let joined: Vec<_> = first.iter().chain(&second).cloned().collect();
    ensure(joined == full, "resumed trajectory differs")?;
    ensure(end == full_ckpt, "resumed final checkpoint differs")?;
    Ok("50 losses bit-identical; 20+20 resumed steps match 40 uninterrupted".into())
}

fn c11_bleu() -> Outcome {
    let opts = BleuOptions::default();
    let err = |e: spdf_core::Error| e.to_string();
    let id = corpus_bleu(
        &["the cat sat on the mat"],
        &[vec!["the cat sat on the mat"]],
        &opts,
    )
    .map_err(err)?;
    ensure(
        (id.bleu - 100.0).abs() < 1e-9,
        format!("identity {}", id.bleu),
    )?;
    let clip = corpus_bleu(&["the the the the"], &[vec!["the cat sat"]], &opts).map_err(err)?;
    ensure(
        clip.precisions[0] == 0.25,
        format!("p1 = {}", clip.precisions[0]),
    )?;

    let hyps = [
        "the cat sat on the mat",
        "a dog ran far away",
        "blue spice serves french food",
        "the the the",
    ];
    let refs = [
        vec!["the cat sat on the mat", "a cat was on the mat"],
        vec!["the dog ran far away"],
        vec!["blue spice is a french restaurant"],
        vec!["the cat"],
    ];
    let base = corpus_bleu(&hyps, &refs, &opts).map_err(err)?.bleu;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut idx: Vec<usize> = (0..hyps.len()).collect();
    for i in 0..100 {
        use rand::seq::SliceRandom;
        idx.shuffle(&mut rng);
        let h: Vec<&str> = idx.iter().map(|&i| hyps[i]).collect();
        let r: Vec<Vec<&str>> = idx.iter().map(|&i| refs[i].clone()).collect();
        let s = corpus_bleu(&h, &r, &opts).map_err(err)?.bleu;
        ensure(
            s.to_bits() == base.to_bits(),
            format!("shuffle {i}: {s} vs {base}"),
        )?;
    }
    Ok(format!(
        "identity 100, p1 = 1/4, 100 shuffles give {base:.4}"
    ))
}
