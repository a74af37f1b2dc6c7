//! Sparse pre-training followed by dense and sparse fine-tuning across
//! sparsity levels and seeds, on the synthetic data-to-text and
//! summarization tasks.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::presets::preset;
use crate::data::synthetic::{
    pretraining_corpus, restaurant_records, split_80_10_10, summarization_pairs,
};
use crate::data::{
    linearize, make_finetune_examples, make_summarization_examples, pack, train_bpe, DataRecord,
    PackedDataset, PromptTarget, Vocabulary,
};
use crate::error::{Error, Result};
use crate::metrics::{score_run, GenerationCase};
use crate::model::{GenConfig, ModelConfig};
use crate::train::{
    evaluate_ppl, finetune, pretrain, Checkpoint, MetricsSink, NullSink, PretrainStart, TaskData,
    TrainPlan,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub preset: String,
    pub sparsities: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Seed for corpus, task data and tokenizer; shared by all cells.
    pub data_seed: u64,
    pub pretrain_docs: usize,
    pub pretrain_tokens: u64,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
    pub warmup_fraction: f64,
    /// Distractor sentences per summarization document.
    pub n_filler: usize,
    pub d2t_records: usize,
    /// References kept per training record, rotating through the available ones. 0 keeps all.
    pub d2t_train_refs: usize,
    pub summarization_pairs: usize,
    pub finetune_epochs: usize,
    pub finetune_batch: usize,
    pub finetune_lr: f64,
    pub patience: usize,
    pub generation: GenConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let p = preset("toy-small").expect("toy-small preset exists");
        Self {
            preset: p.name,
            sparsities: vec![0.0, 0.5, 0.75],
            seeds: vec![0, 1, 2, 3, 4],
            data_seed: 1234,
            pretrain_docs: 3000,
            pretrain_tokens: p.train_tokens,
            pretrain_batch: p.batch_size,
            pretrain_lr: p.peak_lr,
            warmup_fraction: 0.02,
            n_filler: 3,
            d2t_records: 300,
            d2t_train_refs: 1,
            summarization_pairs: 200,
            finetune_epochs: 5,
            finetune_batch: 8,
            finetune_lr: 2e-3,
            patience: 1,
            generation: GenConfig {
                beam_size: 4,
                max_new_tokens: 48,
                ..GenConfig::default()
            },
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let p = preset(&self.preset)?;
        if p.flops_only {
            return Err(Error::Config(format!(
                "preset {} is for FLOP accounting only",
                self.preset
            )));
        }
        if self.seeds.is_empty() || self.sparsities.is_empty() {
            return Err(Error::Config(
                "experiment needs at least one seed and one sparsity".into(),
            ));
        }
        if self.sparsities.iter().any(|s| !(0.0..1.0).contains(s)) {
            return Err(Error::Config("sparsities must lie in [0, 1)".into()));
        }
        if self.d2t_records < 10 || self.summarization_pairs < 10 {
            return Err(Error::Config(
                "each task needs at least 10 items for an 80/10/10 split".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    DataToText,
    Summarization,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneMode {
    Dense,
    Sparse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub seed: u64,
    pub sparsity: f64,
    pub task: Task,
    pub mode: FinetuneMode,
    pub bleu: Option<f64>,
    pub ppl: Option<f64>,
    pub best_epoch: Option<usize>,
    pub seconds: f64,
    pub error: Option<String>,
}

impl Cell {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub seed: u64,
    pub sparsity: f64,
    pub final_loss: Option<f64>,
    pub mask_sparsity: Option<f64>,
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub model: ModelConfig,
    pub vocab_hash: String,
    pub pretrain: Vec<PretrainSummary>,
    pub cells: Vec<Cell>,
}

pub fn median(xs: &mut [f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    })
}

impl ExperimentReport {
    pub fn cell(&self, seed: u64, sparsity: f64, task: Task, mode: FinetuneMode) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.seed == seed && c.sparsity == sparsity && c.task == task && c.mode == mode)
    }

    fn values(&self, sparsity: f64, task: Task, mode: FinetuneMode) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|c| c.sparsity == sparsity && c.task == task && c.mode == mode && !c.failed())
            .filter_map(|c| match task {
                Task::DataToText => c.bleu,
                Task::Summarization => c.ppl,
            })
            .collect()
    }

    /// Median BLEU (data-to-text) or PPL (summarization) over successful seeds.
    pub fn median(&self, sparsity: f64, task: Task, mode: FinetuneMode) -> Option<f64> {
        median(&mut self.values(sparsity, task, mode))
    }

    /// Median dense-FT BLEU minus median sparse-FT BLEU.
    pub fn dense_sparse_gap(&self, sparsity: f64) -> Option<f64> {
        Some(
            self.median(sparsity, Task::DataToText, FinetuneMode::Dense)?
                - self.median(sparsity, Task::DataToText, FinetuneMode::Sparse)?,
        )
    }

    /// Per seed: relative BLEU drop and relative PPL increase of dense
    /// fine-tuning at `sparsity` against the dense (`S = 0`) baseline.
    pub fn relative_degradation(&self, seed: u64, sparsity: f64) -> Option<(f64, f64)> {
        let get = |s: f64, t: Task| {
            self.cell(seed, s, t, FinetuneMode::Dense)
                .filter(|c| !c.failed())
        };
        let b0 = get(0.0, Task::DataToText)?.bleu?;
        let bs = get(sparsity, Task::DataToText)?.bleu?;
        let p0 = get(0.0, Task::Summarization)?.ppl?;
        let ps = get(sparsity, Task::Summarization)?.ppl?;
        let bleu_drop = if b0 > 0.0 { (b0 - bs) / b0 } else { 0.0 };
        Some((bleu_drop, (ps - p0) / p0))
    }

    /// Seeds where the summarization degradation exceeds the data-to-text one.
    pub fn harder_task_degrades_more(&self, sparsity: f64) -> (usize, usize) {
        let mut wins = 0;
        let mut total = 0;
        for &seed in &self.config.seeds {
            if let Some((bleu_drop, ppl_rise)) = self.relative_degradation(seed, sparsity) {
                total += 1;
                if ppl_rise > bleu_drop {
                    wins += 1;
                }
            }
        }
        (wins, total)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let c = &self.config;
        let _ = writeln!(
            s,
            "preset {} (L={} d={} heads={} V={} ctx={}), vocab {}, seeds {:?}",
            c.preset,
            self.model.n_layers,
            self.model.d_model,
            self.model.n_heads,
            self.model.vocab_size,
            self.model.context_window,
            self.vocab_hash,
            c.seeds
        );
        let _ = writeln!(s, "\npre-training");
        for p in &self.pretrain {
            let _ = writeln!(
                s,
                "  seed {:>3} S={:.2}  loss {}  mask sparsity {}  {:.1}s{}",
                p.seed,
                p.sparsity,
                p.final_loss.map_or("-".into(), |l| format!("{l:.4}")),
                p.mask_sparsity.map_or("-".into(), |l| format!("{l:.4}")),
                p.seconds,
                p.error
                    .as_ref()
                    .map_or(String::new(), |e| format!("  FAILED: {e}"))
            );
        }
        let _ = writeln!(s, "\nper-seed results");
        let _ = writeln!(
            s,
            "  {:>4} {:>5} {:<14} {:<6} {:>8} {:>8} {:>5}",
            "seed", "S", "task", "mode", "BLEU", "PPL", "epoch"
        );
        for cell in &self.cells {
            let _ = writeln!(
                s,
                "  {:>4} {:>5.2} {:<14} {:<6} {:>8} {:>8} {:>5}{}",
                cell.seed,
                cell.sparsity,
                format!("{:?}", cell.task),
                format!("{:?}", cell.mode),
                cell.bleu.map_or("-".into(), |v| format!("{v:.2}")),
                cell.ppl.map_or("-".into(), |v| format!("{v:.4}")),
                cell.best_epoch.map_or("-".into(), |v| v.to_string()),
                cell.error
                    .as_ref()
                    .map_or(String::new(), |e| format!("  FAILED: {e}"))
            );
        }
        let fmt = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |x| format!("{x:.p$}"));
        let _ = writeln!(s, "\ndense vs sparse fine-tuning, data-to-text median BLEU");
        let _ = writeln!(
            s,
            "  {:>5} {:>8} {:>8} {:>8}",
            "S", "dense", "sparse", "gap"
        );
        for &sp in &c.sparsities {
            let _ = writeln!(
                s,
                "  {:>5.2} {:>8} {:>8} {:>8}",
                sp,
                fmt(self.median(sp, Task::DataToText, FinetuneMode::Dense), 2),
                fmt(self.median(sp, Task::DataToText, FinetuneMode::Sparse), 2),
                fmt(self.dense_sparse_gap(sp), 2)
            );
        }
        let _ = writeln!(
            s,
            "\nsparse pre-training vs dense baseline (dense fine-tuning), median"
        );
        let _ = writeln!(s, "  {:>5} {:>10} {:>10}", "S", "d2t BLEU", "summ PPL");
        for &sp in &c.sparsities {
            let _ = writeln!(
                s,
                "  {:>5.2} {:>10} {:>10}",
                sp,
                fmt(self.median(sp, Task::DataToText, FinetuneMode::Dense), 2),
                fmt(self.median(sp, Task::Summarization, FinetuneMode::Dense), 4)
            );
        }
        for &sp in c.sparsities.iter().filter(|&&s| s > 0.0) {
            let _ = writeln!(
                s,
                "\nrelative degradation at S={sp:.2} (BLEU drop vs PPL rise)"
            );
            for &seed in &c.seeds {
                if let Some((b, p)) = self.relative_degradation(seed, sp) {
                    let _ = writeln!(
                        s,
                        "  seed {seed:>3}: BLEU {:+.4}  PPL {:+.4}  {}",
                        b,
                        p,
                        if p > b {
                            "summarization degrades more"
                        } else {
                            "data-to-text degrades more"
                        }
                    );
                }
            }
            let (w, t) = self.harder_task_degrades_more(sp);
            let _ = writeln!(s, "  summarization degrades more in {w} of {t} seeds");
        }
        s
    }
}

/// Tokenizer, pre-training corpus and both downstream tasks.
pub struct ExperimentData {
    pub vocab: Vocabulary,
    pub corpus: PackedDataset,
    pub d2t: TaskData,
    pub d2t_test: Vec<GenerationCase>,
    pub summarization: TaskData,
    pub summarization_test: Vec<PromptTarget>,
}

fn generation_cases(vocab: &Vocabulary, records: &[DataRecord]) -> Vec<GenerationCase> {
    records
        .iter()
        .map(|r| GenerationCase {
            prompt: vocab.encode(&linearize(&r.fields)),
            references: r.references.clone(),
        })
        .collect()
}

pub fn build_data(cfg: &ExperimentConfig, model: &ModelConfig) -> Result<ExperimentData> {
    let docs = pretraining_corpus(
        cfg.pretrain_docs,
        cfg.n_filler,
        cfg.data_seed.wrapping_add(2),
    );
    let vocab = train_bpe(&docs, model.vocab_size)?;
    let corpus = pack(&vocab, &docs, model.context_window)?;

    let records = restaurant_records(cfg.d2t_records, cfg.data_seed);
    let (mut tr, va, te) = split_80_10_10(&records);
    if cfg.d2t_train_refs > 0 {
        for (i, r) in tr.iter_mut().enumerate() {
            let n = r.references.len();
            let keep = cfg.d2t_train_refs.min(n);
            r.references = (0..keep)
                .map(|j| r.references[(i + j) % n].clone())
                .collect();
        }
    }
    let d2t = TaskData {
        train: make_finetune_examples(&vocab, &tr)?,
        validation: make_finetune_examples(&vocab, &va)?,
    };
    let pairs = summarization_pairs(
        cfg.summarization_pairs,
        cfg.n_filler,
        cfg.data_seed.wrapping_add(1),
    );
    let (tr, va, te_s) = split_80_10_10(&pairs);
    let summarization = TaskData {
        train: make_summarization_examples(&vocab, &tr),
        validation: make_summarization_examples(&vocab, &va),
    };
    let too_long = d2t
        .train
        .iter()
        .chain(&summarization.train)
        .map(|e| e.input_len())
        .max()
        .unwrap_or(0);
    if too_long > model.context_window {
        return Err(Error::Config(format!(
            "fine-tuning examples of {too_long} tokens exceed context window {}",
            model.context_window
        )));
    }
    Ok(ExperimentData {
        d2t_test: generation_cases(&vocab, &te),
        summarization_test: make_summarization_examples(&vocab, &te_s),
        vocab,
        corpus,
        d2t,
        summarization,
    })
}

fn finetune_plan(cfg: &ExperimentConfig, seed: u64, dense: bool) -> TrainPlan {
    let mut p = TrainPlan::finetune(
        cfg.finetune_batch,
        cfg.finetune_epochs,
        cfg.finetune_lr,
        seed,
    );
    p.densify_on_finetune = dense;
    p.patience = cfg.patience;
    p
}

/// Runs every (seed, sparsity) pre-training and its fine-tuning cells.
/// Failed cells are recorded with their error and the run continues.
pub fn experiment_spdf(
    cfg: &ExperimentConfig,
    progress: &mut dyn FnMut(&str),
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let model_cfg = preset(&cfg.preset)?.model;
    let data = build_data(cfg, &model_cfg)?;
    progress(&format!(
        "data: {} pre-training sequences, {} / {} fine-tuning examples",
        data.corpus.len(),
        data.d2t.train.len(),
        data.summarization.train.len()
    ));
    let mut report = ExperimentReport {
        config: cfg.clone(),
        model: model_cfg.clone(),
        vocab_hash: data.vocab.hash(),
        pretrain: Vec::new(),
        cells: Vec::new(),
    };
    let warmup = (cfg.pretrain_tokens as f64 * cfg.warmup_fraction) as u64;
    for &seed in &cfg.seeds {
        for &sparsity in &cfg.sparsities {
            let start = Instant::now();
            let mut plan = TrainPlan::pretrain(
                cfg.pretrain_batch,
                cfg.pretrain_tokens,
                warmup,
                cfg.pretrain_lr,
                seed,
            );
            plan.sparsity = sparsity;
            plan.eval_every = u64::MAX;
            let mut log: Vec<crate::train::MetricRecord> = Vec::new();
            let pre = pretrain(
                &plan,
                PretrainStart::Fresh(model_cfg.clone()),
                &data.corpus,
                &mut log,
            );
            let tail: Vec<f64> = log
                .iter()
                .rev()
                .take(20)
                .filter_map(|r| r.train_loss)
                .collect();
            let final_loss =
                (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64);
            let ckpt = match pre {
                Ok(c) => {
                    report.pretrain.push(PretrainSummary {
                        seed,
                        sparsity,
                        final_loss,
                        mask_sparsity: c
                            .masks
                            .as_ref()
                            .map(|m| crate::sparsity::mask_stats(m).overall_sparsity),
                        seconds: start.elapsed().as_secs_f64(),
                        error: None,
                    });
                    c
                }
                Err(e) => {
                    progress(&format!(
                        "seed {seed} S={sparsity}: pre-training failed: {e}"
                    ));
                    report.pretrain.push(PretrainSummary {
                        seed,
                        sparsity,
                        final_loss,
                        mask_sparsity: None,
                        seconds: start.elapsed().as_secs_f64(),
                        error: Some(e.to_string()),
                    });
                    for (task, mode) in [
                        (Task::DataToText, FinetuneMode::Dense),
                        (Task::DataToText, FinetuneMode::Sparse),
                        (Task::Summarization, FinetuneMode::Dense),
                    ] {
                        report.cells.push(Cell {
                            seed,
                            sparsity,
                            task,
                            mode,
                            bleu: None,
                            ppl: None,
                            best_epoch: None,
                            seconds: 0.0,
                            error: Some(format!("pre-training failed: {e}")),
                        });
                    }
                    continue;
                }
            };
            progress(&format!(
                "seed {seed} S={sparsity}: pre-trained to loss {:.4} in {:.1}s",
                final_loss.unwrap_or(f64::NAN),
                start.elapsed().as_secs_f64()
            ));
            for mode in [FinetuneMode::Dense, FinetuneMode::Sparse] {
                let cell = run_cell(
                    cfg,
                    &data,
                    &ckpt,
                    seed,
                    sparsity,
                    Task::DataToText,
                    mode,
                    &mut NullSink,
                );
                progress(&cell_line(&cell));
                report.cells.push(cell);
            }
            let cell = run_cell(
                cfg,
                &data,
                &ckpt,
                seed,
                sparsity,
                Task::Summarization,
                FinetuneMode::Dense,
                &mut NullSink,
            );
            progress(&cell_line(&cell));
            report.cells.push(cell);
        }
    }
    Ok(report)
}

fn cell_line(c: &Cell) -> String {
    match &c.error {
        Some(e) => format!(
            "seed {} S={} {:?}/{:?}: FAILED {e}",
            c.seed, c.sparsity, c.task, c.mode
        ),
        None => format!(
            "seed {} S={} {:?}/{:?}: BLEU {} PPL {} ({:.1}s)",
            c.seed,
            c.sparsity,
            c.task,
            c.mode,
            c.bleu.map_or("-".into(), |b| format!("{b:.2}")),
            c.ppl.map_or("-".into(), |p| format!("{p:.4}")),
            c.seconds
        ),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    ckpt: &Checkpoint,
    seed: u64,
    sparsity: f64,
    task: Task,
    mode: FinetuneMode,
    sink: &mut dyn MetricsSink,
) -> Cell {
    let start = Instant::now();
    let result = (|| -> Result<(Option<f64>, Option<f64>, usize)> {
        let plan = finetune_plan(cfg, seed, mode == FinetuneMode::Dense);
        let pad = data.vocab.pad_id();
        match task {
            Task::DataToText => {
                let out = finetune(&plan, ckpt.clone(), &data.d2t, pad, None, sink)?;
                let r = score_run(
                    &out.best.model,
                    out.best.masks.as_ref(),
                    &data.vocab,
                    &data.d2t_test,
                    &[],
                    &cfg.generation,
                )?;
                Ok((Some(r.bleu), None, out.best_epoch))
            }
            Task::Summarization => {
                let out = finetune(&plan, ckpt.clone(), &data.summarization, pad, None, sink)?;
                let ppl = evaluate_ppl(
                    &out.best.model,
                    out.best.masks.as_ref(),
                    &data.summarization_test,
                    pad,
                )?;
                Ok((None, Some(ppl), out.best_epoch))
            }
        }
    })();
    let seconds = start.elapsed().as_secs_f64();
    match result {
        Ok((bleu, ppl, epoch)) => Cell {
            seed,
            sparsity,
            task,
            mode,
            bleu,
            ppl,
            best_epoch: Some(epoch),
            seconds,
            error: None,
        },
        Err(e) => Cell {
            seed,
            sparsity,
            task,
            mode,
            bleu: None,
            ppl: None,
            best_epoch: None,
            seconds,
            error: Some(e.to_string()),
        },
    }
}
