//! Sparse pre-training, dense or sparse fine-tuning, evaluation and grid search.

mod checkpoint;
mod metrics_log;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use metrics_log::{JsonlSink, MetricRecord, MetricsSink, NullSink};

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{finetune_batch, PackedDataset, PromptTarget};
use crate::error::{Error, Result};
use crate::model::{GptModel, ModelConfig, TokenBatch};
use crate::ops::TokenId;
use crate::optim::{self, lr_at, OptimizerConfig, ScheduleConfig};
use crate::scalar::Scalar;
use crate::sparsity::{apply_masks, build_masks, densify, MaskSet, SparsityPlan};

/// Offset between the run seed and the mask seed, so masks and data order use independent streams.
const MASK_SEED_OFFSET: u64 = 0x5eed_0001;
const DATA_SEED_OFFSET: u64 = 0x5eed_0002;
const EVAL_BATCH: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Finetune,
}

/// Training budget, optimizer, schedule and sparsity for one phase.
///
/// Pre-training runs until `token_budget` tokens are consumed. Fine-tuning
/// runs `epochs` passes with early stopping; its schedule length is replaced
/// by the exact number of tokens in those epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainPlan {
    pub phase: Phase,
    pub batch_size: usize,
    #[serde(default)]
    pub token_budget: u64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleConfig,
    /// Uniform sparsity applied at pre-training initialization.
    #[serde(default)]
    pub sparsity: f64,
    /// Per-matrix targets; replaces `sparsity` when present.
    #[serde(default)]
    pub sparsity_plan: Option<SparsityPlan>,
    #[serde(default = "default_true")]
    pub densify_on_finetune: bool,
    /// Steps between evaluations and checkpoints during pre-training.
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default = "default_patience")]
    pub patience: usize,
    pub seed: u64,
    /// Stop once this many optimizer steps have been taken in total.
    #[serde(default)]
    pub max_steps: Option<u64>,
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
}

fn default_epochs() -> usize {
    5
}
fn default_true() -> bool {
    true
}
fn default_eval_every() -> u64 {
    100
}
fn default_patience() -> usize {
    1
}

impl TrainPlan {
    /// Cosine pre-training plan over `token_budget` tokens.
    pub fn pretrain(
        batch_size: usize,
        token_budget: u64,
        warmup_tokens: u64,
        peak_lr: f64,
        seed: u64,
    ) -> Self {
        Self {
            phase: Phase::Pretrain,
            batch_size,
            token_budget,
            epochs: default_epochs(),
            optimizer: OptimizerConfig {
                peak_lr,
                ..OptimizerConfig::default()
            },
            schedule: ScheduleConfig::cosine(warmup_tokens, token_budget),
            sparsity: 0.0,
            sparsity_plan: None,
            densify_on_finetune: true,
            eval_every: default_eval_every(),
            patience: default_patience(),
            seed,
            max_steps: None,
            checkpoint_dir: None,
        }
    }

    /// Linear-decay fine-tuning plan.
    pub fn finetune(batch_size: usize, epochs: usize, peak_lr: f64, seed: u64) -> Self {
        Self {
            phase: Phase::Finetune,
            batch_size,
            token_budget: 0,
            epochs,
            optimizer: OptimizerConfig {
                peak_lr,
                weight_decay: 0.0,
                ..OptimizerConfig::default()
            },
            schedule: ScheduleConfig::linear(0, 1),
            sparsity: 0.0,
            sparsity_plan: None,
            densify_on_finetune: true,
            eval_every: default_eval_every(),
            patience: default_patience(),
            seed,
            max_steps: None,
            checkpoint_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        match self.phase {
            Phase::Pretrain if self.token_budget == 0 => {
                return fail("pre-training needs a positive token_budget")
            }
            Phase::Finetune if self.epochs == 0 => {
                return fail("fine-tuning needs at least one epoch")
            }
            _ => {}
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return fail("sparsity must lie in [0, 1)");
        }
        if self.eval_every == 0 {
            return fail("eval_every must be positive");
        }
        if self.patience == 0 {
            return fail("patience must be at least 1");
        }
        self.optimizer.validate()?;
        self.schedule.validate()
    }
}

/// Where pre-training starts from.
pub enum PretrainStart {
    /// New model, masks and optimizer state derived from the plan seed.
    Fresh(ModelConfig),
    /// Continue from a checkpoint, including its RNG and optimizer state.
    Resume(Box<Checkpoint>),
}

/// Fresh sparse model: random init followed by static masks from the plan.
pub fn init_checkpoint(config: &ModelConfig, plan: &TrainPlan) -> Result<Checkpoint> {
    let mut model = GptModel::<f32>::init(config, plan.seed)?;
    let sp = match &plan.sparsity_plan {
        Some(p) => p.clone(),
        None => SparsityPlan::uniform(&model, plan.sparsity)?,
    };
    let masks = build_masks(&model, &sp, plan.seed.wrapping_add(MASK_SEED_OFFSET))?;
    apply_masks(&mut model, &masks)?;
    Ok(Checkpoint::new(
        model,
        Some(masks),
        plan.seed.wrapping_add(DATA_SEED_OFFSET),
    ))
}

/// Returns an error naming the first masked weight or moment that is not exactly zero.
pub fn check_static_masks(ckpt: &Checkpoint) -> Result<()> {
    let Some(masks) = &ckpt.masks else {
        return Ok(());
    };
    for (i, p) in ckpt.model.params().iter().enumerate() {
        let Some(mask) = masks.get(&p.name) else {
            continue;
        };
        for j in mask.masked_indices() {
            let w = p.value().data()[j];
            let (m, v) = (ckpt.opt.m[i].data()[j], ckpt.opt.v[i].data()[j]);
            if w != 0.0 || m != 0.0 || v != 0.0 {
                return Err(Error::Input(format!(
                    "masked entry {j} of {} is nonzero (w={w}, m={m}, v={v})",
                    p.name
                )));
            }
        }
    }
    Ok(())
}

fn save_if(plan: &TrainPlan, name: &str, ckpt: &Checkpoint) -> Result<()> {
    if let Some(dir) = &plan.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
        ckpt.save(&dir.join(name))?;
    }
    Ok(())
}

fn diverged(step: u64, ckpt: Checkpoint) -> Error {
    Error::Diverged {
        step,
        last_good: Box::new(ckpt),
    }
}

/// Masked pre-training on random chunks of `data` until the token budget
/// (or `max_steps`) is reached. Masks stay fixed throughout.
pub fn pretrain(
    plan: &TrainPlan,
    start: PretrainStart,
    data: &PackedDataset,
    sink: &mut dyn MetricsSink,
) -> Result<Checkpoint> {
    plan.validate()?;
    if plan.phase != Phase::Pretrain {
        return Err(Error::Config("plan phase is not pretrain".into()));
    }
    if data.is_empty() || data.seq_len < 2 {
        return Err(Error::Input("pre-training dataset is empty".into()));
    }
    let mut ckpt = match start {
        PretrainStart::Fresh(cfg) => init_checkpoint(&cfg, plan)?,
        PretrainStart::Resume(c) => *c,
    };
    if data.seq_len - 1 > ckpt.model.config().context_window {
        return Err(Error::Input(format!(
            "sequence length {} exceeds context window {}",
            data.seq_len,
            ckpt.model.config().context_window
        )));
    }
    let tokens_per_step = (plan.batch_size * data.seq_len) as u64;
    while ckpt.opt.tokens_seen < plan.token_budget
        && plan.max_steps.is_none_or(|m| ckpt.opt.step < m)
    {
        let rng_before = ckpt.rng.clone();
        let idx: Vec<usize> = (0..plan.batch_size)
            .map(|_| ckpt.rng.random_range(0..data.len()))
            .collect();
        let seqs: Vec<&[TokenId]> = idx.iter().map(|&i| data.chunk(i)).collect();
        let batch = TokenBatch::next_token(&seqs)?;
        let lr = lr_at(&plan.schedule, plan.optimizer.peak_lr, ckpt.opt.tokens_seen);
        let step = ckpt.opt.step + 1;
        let loss = match ckpt.model.loss_and_grad(&batch, ckpt.masks.as_ref()) {
            Ok(l) => l,
            Err(Error::NonFinite { .. }) => {
                ckpt.rng = rng_before;
                return Err(diverged(step, ckpt));
            }
            Err(e) => return Err(e),
        };
        // a non-finite gradient is rejected before any state changes
        match optim::step(
            &mut ckpt.model,
            ckpt.masks.as_ref(),
            &plan.optimizer,
            &mut ckpt.opt,
            lr,
        ) {
            Ok(_) => {}
            Err(Error::NonFinite { .. }) => {
                ckpt.rng = rng_before;
                return Err(diverged(step, ckpt));
            }
            Err(e) => return Err(e),
        }
        ckpt.opt.tokens_seen += tokens_per_step;
        sink.record(&MetricRecord {
            phase: Phase::Pretrain,
            step,
            tokens: ckpt.opt.tokens_seen,
            lr,
            train_loss: Some(loss as f64),
            val_loss: None,
        })?;
        if step % plan.eval_every == 0 {
            check_static_masks(&ckpt)?;
            save_if(plan, "last.ckpt", &ckpt)?;
        }
    }
    check_static_masks(&ckpt)?;
    save_if(plan, "last.ckpt", &ckpt)?;
    Ok(ckpt)
}

/// Train/validation examples for fine-tuning.
#[derive(Clone, Debug, Default)]
pub struct TaskData {
    pub train: Vec<PromptTarget>,
    pub validation: Vec<PromptTarget>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    /// Epochs completed when evaluated; 0 is before any update.
    pub epoch: usize,
    pub step: u64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    /// Checkpoint at the evaluation with the lowest validation loss.
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub history: Vec<EvalPoint>,
    pub early_stopped: bool,
}

/// Validation loss callback: `(epoch, model, masks) -> loss`.
pub type Validator<'a> = dyn FnMut(usize, &GptModel<f32>, Option<&MaskSet>) -> Result<f64> + 'a;

/// Tracks the best evaluation and signals when `patience` consecutive
/// evaluations fail to improve on it.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    bad: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            bad: 0,
        }
    }

    /// Returns `(improved, stop)`.
    pub fn observe(&mut self, val: f64) -> (bool, bool) {
        if val < self.best {
            self.best = val;
            self.bad = 0;
            (true, false)
        } else {
            self.bad += 1;
            (false, self.bad >= self.patience)
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// Mean target-token NLL of `examples`.
pub fn mean_target_nll<T: Scalar>(
    model: &GptModel<T>,
    masks: Option<&MaskSet>,
    examples: &[PromptTarget],
    pad_id: TokenId,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Input("no examples to evaluate".into()));
    }
    let (mut nll, mut count) = (0.0, 0usize);
    for chunk in examples.chunks(EVAL_BATCH) {
        let refs: Vec<&PromptTarget> = chunk.iter().collect();
        let batch = finetune_batch(&refs, pad_id)?;
        let (s, c) = model.nll_sum(&batch, masks)?;
        nll += s;
        count += c;
    }
    Ok(nll / count.max(1) as f64)
}

/// `exp(mean target-token NLL)`.
pub fn evaluate_ppl<T: Scalar>(
    model: &GptModel<T>,
    masks: Option<&MaskSet>,
    examples: &[PromptTarget],
    pad_id: TokenId,
) -> Result<f64> {
    Ok(mean_target_nll(model, masks, examples, pad_id)?.exp())
}

/// Next-token perplexity over every chunk of a packed dataset.
pub fn evaluate_ppl_packed<T: Scalar>(
    model: &GptModel<T>,
    masks: Option<&MaskSet>,
    data: &PackedDataset,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Input("empty dataset".into()));
    }
    let chunks: Vec<&[TokenId]> = data.chunks().collect();
    let (mut nll, mut count) = (0.0, 0usize);
    for group in chunks.chunks(EVAL_BATCH) {
        let batch = TokenBatch::next_token(group)?;
        let (s, c) = model.nll_sum(&batch, masks)?;
        nll += s;
        count += c;
    }
    Ok((nll / count.max(1) as f64).exp())
}

/// Fine-tunes `ckpt` on `task.train`, densifying first when the plan asks.
///
/// Optimizer state is reset. Validation runs before the first update and after
/// every epoch, using `validator` when given and mean target NLL on
/// `task.validation` otherwise. Training stops after `patience` evaluations
/// without improvement and returns the best checkpoint.
pub fn finetune(
    plan: &TrainPlan,
    ckpt: Checkpoint,
    task: &TaskData,
    pad_id: TokenId,
    mut validator: Option<&mut Validator<'_>>,
    sink: &mut dyn MetricsSink,
) -> Result<FinetuneOutcome> {
    plan.validate()?;
    if plan.phase != Phase::Finetune {
        return Err(Error::Config("plan phase is not finetune".into()));
    }
    if task.validation.is_empty() {
        return Err(Error::Config(
            "fine-tuning task has no validation split".into(),
        ));
    }
    if task.train.is_empty() {
        return Err(Error::Input(
            "fine-tuning task has no training examples".into(),
        ));
    }
    let ckpt = if plan.densify_on_finetune {
        densify(ckpt)
    } else {
        ckpt
    };
    let mut cur = Checkpoint::new(
        ckpt.model,
        ckpt.masks,
        plan.seed.wrapping_add(DATA_SEED_OFFSET),
    );
    let epoch_tokens: u64 = task.train.iter().map(|e| e.input_len() as u64).sum();
    let schedule = ScheduleConfig {
        total_tokens: epoch_tokens * plan.epochs as u64,
        ..plan.schedule.clone()
    };

    let mut eval = |epoch: usize, c: &Checkpoint| -> Result<f64> {
        check_static_masks(c)?;
        match validator.as_deref_mut() {
            Some(v) => v(epoch, &c.model, c.masks.as_ref()),
            None => mean_target_nll(&c.model, c.masks.as_ref(), &task.validation, pad_id),
        }
    };

    let mut stopper = EarlyStopper::new(plan.patience);
    let v0 = eval(0, &cur)?;
    stopper.observe(v0);
    let mut history = vec![EvalPoint {
        epoch: 0,
        step: 0,
        val_loss: v0,
    }];
    sink.record(&MetricRecord {
        phase: Phase::Finetune,
        step: 0,
        tokens: 0,
        lr: 0.0,
        train_loss: None,
        val_loss: Some(v0),
    })?;
    let mut best = cur.clone();
    let mut best_epoch = 0;
    let mut early_stopped = false;
    let mut order: Vec<usize> = (0..task.train.len()).collect();

    'epochs: for epoch in 1..=plan.epochs {
        order.shuffle(&mut cur.rng);
        for idx in order.chunks(plan.batch_size) {
            if plan.max_steps.is_some_and(|m| cur.opt.step >= m) {
                break 'epochs;
            }
            let examples: Vec<&PromptTarget> = idx.iter().map(|&i| &task.train[i]).collect();
            let batch = finetune_batch(&examples, pad_id)?;
            let lr = lr_at(&schedule, plan.optimizer.peak_lr, cur.opt.tokens_seen);
            let step = cur.opt.step + 1;
            let loss = match cur.model.loss_and_grad(&batch, cur.masks.as_ref()) {
                Ok(l) => l,
                Err(Error::NonFinite { .. }) => return Err(diverged(step, best)),
                Err(e) => return Err(e),
            };
            match optim::step(
                &mut cur.model,
                cur.masks.as_ref(),
                &plan.optimizer,
                &mut cur.opt,
                lr,
            ) {
                Ok(_) => {}
                Err(Error::NonFinite { .. }) => return Err(diverged(step, best)),
                Err(e) => return Err(e),
            }
            cur.opt.tokens_seen += examples.iter().map(|e| e.input_len() as u64).sum::<u64>();
            sink.record(&MetricRecord {
                phase: Phase::Finetune,
                step,
                tokens: cur.opt.tokens_seen,
                lr,
                train_loss: Some(loss as f64),
                val_loss: None,
            })?;
        }
        let v = eval(epoch, &cur)?;
        history.push(EvalPoint {
            epoch,
            step: cur.opt.step,
            val_loss: v,
        });
        sink.record(&MetricRecord {
            phase: Phase::Finetune,
            step: cur.opt.step,
            tokens: cur.opt.tokens_seen,
            lr: lr_at(&schedule, plan.optimizer.peak_lr, cur.opt.tokens_seen),
            train_loss: None,
            val_loss: Some(v),
        })?;
        save_if(plan, "last.ckpt", &cur)?;
        let (improved, stop) = stopper.observe(v);
        if improved {
            best = cur.clone();
            best_epoch = epoch;
            save_if(plan, "best.ckpt", &best)?;
        }
        if stop {
            early_stopped = epoch < plan.epochs;
            break;
        }
    }
    Ok(FinetuneOutcome {
        best,
        best_epoch,
        history,
        early_stopped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lr: f64,
    pub batch_size: usize,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub best: TrainPlan,
    pub cells: Vec<GridCell>,
}

/// Evaluates every (learning rate, batch size) pair with `evaluate` and keeps
/// the plan with the lowest validation loss. Ties go to the smaller learning
/// rate, then the smaller batch.
pub fn grid_search(
    plan: &TrainPlan,
    lrs: &[f64],
    batch_sizes: &[usize],
    mut evaluate: impl FnMut(&TrainPlan) -> Result<f64>,
) -> Result<GridReport> {
    if lrs.is_empty() || batch_sizes.is_empty() {
        return Err(Error::Config(
            "grid search needs at least one learning rate and batch size".into(),
        ));
    }
    let mut cells = Vec::with_capacity(lrs.len() * batch_sizes.len());
    let mut best: Option<(f64, f64, usize)> = None;
    for &lr in lrs {
        for &bs in batch_sizes {
            let mut p = plan.clone();
            p.optimizer.peak_lr = lr;
            p.batch_size = bs;
            let val = evaluate(&p)?;
            cells.push(GridCell {
                lr,
                batch_size: bs,
                val_loss: val,
            });
            let key = (val, lr, bs);
            let better = match best {
                None => true,
                Some(b) => {
                    key.0 < b.0 || (key.0 == b.0 && (key.1 < b.1 || (key.1 == b.1 && key.2 < b.2)))
                }
            };
            if better && !val.is_nan() {
                best = Some(key);
            }
        }
    }
    let (_, lr, bs) = best.ok_or_else(|| Error::Input("every grid cell produced NaN".into()))?;
    let mut best_plan = plan.clone();
    best_plan.optimizer.peak_lr = lr;
    best_plan.batch_size = bs;
    Ok(GridReport {
        best: best_plan,
        cells,
    })
}
