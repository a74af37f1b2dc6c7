//! Analytic training FLOP accounting.
//!
//! Per sequence of `T` tokens, counting 2 FLOPs per multiply-accumulate and a
//! backward pass at twice the forward cost:
//!
//! ```text
//! linear    = 3 · 2 · T · 12·L·d² · (1 − S)
//! attention = 3 · 4 · L · T² · d
//! vocab     = 3 · 2 · T · d · V
//! ```
//!
//! Embedding lookups, LayerNorm, biases and softmax are not counted.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Training tokens per parameter for a compute-optimal budget.
pub const CHINCHILLA_TOKENS_PER_PARAM: f64 = 20.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopQuery {
    pub model: ModelConfig,
    pub sparsity: f64,
    pub seq_len: u64,
    /// Number of training sequences. Fractional values are accepted for table-style counts such as `1.27e7`.
    pub n_sequences: f64,
}

impl FlopQuery {
    pub fn new(model: ModelConfig, sparsity: f64, seq_len: u64, n_sequences: f64) -> Self {
        Self {
            model,
            sparsity,
            seq_len,
            n_sequences,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(Error::Config(format!(
                "sparsity {} outside [0, 1)",
                self.sparsity
            )));
        }
        if self.seq_len == 0 {
            return Err(Error::Config("sequence length must be at least 1".into()));
        }
        if !(self.n_sequences >= 0.0 && self.n_sequences.is_finite()) {
            return Err(Error::Config(format!(
                "invalid sequence count {}",
                self.n_sequences
            )));
        }
        Ok(())
    }

    fn dense(&self) -> Self {
        Self {
            sparsity: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopBreakdown {
    /// Q/K/V/output projections and feed-forward matrices.
    pub sparsifiable_linear: f64,
    pub attention_scores: f64,
    pub vocab_projection: f64,
}

impl FlopBreakdown {
    pub fn total(&self) -> f64 {
        self.sparsifiable_linear + self.attention_scores + self.vocab_projection
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopReport {
    pub sparsity: f64,
    pub seq_len: u64,
    pub n_sequences: f64,
    pub flops_per_seq: f64,
    pub total_flops: f64,
    pub breakdown: FlopBreakdown,
    /// Per-sequence FLOPs relative to the same configuration at zero sparsity.
    pub reduction_ratio: f64,
}

impl FlopReport {
    pub fn total_exaflops(&self) -> f64 {
        self.total_flops / 1e18
    }

    /// Share of dense per-sequence FLOPs spent in sparsifiable layers.
    pub fn sparsifiable_fraction(&self) -> f64 {
        let dense_linear = self.breakdown.sparsifiable_linear / (1.0 - self.sparsity);
        dense_linear
            / (dense_linear + self.breakdown.attention_scores + self.breakdown.vocab_projection)
    }
}

fn breakdown(q: &FlopQuery) -> FlopBreakdown {
    let l = q.model.n_layers as f64;
    let d = q.model.d_model as f64;
    let v = q.model.vocab_size as f64;
    let t = q.seq_len as f64;
    FlopBreakdown {
        sparsifiable_linear: 3.0 * 2.0 * t * 12.0 * l * d * d * (1.0 - q.sparsity),
        attention_scores: 3.0 * 4.0 * l * t * t * d,
        vocab_projection: 3.0 * 2.0 * t * d * v,
    }
}

/// Per-sequence FLOPs of one training step (forward and backward).
pub fn flops_per_sequence(q: &FlopQuery) -> Result<FlopReport> {
    q.validate()?;
    let b = breakdown(q);
    let per_seq = b.total();
    let dense = breakdown(&q.dense()).total();
    Ok(FlopReport {
        sparsity: q.sparsity,
        seq_len: q.seq_len,
        n_sequences: q.n_sequences,
        flops_per_seq: per_seq,
        total_flops: per_seq * q.n_sequences,
        breakdown: b,
        reduction_ratio: if dense > 0.0 { per_seq / dense } else { 1.0 },
    })
}

/// Total FLOPs over `n_sequences`. Identical to [`flops_per_sequence`], which
/// already fills in the total.
pub fn total_training_flops(q: &FlopQuery) -> Result<FlopReport> {
    flops_per_sequence(q)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub pretrain: FlopReport,
    pub finetune: FlopReport,
    pub total_flops: f64,
    /// Dense pre-training plus the same fine-tuning.
    pub dense_baseline_flops: f64,
    /// `dense_baseline_flops / total_flops`.
    pub speedup: f64,
}

/// Sparse pre-training followed by dense fine-tuning, compared against a
/// fully dense pipeline.
pub fn combined_pipeline_flops(
    pretrain: &FlopQuery,
    finetune: &FlopQuery,
) -> Result<PipelineReport> {
    if finetune.sparsity != 0.0 {
        return Err(Error::Config(
            "fine-tuning FLOPs must be computed for a dense model".into(),
        ));
    }
    let pre = total_training_flops(pretrain)?;
    let ft = total_training_flops(finetune)?;
    let dense_pre = total_training_flops(&pretrain.dense())?;
    let total = pre.total_flops + ft.total_flops;
    let baseline = dense_pre.total_flops + ft.total_flops;
    Ok(PipelineReport {
        pretrain: pre,
        finetune: ft,
        total_flops: total,
        dense_baseline_flops: baseline,
        speedup: if total > 0.0 { baseline / total } else { 1.0 },
    })
}

/// Compute-optimal token budget: 20 tokens per parameter.
pub fn chinchilla_tokens(n_params: f64) -> f64 {
    CHINCHILLA_TOKENS_PER_PARAM * n_params
}

/// Smallest sequence length whose dense per-sequence FLOPs reach `target`.
pub fn solve_seq_len(model: &ModelConfig, target_flops_per_seq: f64) -> Result<u64> {
    let per_seq = |t: u64| breakdown(&FlopQuery::new(model.clone(), 0.0, t, 1.0)).total();
    if !target_flops_per_seq.is_finite() || target_flops_per_seq <= 0.0 {
        return Err(Error::Config(format!(
            "invalid FLOP target {target_flops_per_seq}"
        )));
    }
    let (mut lo, mut hi) = (1u64, 1u64);
    while per_seq(hi) < target_flops_per_seq {
        hi *= 2;
    }
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if per_seq(mid) < target_flops_per_seq {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    // pick whichever neighbour is closer
    if lo > 1
        && (target_flops_per_seq - per_seq(lo - 1)).abs()
            < (per_seq(lo) - target_flops_per_seq).abs()
    {
        lo -= 1;
    }
    Ok(lo)
}

/// Plain-text table of one or more reports.
pub fn format_table(rows: &[(&str, &FlopReport)]) -> String {
    let mut s = format!(
        "{:<14} {:>8} {:>10} {:>12} {:>12} {:>10} {:>10}\n",
        "run", "sparsity", "sequences", "FLOPs/seq", "total FLOPs", "exaFLOPs", "ratio"
    );
    for (name, r) in rows {
        s += &format!(
            "{:<14} {:>7.0}% {:>10.3e} {:>12.3e} {:>12.3e} {:>10.3} {:>9.3}x\n",
            name,
            r.sparsity * 100.0,
            r.n_sequences,
            r.flops_per_seq,
            r.total_flops,
            r.total_exaflops(),
            r.reduction_ratio
        );
    }
    s
}
