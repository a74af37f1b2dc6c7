//! AdamW with decoupled weight decay, global-norm clipping, a token-indexed
//! learning-rate schedule, and mask-aware updates.
//!
//! One step, for every trainable tensor:
//!
//! ```text
//! g ← g · min(1, clip / ‖g‖_global)
//! m ← β₁·m + (1−β₁)·g
//! v ← β₂·v + (1−β₂)·g²
//! w ← w − lr·λ·w − lr·m̂ / (√v̂ + ε)      m̂ = m/(1−β₁ᵗ), v̂ = v/(1−β₂ᵗ)
//! ```
//!
//! λ is zero for LayerNorm parameters and biases. Under a mask, gradients,
//! moments, decay and the update itself are all zero at masked positions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GptModel;
use crate::scalar::Scalar;
use crate::sparsity::MaskSet;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_global_norm: f64,
    pub peak_lr: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.1,
            clip_global_norm: 1.0,
            peak_lr: 6e-4,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.eps > 0.0
            && self.clip_global_norm > 0.0
            && self.weight_decay >= 0.0
            && self.peak_lr > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer config {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleShape {
    /// Cosine decay from peak to `final_lr_fraction · peak` (pre-training).
    Cosine,
    /// Linear decay from peak to zero (fine-tuning).
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub warmup_tokens: u64,
    pub total_tokens: u64,
    #[serde(default = "default_final_fraction")]
    pub final_lr_fraction: f64,
    pub shape: ScheduleShape,
}

fn default_final_fraction() -> f64 {
    0.1
}

/// Pre-training warmup length used by the large presets.
pub const PRETRAIN_WARMUP_TOKENS: u64 = 375_000_000;

impl ScheduleConfig {
    pub fn cosine(warmup_tokens: u64, total_tokens: u64) -> Self {
        Self {
            warmup_tokens,
            total_tokens,
            final_lr_fraction: 0.1,
            shape: ScheduleShape::Cosine,
        }
    }

    pub fn linear(warmup_tokens: u64, total_tokens: u64) -> Self {
        Self {
            warmup_tokens,
            total_tokens,
            final_lr_fraction: 0.0,
            shape: ScheduleShape::Linear,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_tokens >= self.total_tokens {
            return Err(Error::Config(format!(
                "warmup_tokens ({}) must be below total_tokens ({})",
                self.warmup_tokens, self.total_tokens
            )));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(Error::Config("final_lr_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Learning rate after `tokens_seen` tokens.
///
/// Linear ramp from 0 to `peak_lr` over the warmup, then the decay shape, then
/// held at the end value beyond `total_tokens`.
pub fn lr_at(sched: &ScheduleConfig, peak_lr: f64, tokens_seen: u64) -> f64 {
    if tokens_seen < sched.warmup_tokens {
        return peak_lr * tokens_seen as f64 / sched.warmup_tokens as f64;
    }
    let span = sched.total_tokens.saturating_sub(sched.warmup_tokens);
    let progress = if span == 0 {
        1.0
    } else {
        ((tokens_seen - sched.warmup_tokens) as f64 / span as f64).min(1.0)
    };
    match sched.shape {
        ScheduleShape::Cosine => {
            let floor = sched.final_lr_fraction * peak_lr;
            if progress >= 1.0 {
                return floor;
            }
            let w = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
            peak_lr * w + floor * (1.0 - w)
        }
        ScheduleShape::Linear => peak_lr * (1.0 - progress),
    }
}

/// Per-parameter AdamW moments and progress counters.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
    pub tokens_seen: u64,
}

impl<T: Scalar> OptState<T> {
    pub fn new(model: &GptModel<T>) -> Self {
        let zeros: Vec<Tensor<T>> = model
            .params()
            .iter()
            .map(|p| Tensor::zeros(p.value().shape()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            tokens_seen: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub clip_scale: f64,
}

/// Global L2 norm over all gradient tensors.
pub fn global_grad_norm<T: Scalar>(model: &GptModel<T>) -> f64 {
    model
        .params()
        .iter()
        .map(|p| p.grad().sum_squares())
        .sum::<f64>()
        .sqrt()
}

/// Scales every gradient by `clip / norm` when the global norm exceeds `clip`. Returns the scale used.
pub fn clip_global_norm<T: Scalar>(model: &mut GptModel<T>, clip: f64) -> f64 {
    let norm = global_grad_norm(model);
    if norm <= clip {
        return 1.0;
    }
    let scale = clip / norm;
    let s = T::of(scale);
    for p in model.params_mut() {
        p.tensor.grad.data_mut().iter_mut().for_each(|g| *g *= s);
    }
    scale
}

/// Applies one AdamW update using the gradients stored in `model`.
pub fn step<T: Scalar>(
    model: &mut GptModel<T>,
    masks: Option<&MaskSet>,
    cfg: &OptimizerConfig,
    state: &mut OptState<T>,
    lr: f64,
) -> Result<StepStats> {
    if state.m.len() != model.params().len() {
        return Err(Error::Dimension(
            "optimizer state does not match model".into(),
        ));
    }
    for p in model.params() {
        p.grad().ensure_finite(&format!("gradient of {}", p.name))?;
    }
    if let Some(masks) = masks {
        masks.check_compatible(model)?;
        for p in model.params_mut() {
            if let Some(mask) = masks.get(&p.name) {
                mask.zero_masked(p.tensor.grad.data_mut());
            }
        }
    }
    let grad_norm = global_grad_norm(model);
    let clip_scale = clip_global_norm(model, cfg.clip_global_norm);

    state.step += 1;
    let t = state.step as i32;
    let bc1 = T::of(1.0 - cfg.beta1.powi(t));
    let bc2 = T::of(1.0 - cfg.beta2.powi(t));
    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let one = T::one();
    let eps = T::of(cfg.eps);
    let lr_t = T::of(lr);

    for (i, p) in model.params_mut().iter_mut().enumerate() {
        let decay = if p.kind.decays() {
            T::of(lr * cfg.weight_decay)
        } else {
            T::zero()
        };
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let g = p.tensor.grad.data();
        let w = p.tensor.value.data_mut();
        for j in 0..w.len() {
            m[j] = b1 * m[j] + (one - b1) * g[j];
            v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            w[j] = w[j] - decay * w[j] - lr_t * m_hat / (v_hat.sqrt() + eps);
        }
        if let Some(mask) = masks.and_then(|ms| ms.get(&p.name)) {
            mask.zero_masked(w);
            mask.zero_masked(m);
            mask.zero_masked(v);
        }
    }
    Ok(StepStats {
        grad_norm,
        clip_scale,
    })
}
