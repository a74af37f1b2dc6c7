//! Static unstructured weight masks: creation, application, auditing and removal.
//!
//! A mask bit of 1 keeps the weight; 0 pins it to zero. Each sparsifiable
//! matrix with target sparsity `s` gets exactly `round(s·N)` zeros, placed
//! uniformly at random without replacement. Masks never change after creation.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GptModel, ParamKind};
use crate::scalar::Scalar;
use crate::train::Checkpoint;

/// Binary mask over one weight matrix, one bit per weight.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    shape: Vec<usize>,
    len: usize,
    bits: Vec<u64>,
}

impl Mask {
    pub fn ones(shape: &[usize]) -> Self {
        let len: usize = shape.iter().product();
        let mut bits = vec![u64::MAX; len.div_ceil(64)];
        if !len.is_multiple_of(64) {
            if let Some(last) = bits.last_mut() {
                *last = (1u64 << (len % 64)) - 1;
            }
        }
        Self {
            shape: shape.to_vec(),
            len,
            bits,
        }
    }

    /// Mask with exactly `round(sparsity · N)` zeros chosen uniformly without replacement.
    pub fn random(shape: &[usize], sparsity: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        check_sparsity(sparsity)?;
        let mut mask = Self::ones(shape);
        let zeros = zero_count(sparsity, mask.len);
        for i in rand::seq::index::sample(rng, mask.len, zeros) {
            mask.set(i, false);
        }
        Ok(mask)
    }

    /// Rebuilds a mask from packed bytes, least significant bit first.
    pub fn from_bytes(shape: &[usize], bytes: &[u8]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::Format(format!(
                "mask of {len} bits needs {} bytes, got {}",
                len.div_ceil(8),
                bytes.len()
            )));
        }
        let mut mask = Self::ones(shape);
        for i in 0..len {
            mask.set(i, bytes[i / 8] >> (i % 8) & 1 == 1);
        }
        Ok(mask)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len.div_ceil(8)];
        for i in 0..self.len {
            if self.get(i) {
                out[i / 8] |= 1 << (i % 8);
            }
        }
        out
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    fn set(&mut self, i: usize, keep: bool) {
        if keep {
            self.bits[i / 64] |= 1 << (i % 64);
        } else {
            self.bits[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn zeros(&self) -> usize {
        self.len
            - self
                .bits
                .iter()
                .map(|w| w.count_ones() as usize)
                .sum::<usize>()
    }

    pub fn sparsity(&self) -> f64 {
        self.zeros() as f64 / self.len as f64
    }

    /// Multiplies `data` elementwise by the mask.
    pub fn apply_to<T: Scalar>(&self, data: &mut [T]) {
        debug_assert_eq!(data.len(), self.len);
        for (w, x) in self.bits.iter().zip(data.chunks_mut(64)) {
            if *w == u64::MAX {
                continue;
            }
            for (j, v) in x.iter_mut().enumerate() {
                if w >> j & 1 == 0 {
                    *v *= T::zero();
                }
            }
        }
    }

    /// Sets masked positions to exactly `0.0`.
    pub fn zero_masked<T: Scalar>(&self, data: &mut [T]) {
        for (i, v) in data.iter_mut().enumerate() {
            if !self.get(i) {
                *v = T::zero();
            }
        }
    }

    /// Indices of masked-out positions.
    pub fn masked_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&i| !self.get(i))
    }
}

/// `round(s · n)` with halves rounded away from zero.
pub fn zero_count(sparsity: f64, n: usize) -> usize {
    (sparsity * n as f64).round() as usize
}

fn check_sparsity(s: f64) -> Result<()> {
    if (0.0..1.0).contains(&s) {
        Ok(())
    } else {
        Err(Error::Config(format!("sparsity {s} outside [0, 1)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    /// One sparsity shared by every sparsifiable matrix.
    Uniform,
    PerLayer,
}

/// Target sparsity per sparsifiable matrix, keyed by parameter name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityPlan {
    pub mode: PlanMode,
    pub targets: BTreeMap<String, f64>,
}

impl SparsityPlan {
    /// Uniform plan covering every sparsifiable matrix of `model`.
    pub fn uniform<T: Scalar>(model: &GptModel<T>, sparsity: f64) -> Result<Self> {
        check_sparsity(sparsity)?;
        let targets = model
            .params()
            .iter()
            .filter(|p| p.kind.is_sparsifiable())
            .map(|p| (p.name.clone(), sparsity))
            .collect();
        Ok(Self {
            mode: PlanMode::Uniform,
            targets,
        })
    }

    pub fn validate<T: Scalar>(&self, model: &GptModel<T>) -> Result<()> {
        for (name, &s) in &self.targets {
            check_sparsity(s)?;
            match model.param(name) {
                None => {
                    return Err(Error::Config(format!(
                        "plan names unknown parameter {name}"
                    )))
                }
                Some(p) if !p.kind.is_sparsifiable() => {
                    return Err(Error::Config(format!(
                        "{name} ({:?}) is never sparsified",
                        p.kind
                    )))
                }
                _ => {}
            }
        }
        if let Some(missing) = model
            .params()
            .iter()
            .find(|p| p.kind.is_sparsifiable() && !self.targets.contains_key(&p.name))
        {
            return Err(Error::Config(format!(
                "plan does not cover {}",
                missing.name
            )));
        }
        if self.mode == PlanMode::Uniform {
            let mut vals = self.targets.values();
            if let Some(first) = vals.next() {
                if vals.any(|v| v != first) {
                    return Err(Error::Config(
                        "uniform plan with differing sparsities".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Masks for every sparsifiable matrix, plus the seed that generated them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskSet {
    pub seed: u64,
    masks: BTreeMap<String, Mask>,
}

impl MaskSet {
    pub fn from_masks(seed: u64, masks: BTreeMap<String, Mask>) -> Self {
        Self { seed, masks }
    }

    pub fn get(&self, name: &str) -> Option<&Mask> {
        self.masks.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Mask)> {
        self.masks.iter()
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// Every mask must name a sparsifiable parameter of identical shape.
    pub fn check_compatible<T: Scalar>(&self, model: &GptModel<T>) -> Result<()> {
        for (name, mask) in &self.masks {
            let p = model
                .param(name)
                .ok_or_else(|| Error::Dimension(format!("mask for unknown parameter {name}")))?;
            if p.kind != ParamKind::Sparsifiable {
                return Err(Error::Config(format!(
                    "mask on non-sparsifiable parameter {name}"
                )));
            }
            if p.value().shape() != mask.shape() {
                return Err(Error::Dimension(format!(
                    "mask shape {:?} does not match {name} {:?}",
                    mask.shape(),
                    p.value().shape()
                )));
            }
        }
        Ok(())
    }
}

/// Draws one random mask per planned matrix, in model parameter order, from a single seeded stream.
pub fn build_masks<T: Scalar>(
    model: &GptModel<T>,
    plan: &SparsityPlan,
    seed: u64,
) -> Result<MaskSet> {
    plan.validate(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks = BTreeMap::new();
    for p in model.params().iter().filter(|p| p.kind.is_sparsifiable()) {
        let s = plan.targets[&p.name];
        masks.insert(
            p.name.clone(),
            Mask::random(p.value().shape(), s, &mut rng)?,
        );
    }
    Ok(MaskSet { seed, masks })
}

/// Sets every masked weight to exactly `0.0`.
pub fn apply_masks<T: Scalar>(model: &mut GptModel<T>, masks: &MaskSet) -> Result<()> {
    masks.check_compatible(model)?;
    for p in model.params_mut() {
        if let Some(m) = masks.get(&p.name) {
            m.zero_masked(p.tensor.value.data_mut());
        }
    }
    Ok(())
}

/// Removes the masks of a checkpoint so the zeroed weights can train.
///
/// Previously masked weights stay at exactly zero and their optimizer moments
/// are reset, so the network computes the same function as before. A dense
/// checkpoint is returned unchanged.
pub fn densify(mut ckpt: Checkpoint) -> Checkpoint {
    let Some(masks) = ckpt.masks.take() else {
        log::warn!("densify called on a checkpoint without masks; nothing to do");
        return ckpt;
    };
    for (i, p) in ckpt.model.params_mut().iter_mut().enumerate() {
        if let Some(m) = masks.get(&p.name) {
            m.zero_masked(p.tensor.value.data_mut());
            m.zero_masked(ckpt.opt.m[i].data_mut());
            m.zero_masked(ckpt.opt.v[i].data_mut());
        }
    }
    ckpt
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerMaskStats {
    pub name: String,
    pub zeros: usize,
    pub total: usize,
    pub sparsity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskReport {
    pub seed: u64,
    pub layers: Vec<LayerMaskStats>,
    pub zeros: usize,
    pub total: usize,
    /// `Σ s_l·N_l / Σ N_l` over the masked matrices.
    pub overall_sparsity: f64,
}

impl MaskReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<28} {:>10} {:>10} {:>9}\n",
            "matrix", "zeros", "total", "sparsity"
        );
        for l in &self.layers {
            s += &format!(
                "{:<28} {:>10} {:>10} {:>9.4}\n",
                l.name, l.zeros, l.total, l.sparsity
            );
        }
        s += &format!(
            "{:<28} {:>10} {:>10} {:>9.4}\n",
            "overall", self.zeros, self.total, self.overall_sparsity
        );
        s
    }
}

pub fn mask_stats(masks: &MaskSet) -> MaskReport {
    let layers: Vec<LayerMaskStats> = masks
        .iter()
        .map(|(name, m)| LayerMaskStats {
            name: name.clone(),
            zeros: m.zeros(),
            total: m.len(),
            sparsity: m.sparsity(),
        })
        .collect();
    let weighted: Vec<(f64, usize)> = layers.iter().map(|l| (l.sparsity, l.total)).collect();
    MaskReport {
        seed: masks.seed,
        zeros: layers.iter().map(|l| l.zeros).sum(),
        total: layers.iter().map(|l| l.total).sum(),
        overall_sparsity: overall_sparsity(&weighted),
        layers,
    }
}

/// Overall sparsity `Σ s_l·N_l / Σ N_l` from per-layer `(s_l, N_l)`.
pub fn overall_sparsity(layers: &[(f64, usize)]) -> f64 {
    let n: usize = layers.iter().map(|&(_, n)| n).sum();
    if n == 0 {
        return 0.0;
    }
    layers.iter().map(|&(s, n)| s * n as f64).sum::<f64>() / n as f64
}
