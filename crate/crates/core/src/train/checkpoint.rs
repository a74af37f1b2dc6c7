//! Checkpoint file.
//!
//! Byte layout (integers and floats little-endian):
//!
//! ```text
//! offset 0       8 bytes    magic "SPDFCKPT"
//! offset 8       u32        format version
//! offset 12      u64        header length H
//! offset 20      H bytes    UTF-8 JSON header
//! then           f32 × Σn   parameter values, in header tensor order
//! then           f32 × Σn   first AdamW moments, same order
//! then           f32 × Σn   second AdamW moments, same order
//! then           ⌈n/8⌉ bytes per mask in header mask order, bit i = weight i, 1 = kept
//! ```
//!
//! The header records the model config, step and token counters, tensor
//! names and shapes, mask presence and names, and the data-sampling RNG state.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GptModel, ModelConfig};
use crate::optim::OptState;
use crate::sparsity::{Mask, MaskSet};

const MAGIC: &[u8; 8] = b"SPDFCKPT";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Model, masks, optimizer state and data-sampling RNG: everything needed to
/// continue training exactly where it stopped.
#[derive(Clone)]
pub struct Checkpoint {
    pub model: GptModel<f32>,
    pub masks: Option<MaskSet>,
    pub opt: OptState<f32>,
    pub rng: ChaCha8Rng,
}

impl fmt::Debug for Checkpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Checkpoint")
            .field("config", self.model.config())
            .field("params", &self.model.num_params())
            .field("masks", &self.masks.as_ref().map(|m| m.len()))
            .field("step", &self.opt.step)
            .field("tokens_seen", &self.opt.tokens_seen)
            .finish()
    }
}

/// Compares the persisted state; gradient buffers are scratch space and ignored.
impl PartialEq for Checkpoint {
    fn eq(&self, other: &Self) -> bool {
        self.model.config() == other.model.config()
            && self
                .model
                .params()
                .iter()
                .zip(other.model.params())
                .all(|(a, b)| a.name == b.name && a.value() == b.value())
            && self.masks == other.masks
            && self.opt == other.opt
            && self.rng == other.rng
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    step: u64,
    tokens_seen: u64,
    tensors: Vec<TensorEntry>,
    has_masks: bool,
    mask_seed: Option<u64>,
    masks: Vec<TensorEntry>,
    rng: ChaCha8Rng,
}

fn write_f32s(out: &mut Vec<u8>, xs: &[f32]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if buf.len() < n {
        return Err(Error::Format("checkpoint truncated".into()));
    }
    let (head, rest) = buf.split_at(n);
    *buf = rest;
    Ok(head)
}

fn read_f32s(buf: &mut &[u8], dst: &mut [f32]) -> Result<()> {
    let bytes = take(buf, dst.len() * 4)?;
    for (d, c) in dst.iter_mut().zip(bytes.chunks_exact(4)) {
        *d = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
    }
    Ok(())
}

impl Checkpoint {
    /// Fresh optimizer state and an RNG seeded with `seed`.
    pub fn new(model: GptModel<f32>, masks: Option<MaskSet>, seed: u64) -> Self {
        let opt = OptState::new(&model);
        Self {
            model,
            masks,
            opt,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn step(&self) -> u64 {
        self.opt.step
    }

    pub fn tokens_seen(&self) -> u64 {
        self.opt.tokens_seen
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.model.params();
        let header = Header {
            model: self.model.config().clone(),
            step: self.opt.step,
            tokens_seen: self.opt.tokens_seen,
            tensors: params
                .iter()
                .map(|p| TensorEntry {
                    name: p.name.clone(),
                    shape: p.value().shape().to_vec(),
                })
                .collect(),
            has_masks: self.masks.is_some(),
            mask_seed: self.masks.as_ref().map(|m| m.seed),
            masks: self
                .masks
                .iter()
                .flat_map(|ms| ms.iter())
                .map(|(name, m)| TensorEntry {
                    name: name.clone(),
                    shape: m.shape().to_vec(),
                })
                .collect(),
            rng: self.rng.clone(),
        };
        let header = serde_json::to_vec(&header)?;
        let n: usize = self.model.num_params();
        let mut out = Vec::with_capacity(20 + header.len() + 12 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for p in params {
            write_f32s(&mut out, p.value().data());
        }
        for m in &self.opt.m {
            write_f32s(&mut out, m.data());
        }
        for v in &self.opt.v {
            write_f32s(&mut out, v.data());
        }
        if let Some(ms) = &self.masks {
            for (_, m) in ms.iter() {
                out.extend_from_slice(&m.to_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut buf = bytes;
        if take(&mut buf, 8)? != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(take(&mut buf, 4)?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let hlen = u64::from_le_bytes(take(&mut buf, 8)?.try_into().expect("8 bytes")) as usize;
        let header: Header = serde_json::from_slice(take(&mut buf, hlen)?)?;

        let mut model = GptModel::<f32>::zeros(&header.model)?;
        if model.params().len() != header.tensors.len() {
            return Err(Error::Format(
                "tensor list does not match the model config".into(),
            ));
        }
        for (p, e) in model.params().iter().zip(&header.tensors) {
            if p.name != e.name || p.value().shape() != e.shape.as_slice() {
                return Err(Error::Format(format!(
                    "unexpected tensor {} {:?}",
                    e.name, e.shape
                )));
            }
        }
        for p in model.params_mut() {
            read_f32s(&mut buf, p.tensor.value.data_mut())?;
        }
        let mut opt = OptState::new(&model);
        opt.step = header.step;
        opt.tokens_seen = header.tokens_seen;
        for m in &mut opt.m {
            read_f32s(&mut buf, m.data_mut())?;
        }
        for v in &mut opt.v {
            read_f32s(&mut buf, v.data_mut())?;
        }
        let masks = if header.has_masks {
            let mut map = BTreeMap::new();
            for e in &header.masks {
                let n: usize = e.shape.iter().product();
                let m = Mask::from_bytes(&e.shape, take(&mut buf, n.div_ceil(8))?)?;
                map.insert(e.name.clone(), m);
            }
            let ms = MaskSet::from_masks(header.mask_seed.unwrap_or(0), map);
            ms.check_compatible(&model)?;
            Some(ms)
        } else {
            None
        };
        if !buf.is_empty() {
            return Err(Error::Format(format!(
                "{} trailing bytes in checkpoint",
                buf.len()
            )));
        }
        Ok(Self {
            model,
            masks,
            opt,
            rng: header.rng,
        })
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
