use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Vocabulary size of the full-size presets.
pub const GPT2_VOCAB: usize = 50257;
/// Vocabulary size learned for the toy presets.
pub const TOY_VOCAB: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub model: ModelConfig,
    pub batch_size: usize,
    pub peak_lr: f64,
    /// Pre-training token budget.
    pub train_tokens: u64,
    /// Full-size models are meant for FLOP accounting only.
    pub flops_only: bool,
}

impl Preset {
    pub fn n_sequences(&self) -> f64 {
        self.train_tokens as f64 / self.model.context_window as f64
    }
}

pub const PRESET_NAMES: &[&str] = &["gpt2-small", "gpt3-xl", "toy-small", "toy-large"];

pub fn preset(name: &str) -> Result<Preset> {
    let p = |model: ModelConfig, batch_size, peak_lr, train_tokens, flops_only| Preset {
        name: name.to_string(),
        model,
        batch_size,
        peak_lr,
        train_tokens,
        flops_only,
    };
    Ok(match name {
        "gpt2-small" => p(
            ModelConfig::new(12, 768, 12, GPT2_VOCAB, 2048),
            256,
            6e-4,
            2_500_000_000,
            true,
        ),
        "gpt3-xl" => p(
            ModelConfig::new(24, 2048, 16, GPT2_VOCAB, 2048),
            512,
            2e-4,
            26_000_000_000,
            true,
        ),
        "toy-small" => p(
            ModelConfig::new(2, 64, 4, TOY_VOCAB, 128),
            8,
            5e-3,
            250_000,
            false,
        ),
        "toy-large" => p(
            ModelConfig::new(4, 128, 4, TOY_VOCAB, 128),
            8,
            3e-3,
            500_000,
            false,
        ),
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; expected one of {}",
                PRESET_NAMES.join(", ")
            )))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_presets_field_for_field() {
        let s = preset("gpt2-small").unwrap();
        assert_eq!(
            (
                s.model.n_layers,
                s.model.d_model,
                s.model.n_heads,
                s.model.d_head
            ),
            (12, 768, 12, 64)
        );
        assert_eq!(
            (s.batch_size, s.peak_lr, s.train_tokens),
            (256, 6e-4, 2_500_000_000)
        );
        let x = preset("gpt3-xl").unwrap();
        assert_eq!(
            (
                x.model.n_layers,
                x.model.d_model,
                x.model.n_heads,
                x.model.d_head
            ),
            (24, 2048, 16, 128)
        );
        assert_eq!(
            (x.batch_size, x.peak_lr, x.train_tokens),
            (512, 2e-4, 26_000_000_000)
        );
        assert!(s.flops_only && x.flops_only);
        assert!(preset("nope").is_err());
    }

    #[test]
    fn table_sequence_counts() {
        // 2.5e9 / 2048 and 26e9 / 2048
        assert!((preset("gpt2-small").unwrap().n_sequences() / 1.22e6 - 1.0).abs() < 0.01);
        assert!((preset("gpt3-xl").unwrap().n_sequences() / 1.27e7 - 1.0).abs() < 0.01);
    }

    #[test]
    fn all_presets_validate() {
        for n in PRESET_NAMES {
            preset(n).unwrap().model.validate().unwrap();
        }
    }
}
