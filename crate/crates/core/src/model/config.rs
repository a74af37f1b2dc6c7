use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters of a decoder-only GPT.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_head: usize,
    /// Feed-forward width; always `4 · d_model`.
    pub d_ff: usize,
    pub vocab_size: usize,
    pub context_window: usize,
    #[serde(default = "default_tie")]
    pub tie_embeddings: bool,
}

fn default_tie() -> bool {
    true
}

impl ModelConfig {
    /// Config with `d_head = d_model / n_heads` and `d_ff = 4 · d_model`.
    pub fn new(
        n_layers: usize,
        d_model: usize,
        n_heads: usize,
        vocab_size: usize,
        context_window: usize,
    ) -> Self {
        Self {
            n_layers,
            d_model,
            n_heads,
            d_head: d_model.checked_div(n_heads).unwrap_or(0),
            d_ff: 4 * d_model,
            vocab_size,
            context_window,
            tie_embeddings: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_layers == 0 || self.d_model == 0 || self.n_heads == 0 || self.vocab_size == 0 {
            return fail("n_layers, d_model, n_heads and vocab_size must be positive".into());
        }
        if self.d_model != self.n_heads * self.d_head {
            return fail(format!(
                "d_model ({}) must equal n_heads·d_head ({}·{})",
                self.d_model, self.n_heads, self.d_head
            ));
        }
        if self.d_ff != 4 * self.d_model {
            return fail(format!(
                "d_ff ({}) must be 4·d_model ({})",
                self.d_ff,
                4 * self.d_model
            ));
        }
        if self.context_window < 1 {
            return fail("context_window must be at least 1".into());
        }
        Ok(())
    }

    /// Parameters in the Q, K, V, Output and two feed-forward matrices: `12·L·d²`.
    pub fn sparsifiable_params(&self) -> usize {
        self.n_layers * (4 * self.d_model * self.d_model + 2 * self.d_model * self.d_ff)
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let per_layer = 4 * d * d + 4 * d // attention weights and biases
            + d * self.d_ff + self.d_ff     // fc
            + self.d_ff * d + d             // proj
            + 4 * d; // two layer norms
        let embeddings = self.vocab_size * d + self.context_window * d;
        let head = if self.tie_embeddings {
            0
        } else {
            self.vocab_size * d
        };
        embeddings + self.n_layers * per_layer + 2 * d + head
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_heads() {
        let mut c = ModelConfig::new(2, 64, 4, 256, 32);
        assert!(c.validate().is_ok());
        c.d_head = 10;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::new(2, 64, 4, 256, 32);
        c.d_ff = 100;
        assert!(c.validate().is_err());
        let c = ModelConfig::new(2, 64, 4, 256, 0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn gpt2_small_sparsifiable_count() {
        let c = ModelConfig::new(12, 768, 12, 50257, 2048);
        assert_eq!(c.sparsifiable_params(), 144 * 768 * 768);
        assert_eq!(c.sparsifiable_params(), 84_934_656);
        // total lands at the advertised 125M
        let total = c.param_count() as f64;
        assert!((total / 125e6 - 1.0).abs() < 0.01, "{total}");
    }
}
