use serde::{Deserialize, Serialize};

use super::ModelError;

/// Shape and regularization settings of the encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_dim: usize,
    pub ff_dim: usize,
    /// Longest input frame in tokens, `[CLS]` and `[SEP]` included.
    pub max_len: usize,
    pub vocab_size: usize,
    /// Width of the classification head.
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    #[serde(default)]
    pub dropout_rate: f64,
    /// Share the token embedding matrix with the MLM output projection.
    #[serde(default)]
    pub tie_embeddings: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_num_classes() -> usize {
    2
}

impl ModelConfig {
    /// Desk-scale default: 2 layers, 64 hidden, 4 heads.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            num_layers: 2,
            num_heads: 4,
            hidden_dim: 64,
            ff_dim: 256,
            max_len: 128,
            vocab_size,
            num_classes: 2,
            dropout_rate: 0.0,
            tie_embeddings: false,
            seed: 0,
        }
    }

    /// BERT-base sized encoder (12 layers, 768 hidden, 12 heads, dropout 0.1).
    pub fn reference(vocab_size: usize) -> Self {
        ModelConfig {
            num_layers: 12,
            num_heads: 12,
            hidden_dim: 768,
            ff_dim: 3072,
            max_len: 512,
            vocab_size,
            num_classes: 2,
            dropout_rate: 0.1,
            tie_embeddings: false,
            seed: 0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::ConfigInvalid(m));
        if self.num_layers == 0 || self.num_heads == 0 || self.hidden_dim == 0 || self.ff_dim == 0 {
            return bad("layer, head, hidden and feed-forward sizes must be >= 1".into());
        }
        if self.hidden_dim % self.num_heads != 0 {
            return bad(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.max_len < 3 {
            return bad(format!("max_len {} must be >= 3", self.max_len));
        }
        if self.vocab_size == 0 || self.num_classes == 0 {
            return bad("vocab_size and num_classes must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn parameter_count(&self) -> usize {
        let (d, f, v) = (self.hidden_dim, self.ff_dim, self.vocab_size);
        let per_layer = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 4 * d;
        let head = if self.tie_embeddings { v } else { d * v + v };
        v * d + self.max_len * d + self.num_layers * per_layer + head + d * self.num_classes + self.num_classes
    }
}
