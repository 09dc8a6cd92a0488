//! Desk-scale masked-language-model encoder.

mod checkpoint;
mod config;
mod encoder;
mod optim;
mod params;
mod scalar;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TensorRecord, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use encoder::{
    backward, batch_cls_loss, batch_mlm_loss, forward, mlm_loss, mlm_loss_sum, predict_classes, BackwardOptions,
    Batch, ClsExample, ForwardTrace, Gradients, MlmExample, LN_EPS,
};
pub use optim::{AdamWConfig, OptimizerState};
pub use params::{Layout, LayerSlots, ModelParams, ParamEntry, ParamKind, INIT_STD};
pub use scalar::{gemm, Scalar, Tr};
pub use train::{finetune_classify, train_step, EpochMetrics, FinetuneConfig};

use crate::tokenizer::TokenId;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    ConfigInvalid(String),
    #[error("sequence of {len} tokens exceeds max_len {max_len}")]
    LengthExceeded { len: usize, max_len: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("token id {id} outside vocabulary of size {vocab_size}")]
    InvalidToken { id: TokenId, vocab_size: usize },
    #[error("invalid label {label} at position {position}")]
    InvalidLabel { position: usize, label: i64 },
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: u64, loss: f64 },
    #[error("non-finite parameters after step {step}")]
    NonFiniteParams { step: u64 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
