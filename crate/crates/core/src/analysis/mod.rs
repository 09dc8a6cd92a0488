//! Evaluation metric and training diagnostics.

mod attention;
mod dynamics;
mod embedding;
mod metrics;
mod report;

pub use attention::{attention_cls_mass, attention_entropy, AttentionMetrics, AttentionStats};
pub use dynamics::{noise_band, split_jump, stage_jump_detector, NoiseBand, StageJump, DEFAULT_JUMP_WINDOW};
pub use embedding::{central_dinucleotide_labels, embedding_silhouette, silhouette_cosine, token_embedding_silhouette};
pub use metrics::{mcc, multiclass_mcc, ConfusionCounts};
pub use report::{emit_report, RunReport, StepRecord, LOSS_CSV_HEADER, REPORT_SCHEMA_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("label and prediction lists differ in length ({labels} vs {predictions})")]
    LengthMismatch { labels: usize, predictions: usize },
    #[error("no masked query positions to average over")]
    NoMaskedPositions,
    #[error("embedding silhouette is defined for k = 6 only (got k = {0})")]
    KNotSix(usize),
    #[error("expected {expected} embedding rows, got {found}")]
    WrongRowCount { expected: usize, found: usize },
    #[error("loss history does not cover steps {from}..={to} around boundary {boundary}")]
    InsufficientHistory { boundary: u64, from: u64, to: u64 },
    #[error("invariant violated: {0}")]
    InvariantViolated(String),
    #[error("report I/O: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
