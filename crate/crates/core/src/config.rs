//! Run configuration shared by every CLI command.
//!
//! Configs are JSON. Unknown keys are rejected, every field has a default, and
//! overrides are applied to the JSON tree before it is deserialized so that
//! flags and `--set path=value` go through the same validation as the file.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{BaseMode, SyntheticCorpusConfig, DEFAULT_MAX_N_FRACTION};
use crate::masking::{
    CorruptionPolicy, MaskSchedule, MaskingMode, DEFAULT_BASE_WIDTH, DEFAULT_STAGE_FRACTIONS, DEFAULT_WIDTH_INCREMENT,
};
use crate::model::{AdamWConfig, FinetuneConfig, ModelConfig};
use crate::tokenizer::{Strategy, Vocabulary, MAX_K};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config is not valid JSON: {0}")]
    Parse(#[source] serde_json::Error),
    #[error("config: {0}")]
    Schema(#[source] serde_json::Error),
    #[error("override {0:?} is not of the form path=value")]
    BadOverride(String),
    #[error("override path {0:?} does not address an object field")]
    BadPath(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    /// FASTA file; the synthetic corpus is used when absent.
    pub fasta: Option<PathBuf>,
    pub base_mode: BaseMode,
    pub synthetic: SyntheticCorpusConfig,
    /// Window length in nucleotides.
    pub window_len: usize,
    /// Tiling stride; defaults to `window_len`.
    pub stride: Option<usize>,
    /// Draw this many random windows per sequence instead of tiling.
    pub random_windows: Option<usize>,
    pub max_n_fraction: f64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            fasta: None,
            base_mode: BaseMode::Strict,
            synthetic: SyntheticCorpusConfig::default(),
            window_len: 128,
            stride: None,
            random_windows: None,
            max_n_fraction: DEFAULT_MAX_N_FRACTION,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerSection {
    pub k: usize,
    pub strategy: Strategy,
}

impl Default for TokenizerSection {
    fn default() -> Self {
        TokenizerSection { k: 6, strategy: Strategy::Overlapping }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskingSection {
    pub mode: MaskingMode,
    /// Per-position trigger probability P.
    pub probability: f64,
    pub stage_fractions: Vec<f64>,
    pub base_width: usize,
    pub width_increment: usize,
    /// Span width of the baseline; defaults to k.
    pub baseline_width: Option<usize>,
    pub policy: CorruptionPolicy,
}

impl Default for MaskingSection {
    fn default() -> Self {
        MaskingSection {
            mode: MaskingMode::RandomMask,
            probability: 0.025,
            stage_fractions: DEFAULT_STAGE_FRACTIONS.to_vec(),
            base_width: DEFAULT_BASE_WIDTH,
            width_increment: DEFAULT_WIDTH_INCREMENT,
            baseline_width: None,
            policy: CorruptionPolicy::default(),
        }
    }
}

/// Model shape; the vocabulary size follows from `tokenizer.k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_dim: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub dropout_rate: f64,
    pub tie_embeddings: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::desk(0);
        ModelSection {
            num_layers: d.num_layers,
            num_heads: d.num_heads,
            hidden_dim: d.hidden_dim,
            ff_dim: d.ff_dim,
            max_len: d.max_len,
            dropout_rate: d.dropout_rate,
            tie_embeddings: d.tie_embeddings,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub total_steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Linear warm-up length in steps.
    pub warmup_steps: u64,
    /// Global gradient-norm clipping threshold.
    pub max_grad_norm: Option<f64>,
    /// Stop (and checkpoint) after this step; the schedule still spans
    /// `total_steps`, so a later `--resume` continues seamlessly.
    pub stop_after: Option<u64>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            total_steps: 10_000,
            batch_size: 8,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            warmup_steps: 0,
            max_grad_norm: None,
            stop_after: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneSection {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub freeze_backbone: bool,
    /// Labeled CSV ("sequence,label"); a synthetic motif task is generated
    /// when absent.
    pub train: Option<PathBuf>,
    pub eval: Option<PathBuf>,
    pub synthetic: SyntheticTaskConfig,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        let f = FinetuneConfig::default();
        FinetuneSection {
            epochs: f.epochs,
            lr: f.lr,
            batch_size: f.batch_size,
            beta1: f.beta1,
            beta2: f.beta2,
            weight_decay: f.weight_decay,
            freeze_backbone: f.freeze_backbone,
            train: None,
            eval: None,
            synthetic: SyntheticTaskConfig::default(),
        }
    }
}

/// Two-class task: positives carry `motif`, negatives never do.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticTaskConfig {
    pub num_train: usize,
    pub num_eval: usize,
    pub sequence_length: usize,
    pub motif: String,
}

impl Default for SyntheticTaskConfig {
    fn default() -> Self {
        SyntheticTaskConfig { num_train: 256, num_eval: 128, sequence_length: 64, motif: "TATAAAAGGC".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    /// Windows used for attention metrics.
    pub num_sequences: usize,
    /// Steps on each side of a boundary for the loss-jump detector.
    pub jump_window: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection { num_sequences: 64, jump_window: crate::analysis::DEFAULT_JUMP_WINDOW }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskStatsSection {
    pub num_sequences: usize,
    /// Token-sequence length.
    pub seq_len: usize,
    /// Steps to sample; defaults to the last step of every stage.
    pub steps: Option<Vec<u64>>,
}

impl Default for MaskStatsSection {
    fn default() -> Self {
        MaskStatsSection { num_sequences: 10_000, seq_len: 512, steps: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed; every random stream is derived from it.
    pub seed: u64,
    pub corpus: CorpusSection,
    pub tokenizer: TokenizerSection,
    pub masking: MaskingSection,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub finetune: FinetuneSection,
    pub analysis: AnalysisSection,
    pub mask_stats: MaskStatsSection,
}

/// Sets `path` (dot-separated) inside `root`, creating objects on the way.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), ConfigError> {
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(ConfigError::BadPath(path.into()));
    }
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let Value::Object(map) = node else {
            return Err(ConfigError::BadPath(path.into()));
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!()
}

/// Parses `path=value`; the value is JSON when it parses as such, a string otherwise.
pub fn parse_override(text: &str) -> Result<(String, Value), ConfigError> {
    let (path, raw) = text.split_once('=').ok_or_else(|| ConfigError::BadOverride(text.into()))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
    Ok((path.trim().to_string(), value))
}

impl RunConfig {
    /// File contents (or `{}`), then overrides in order, then validation.
    pub fn load(file: Option<&std::path::Path>, overrides: &[(String, Value)]) -> Result<Self, ConfigError> {
        let mut tree = match file {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.to_path_buf(), source })?;
                serde_json::from_str(&text).map_err(ConfigError::Parse)?
            }
            None => Value::Object(Default::default()),
        };
        for (path, value) in overrides {
            set_path(&mut tree, path, value.clone())?;
        }
        let cfg: RunConfig = serde_json::from_value(tree).map_err(ConfigError::Schema)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn vocab(&self) -> Result<Vocabulary, ConfigError> {
        Vocabulary::new(self.tokenizer.k).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            num_layers: m.num_layers,
            num_heads: m.num_heads,
            hidden_dim: m.hidden_dim,
            ff_dim: m.ff_dim,
            max_len: m.max_len,
            vocab_size: 4usize.pow(self.tokenizer.k.min(MAX_K) as u32) + crate::tokenizer::NUM_SPECIAL,
            num_classes: 2,
            dropout_rate: m.dropout_rate,
            tie_embeddings: m.tie_embeddings,
            seed: self.seed,
        }
    }

    pub fn schedule(&self) -> Result<MaskSchedule, ConfigError> {
        let m = &self.masking;
        MaskSchedule::with_stages(
            self.training.total_steps,
            m.stage_fractions.clone(),
            m.base_width,
            m.width_increment,
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn baseline_width(&self) -> usize {
        self.masking.baseline_width.unwrap_or(self.tokenizer.k)
    }

    pub fn optimizer(&self) -> AdamWConfig {
        let t = &self.training;
        AdamWConfig {
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            weight_decay: t.weight_decay,
            max_grad_norm: t.max_grad_norm,
        }
    }

    pub fn finetune_config(&self) -> FinetuneConfig {
        let f = &self.finetune;
        FinetuneConfig {
            epochs: f.epochs,
            lr: f.lr,
            batch_size: f.batch_size,
            beta1: f.beta1,
            beta2: f.beta2,
            eps: 1e-8,
            weight_decay: f.weight_decay,
            freeze_backbone: f.freeze_backbone,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.vocab()?;
        let c = &self.corpus;
        if c.window_len < self.tokenizer.k {
            return bad(format!("corpus.window_len {} is shorter than k = {}", c.window_len, self.tokenizer.k));
        }
        if c.stride == Some(0) || c.random_windows == Some(0) {
            return bad("corpus.stride and corpus.random_windows must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&c.max_n_fraction) {
            return bad(format!("corpus.max_n_fraction {} outside [0, 1]", c.max_n_fraction));
        }
        if c.fasta.is_none() {
            c.synthetic.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        let m = &self.masking;
        if !(0.0..=1.0).contains(&m.probability) {
            return bad(format!("masking.probability {} outside [0, 1]", m.probability));
        }
        if m.baseline_width == Some(0) {
            return bad("masking.baseline_width must be >= 1".into());
        }
        m.policy.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.schedule()?;
        self.model_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let t = &self.training;
        if t.batch_size == 0 {
            return bad("training.batch_size must be >= 1".into());
        }
        if let Some(s) = t.stop_after {
            if s > t.total_steps {
                return bad(format!("training.stop_after {s} exceeds total_steps {}", t.total_steps));
            }
        }
        self.optimizer().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let f = &self.finetune;
        if f.batch_size == 0 {
            return bad("finetune.batch_size must be >= 1".into());
        }
        if !(f.lr >= 0.0 && f.lr.is_finite()) {
            return bad(format!("finetune.lr {} must be finite and >= 0", f.lr));
        }
        let task = &f.synthetic;
        if task.motif.len() > task.sequence_length || task.sequence_length < self.tokenizer.k {
            return bad("finetune.synthetic: motif must fit and sequences must be >= k".into());
        }
        if !task.motif.bytes().all(|b| b"ACGT".contains(&b)) || task.motif.is_empty() {
            return bad(format!("finetune.synthetic.motif {:?} must be a non-empty ACGT string", task.motif));
        }
        if self.analysis.jump_window == 0 {
            return bad("analysis.jump_window must be >= 1".into());
        }
        if self.mask_stats.seq_len == 0 {
            return bad("mask_stats.seq_len must be >= 1".into());
        }
        if let Some(steps) = &self.mask_stats.steps {
            if let Some(&s) = steps.iter().find(|&&s| s == 0 || s > t.total_steps) {
                return bad(format!("mask_stats.steps contains {s}, outside 1..={}", t.total_steps));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back: RunConfig = serde_json::from_value(cfg.to_json_value()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.model_config().vocab_size, 4101);
        assert_eq!(cfg.finetune.lr, 3e-5);
        assert_eq!(cfg.finetune.batch_size, 32);
        assert_eq!((cfg.training.beta1, cfg.training.beta2), (0.9, 0.999));
        assert_eq!(cfg.masking.probability, 0.025);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_value::<RunConfig>(json!({"training": {"steps": 5}})).unwrap_err();
        assert!(err.to_string().contains("unknown field"));
        assert!(serde_json::from_value::<RunConfig>(json!({"bogus": 1})).is_err());
    }

    #[test]
    fn overrides_apply_in_order() {
        let o = [
            parse_override("training.total_steps=200").unwrap(),
            parse_override("masking.mode=baseline").unwrap(),
            parse_override("training.total_steps=300").unwrap(),
        ];
        let cfg = RunConfig::load(None, &o).unwrap();
        assert_eq!(cfg.training.total_steps, 300);
        assert_eq!(cfg.masking.mode, MaskingMode::Baseline);
        assert!(matches!(parse_override("nothing"), Err(ConfigError::BadOverride(_))));
        let mut v = json!({"a": 3});
        assert!(set_path(&mut v, "a.b", json!(1)).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        for (path, value) in [
            ("model.hidden_dim", json!(63)),
            ("masking.probability", json!(1.5)),
            ("training.batch_size", json!(0)),
            ("tokenizer.k", json!(9)),
            ("training.stop_after", json!(20000)),
            ("masking.stage_fractions", json!([0.5, 0.4, 1.0])),
        ] {
            let r = RunConfig::load(None, &[(path.to_string(), value)]);
            assert!(matches!(r, Err(ConfigError::Invalid(_))), "{path}");
        }
    }
}
