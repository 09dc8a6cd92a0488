//! End-to-end commands: tokenize, mask statistics, pre-training, fine-tuning
//! and checkpoint analysis.
//!
//! Every random draw is keyed by (root seed, domain, step, slot), so batches
//! can be prepared on any number of workers and a resumed run sees exactly
//! the batches an uninterrupted run would have seen.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analysis::{
    self, emit_report, stage_jump_detector, token_embedding_silhouette, AnalysisError, AttentionMetrics,
    AttentionStats, RunReport, StepRecord,
};
use crate::config::{ConfigError, RunConfig};
use crate::corpus::{
    generate_synthetic, load_labeled, read_fasta, sample_windows, CorpusError, DnaSequence, LabeledExample,
    SyntheticCorpusConfig, WindowMode,
};
use crate::masking::{
    apply_corruption, baseline_plan_mask, expected_mask_fraction, expected_mixed_fraction, plan_mask,
    CorruptionPolicy, MaskError, MaskPlan, MaskSchedule, MaskingMode,
};
use crate::model::{
    finetune_classify, forward, load_checkpoint, save_checkpoint, train_step, Checkpoint, ClsExample, EpochMetrics,
    MlmExample, ModelError, ModelParams, OptimizerState,
};
use crate::rng::{domain, RngKey};
use crate::tokenizer::{encode, wrap_for_model, TokenId, TokenizerError, Vocabulary, UNK_ID};

pub const REPORT_DIR_ENV: &str = "DNAMASK_REPORT_DIR";
pub const CHECKPOINT_SUBDIR: &str = "checkpoint";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("I/O on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    /// 2 for usage and configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Usage(_) => 2,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Usage(_) => "usage",
            PipelineError::Corpus(_) => "corpus",
            PipelineError::Tokenizer(_) => "tokenizer",
            PipelineError::Mask(_) => "masking",
            PipelineError::Model(_) => "model",
            PipelineError::Analysis(AnalysisError::InvariantViolated(_)) => "invariant",
            PipelineError::Analysis(_) => "analysis",
            PipelineError::Io { .. } => "io",
            PipelineError::Json(_) => "json",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

type Result<T> = std::result::Result<T, PipelineError>;

/// Runs `f` on a dedicated pool of `workers` threads (inline for 1).
fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    if workers <= 1 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PipelineError::Usage(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

fn map_slots<T: Send>(workers: usize, n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    if workers <= 1 {
        (0..n).map(f).collect()
    } else {
        (0..n).into_par_iter().map(f).collect()
    }
}

// ---------------------------------------------------------------------------
// corpus

/// The configured sequences: FASTA when given, otherwise the synthetic corpus
/// seeded from the root seed.
pub fn load_corpus(cfg: &RunConfig) -> Result<Vec<DnaSequence>> {
    match &cfg.corpus.fasta {
        Some(path) => Ok(read_fasta(path, cfg.corpus.base_mode)?),
        None => Ok(generate_synthetic(&synthetic_config(cfg))?),
    }
}

fn synthetic_config(cfg: &RunConfig) -> SyntheticCorpusConfig {
    let mut s = cfg.corpus.synthetic.clone();
    s.seed = RngKey::new(cfg.seed).fork2(domain::CORPUS, s.seed).raw();
    s
}

/// Windows of every sequence, tokenized into body ids (no framing).
pub fn token_pool(cfg: &RunConfig, vocab: &Vocabulary, seqs: &[DnaSequence]) -> Result<Vec<Vec<TokenId>>> {
    let c = &cfg.corpus;
    let root = RngKey::new(cfg.seed).fork(domain::WINDOW);
    let (mut too_long, mut dropped) = (0, 0);
    let mut pool = Vec::new();
    for (i, seq) in seqs.iter().enumerate() {
        let mode = match c.random_windows {
            Some(count) => WindowMode::Random { count, key: root.fork(i as u64) },
            None => WindowMode::Tiled { stride: c.stride.unwrap_or(c.window_len) },
        };
        let w = sample_windows(seq, c.window_len, mode, c.max_n_fraction)?;
        too_long += w.too_long;
        dropped += w.dropped_ambiguous;
        for win in &w.windows {
            pool.push(encode(win, vocab, cfg.tokenizer.strategy)?.ids);
        }
    }
    if too_long > 0 {
        warn!("{too_long} sequences shorter than window_len {} produced no windows", c.window_len);
    }
    if dropped > 0 {
        warn!("dropped {dropped} windows above the N threshold");
    }
    if pool.is_empty() {
        return Err(PipelineError::Usage("corpus produced no training windows".into()));
    }
    Ok(pool)
}

// ---------------------------------------------------------------------------
// masking

/// Width set in force at `step` for the configured mode.
pub fn widths_at(cfg: &RunConfig, schedule: &MaskSchedule, step: u64) -> Result<Vec<usize>> {
    match cfg.masking.mode {
        MaskingMode::RandomMask => Ok(schedule.allowed_widths(step)?),
        MaskingMode::Baseline => {
            schedule.stage_of(step)?;
            Ok(vec![cfg.baseline_width()])
        }
    }
}

fn plan_for_mode<R: Rng>(
    cfg: &RunConfig,
    schedule: &MaskSchedule,
    len: usize,
    step: u64,
    exclude: Option<&[bool]>,
    rng: &mut R,
) -> Result<MaskPlan> {
    let p = cfg.masking.probability;
    Ok(match cfg.masking.mode {
        MaskingMode::RandomMask => plan_mask(len, step, p, schedule, exclude, rng)?,
        MaskingMode::Baseline => {
            schedule.stage_of(step)?;
            MaskPlan { step, ..baseline_plan_mask(len, p, cfg.baseline_width(), exclude, rng)? }
        }
    })
}

/// Frames `body`, plans masks over its tokens (never `[CLS]`, `[SEP]` or
/// `[UNK]`) and corrupts them.
fn masked_example(
    body: &[TokenId],
    max_len: usize,
    vocab: &Vocabulary,
    policy: &CorruptionPolicy,
    key: RngKey,
    plan: impl FnOnce(usize, &[bool], &mut rand_chacha::ChaCha8Rng) -> Result<MaskPlan>,
) -> Result<(MlmExample, MaskPlan)> {
    let frame = wrap_for_model(body, max_len)?;
    let inner = frame.real_len() - 2;
    let exclude: Vec<bool> = frame.ids[1..=inner].iter().map(|&id| id == UNK_ID).collect();
    let plan = plan(inner, &exclude, &mut key.fork(0).rng())?.shifted(1);
    let corrupted = apply_corruption(&frame.ids, &plan, policy, vocab, &mut key.fork(1).rng())?;
    let example = MlmExample { ids: corrupted.ids, padding_mask: frame.padding_mask, labels: corrupted.labels };
    Ok((example, plan))
}

fn training_batch(
    cfg: &RunConfig,
    vocab: &Vocabulary,
    schedule: &MaskSchedule,
    pool: &[Vec<TokenId>],
    step: u64,
    workers: usize,
) -> Result<Vec<MlmExample>> {
    let root = RngKey::new(cfg.seed);
    let max_len = cfg.model.max_len;
    map_slots(workers, cfg.training.batch_size, |slot| {
        let pick = root.fork3(domain::BATCH, step, slot as u64).rng().random_range(0..pool.len());
        let key = root.fork3(domain::MASK, step, slot as u64);
        masked_example(&pool[pick], max_len, vocab, &cfg.masking.policy, key, |len, ex, rng| {
            plan_for_mode(cfg, schedule, len, step, Some(ex), rng)
        })
        .map(|(e, _)| e)
    })
    .into_iter()
    .collect()
}

/// Fixed evaluation inputs for attention diagnostics: the same windows and
/// the same width-k `[MASK]` spans regardless of the training mode.
fn eval_set(cfg: &RunConfig, vocab: &Vocabulary, pool: &[Vec<TokenId>]) -> Result<Vec<(MlmExample, MaskPlan)>> {
    let root = RngKey::new(cfg.seed).fork(domain::EVAL);
    let width = cfg.baseline_width();
    let p = cfg.masking.probability;
    (0..cfg.analysis.num_sequences as u64)
        .map(|i| {
            let pick = root.fork2(0, i).rng().random_range(0..pool.len());
            masked_example(&pool[pick], cfg.model.max_len, vocab, &CorruptionPolicy::pure_mask(), root.fork2(1, i), |len, ex, rng| {
                Ok(baseline_plan_mask(len, p, width, Some(ex), rng)?)
            })
        })
        .collect()
}

pub fn attention_metrics(params: &ModelParams<f32>, eval: &[(MlmExample, MaskPlan)]) -> Result<AttentionMetrics> {
    let mut stats = AttentionStats::new(params.config.num_layers);
    for (ex, plan) in eval {
        if plan.mask_ids.is_empty() {
            continue;
        }
        let trace = forward(params, &ex.ids, &ex.padding_mask)?;
        stats.accumulate(&trace, &plan.mask_ids)?;
    }
    Ok(stats.finish()?)
}

// ---------------------------------------------------------------------------
// reports

/// Where reports go: the environment override, else `default`.
pub fn report_dir(default: &Path) -> PathBuf {
    match std::env::var_os(REPORT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => default.to_path_buf(),
    }
}

fn seeds(cfg: &RunConfig) -> BTreeMap<String, u64> {
    let mut s = BTreeMap::new();
    s.insert("root".to_string(), cfg.seed);
    s.insert("synthetic_corpus".to_string(), synthetic_config(cfg).seed);
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// tokenize

/// One line of space-separated ids per window (per record without a window).
pub fn tokenize_lines(cfg: &RunConfig, seqs: &[DnaSequence], window: Option<usize>) -> Result<Vec<String>> {
    let vocab = cfg.vocab()?;
    let mut lines = Vec::new();
    for seq in seqs {
        let windows = match window {
            Some(w) => sample_windows(seq, w, WindowMode::Tiled { stride: w }, cfg.corpus.max_n_fraction)?.windows,
            None => vec![seq.clone()],
        };
        for win in &windows {
            let ids = encode(win, &vocab, cfg.tokenizer.strategy)?.ids;
            lines.push(ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" "));
        }
    }
    Ok(lines)
}

// ---------------------------------------------------------------------------
// mask statistics

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageMaskStats {
    pub stage: usize,
    pub step: u64,
    pub widths: Vec<usize>,
    pub num_sequences: usize,
    pub seq_len: usize,
    /// Masked positions over all positions.
    pub empirical_fraction: f64,
    pub expected_fraction: f64,
    /// How often each span width was drawn.
    pub width_histogram: BTreeMap<usize, u64>,
    /// Pearson statistic of the histogram against uniform width selection.
    pub width_chi_square: f64,
    pub mean_triggers: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskStatsReport {
    pub schema_version: u32,
    pub command: String,
    pub config: Value,
    pub seeds: BTreeMap<String, u64>,
    pub stage_boundaries: Vec<u64>,
    pub stages: Vec<StageMaskStats>,
}

pub fn mask_stats(cfg: &RunConfig, workers: usize) -> Result<MaskStatsReport> {
    let schedule = cfg.schedule()?;
    let ms = &cfg.mask_stats;
    let steps = ms.steps.clone().unwrap_or_else(|| schedule.boundaries());
    let root = RngKey::new(cfg.seed).fork(domain::STATS);
    let mut stages = Vec::new();
    for (i, &step) in steps.iter().enumerate() {
        let widths = widths_at(cfg, &schedule, step)?;
        let plans: Vec<Result<MaskPlan>> = with_workers(workers, || {
            map_slots(workers, ms.num_sequences, |n| {
                plan_for_mode(cfg, &schedule, ms.seq_len, step, None, &mut root.fork2(i as u64, n as u64).rng())
            })
        })?;
        let mut masked = 0u64;
        let mut triggers = 0u64;
        let mut hist: BTreeMap<usize, u64> = widths.iter().map(|&w| (w, 0)).collect();
        for plan in plans {
            let plan = plan?;
            masked += plan.mask_ids.len() as u64;
            triggers += plan.trigger_centers.len() as u64;
            *hist.entry(plan.width).or_default() += 1;
        }
        let total = (ms.num_sequences * ms.seq_len) as f64;
        let expected = match cfg.masking.mode {
            MaskingMode::RandomMask => expected_mixed_fraction(cfg.masking.probability, &widths, ms.seq_len)?,
            MaskingMode::Baseline => {
                expected_mask_fraction(cfg.masking.probability, widths[0], ms.seq_len)?.average
            }
        };
        let e = ms.num_sequences as f64 / widths.len() as f64;
        let chi = if e > 0.0 { hist.values().map(|&o| (o as f64 - e).powi(2) / e).sum() } else { 0.0 };
        stages.push(StageMaskStats {
            stage: schedule.stage_of(step)?,
            step,
            widths,
            num_sequences: ms.num_sequences,
            seq_len: ms.seq_len,
            empirical_fraction: if total > 0.0 { masked as f64 / total } else { 0.0 },
            expected_fraction: expected,
            width_histogram: hist,
            width_chi_square: chi,
            mean_triggers: if ms.num_sequences > 0 { triggers as f64 / ms.num_sequences as f64 } else { 0.0 },
        });
    }
    Ok(MaskStatsReport {
        schema_version: analysis::REPORT_SCHEMA_VERSION,
        command: "mask-stats".into(),
        config: cfg.to_json_value(),
        seeds: seeds(cfg),
        stage_boundaries: schedule.boundaries(),
        stages,
    })
}

// ---------------------------------------------------------------------------
// pre-training

pub struct PretrainOutcome {
    pub report: RunReport,
    pub checkpoint: PathBuf,
    pub report_json: PathBuf,
    pub report_csv: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct CheckpointExtra {
    config: Value,
    records: Vec<StepRecord>,
}

fn lr_at(cfg: &RunConfig, step: u64) -> f64 {
    let t = &cfg.training;
    if t.warmup_steps == 0 || step >= t.warmup_steps {
        t.lr
    } else {
        t.lr * step as f64 / t.warmup_steps as f64
    }
}

/// Trains from scratch (or from `resume`) up to `training.stop_after` or
/// `training.total_steps`, then writes `<out>/checkpoint/` and the report.
pub fn pretrain(cfg: &RunConfig, out: &Path, resume: Option<&Path>, workers: usize) -> Result<PretrainOutcome> {
    let vocab = cfg.vocab()?;
    let schedule = cfg.schedule()?;
    let model_cfg = cfg.model_config();
    let seqs = load_corpus(cfg)?;
    let pool = token_pool(cfg, &vocab, &seqs)?;
    info!("{} training windows from {} sequences", pool.len(), seqs.len());

    let (mut params, mut opt, mut records, start) = match resume {
        Some(dir) => {
            let ckpt = load_checkpoint::<f32>(dir)?;
            if ckpt.params.config != model_cfg {
                return Err(PipelineError::Usage(format!(
                    "checkpoint {} was trained with a different model config",
                    dir.display()
                )));
            }
            let opt = ckpt
                .optimizer
                .ok_or_else(|| PipelineError::Usage(format!("checkpoint {} has no optimizer state", dir.display())))?;
            let extra: CheckpointExtra = serde_json::from_value(ckpt.extra)?;
            let mut prev = extra.config;
            let mut now = cfg.to_json_value();
            for v in [&mut prev, &mut now] {
                v["training"]["stop_after"] = Value::Null;
            }
            if prev != now {
                warn!("resuming with a configuration that differs from the checkpoint's");
            }
            (ckpt.params, opt, extra.records, ckpt.step)
        }
        None => {
            let params = ModelParams::<f32>::init(&model_cfg)?;
            let opt = OptimizerState::new(cfg.optimizer(), params.data.len())?;
            (params, opt, Vec::new(), 0)
        }
    };
    let end = cfg.training.stop_after.unwrap_or(cfg.training.total_steps);
    if start > end {
        return Err(PipelineError::Usage(format!("checkpoint is at step {start}, beyond the requested end {end}")));
    }

    let root = RngKey::new(cfg.seed);
    with_workers(workers, || -> Result<()> {
        for step in start + 1..=end {
            let batch = training_batch(cfg, &vocab, &schedule, &pool, step, workers)?;
            opt.config.lr = lr_at(cfg, step);
            let loss = train_step(&mut params, &mut opt, &batch, Some(root.fork2(domain::DROPOUT, step)))?;
            records.push(StepRecord {
                step,
                stage: schedule.stage_of(step)?,
                widths: widths_at(cfg, &schedule, step)?,
                loss: loss as f64,
            });
            if step % 1000 == 0 {
                info!("step {step}: loss {loss:.4}");
            }
        }
        Ok(())
    })??;
    opt.config.lr = cfg.training.lr;

    let ckpt_dir = out.join(CHECKPOINT_SUBDIR);
    let extra = CheckpointExtra { config: cfg.to_json_value(), records };
    let ckpt = Checkpoint { step: end, params, optimizer: Some(opt), extra: serde_json::to_value(&extra)? };
    save_checkpoint(&ckpt_dir, &ckpt)?;

    let mut report = RunReport::new("pretrain", cfg.to_json_value());
    report.seeds = seeds(cfg);
    report.stage_boundaries = schedule.boundaries();
    report.records = extra.records;
    report.resumed_from_step = resume.map(|_| start);
    let eval = eval_set(cfg, &vocab, &pool)?;
    report.attention = match attention_metrics(&ckpt.params, &eval) {
        Ok(a) => Some(a),
        Err(PipelineError::Analysis(AnalysisError::NoMaskedPositions)) => None,
        Err(e) => return Err(e),
    };
    report.silhouette = (vocab.k() == 6).then(|| token_embedding_silhouette(&ckpt.params, &vocab)).transpose()?;
    let losses: Vec<(u64, f64)> = report.records.iter().map(|r| (r.step, r.loss)).collect();
    for b in schedule.transition_steps() {
        if let Ok(mut j) = stage_jump_detector(&losses, &[b], cfg.analysis.jump_window) {
            report.stage_jumps.append(&mut j);
        }
    }
    let (report_json, report_csv) = emit_report(&report, &report_dir(out), "pretrain")?;
    Ok(PretrainOutcome { report, checkpoint: ckpt_dir, report_json, report_csv })
}

// ---------------------------------------------------------------------------
// analysis of a checkpoint

pub fn analyze(cfg: &RunConfig, checkpoint: &Path) -> Result<RunReport> {
    let ckpt = load_checkpoint::<f32>(checkpoint)?;
    let vocab = cfg.vocab()?;
    if ckpt.params.config.vocab_size != vocab.size() {
        return Err(PipelineError::Usage(format!(
            "checkpoint vocabulary {} does not match k = {}",
            ckpt.params.config.vocab_size,
            vocab.k()
        )));
    }
    let mut eval_cfg = cfg.clone();
    eval_cfg.model.max_len = ckpt.params.config.max_len;
    let pool = token_pool(&eval_cfg, &vocab, &load_corpus(&eval_cfg)?)?;
    let eval = eval_set(&eval_cfg, &vocab, &pool)?;
    let mut report = RunReport::new("analyze", cfg.to_json_value());
    report.seeds = seeds(cfg);
    report.attention = Some(attention_metrics(&ckpt.params, &eval)?);
    report.silhouette = (vocab.k() == 6).then(|| token_embedding_silhouette(&ckpt.params, &vocab)).transpose()?;
    report.resumed_from_step = Some(ckpt.step);
    report.validate()?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// fine-tuning

/// Balanced two-class data: odd rows contain the motif at a random offset,
/// even rows are background that never contains it.
pub fn synthetic_motif_task(cfg: &RunConfig) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>)> {
    let task = &cfg.finetune.synthetic;
    let root = RngKey::new(cfg.seed).fork2(domain::FINETUNE, 0x7a5c);
    let motif = task.motif.as_bytes();
    let make = |i: usize| -> Result<LabeledExample> {
        let mut rng = root.fork(i as u64).rng();
        let label = i % 2;
        loop {
            let mut bases: Vec<u8> =
                (0..task.sequence_length).map(|_| b"ACGT"[rng.random_range(0..4)]).collect();
            if label == 1 {
                let at = rng.random_range(0..=task.sequence_length - motif.len());
                bases[at..at + motif.len()].copy_from_slice(motif);
            } else if bases.windows(motif.len()).any(|w| w == motif) {
                continue;
            }
            return Ok(LabeledExample { sequence: DnaSequence::new(format!("task{i}"), &bases)?, label });
        }
    };
    let all: Vec<LabeledExample> = (0..task.num_train + task.num_eval).map(make).collect::<Result<_>>()?;
    let eval = all[task.num_train..].to_vec();
    let mut train = all;
    train.truncate(task.num_train);
    Ok((train, eval))
}

fn to_cls(examples: &[LabeledExample], cfg: &RunConfig, vocab: &Vocabulary) -> Result<Vec<ClsExample>> {
    examples
        .iter()
        .map(|e| {
            let ids = encode(&e.sequence, vocab, cfg.tokenizer.strategy)?.ids;
            let frame = wrap_for_model(&ids, cfg.model.max_len)?;
            Ok(ClsExample { ids: frame.ids, padding_mask: frame.padding_mask, label: e.label })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub schema_version: u32,
    pub command: String,
    pub config: Value,
    pub seeds: BTreeMap<String, u64>,
    /// "checkpoint" or "random".
    pub initialization: String,
    pub checkpoint_step: Option<u64>,
    pub num_classes: usize,
    pub train_size: usize,
    pub eval_size: usize,
    pub epochs: Vec<EpochMetrics>,
}

pub struct FinetuneOutcome {
    pub report: FinetuneReport,
    pub report_json: PathBuf,
    pub metrics_csv: PathBuf,
}

pub fn finetune(cfg: &RunConfig, checkpoint: Option<&Path>, out: &Path) -> Result<FinetuneOutcome> {
    let vocab = cfg.vocab()?;
    let f = &cfg.finetune;
    let (train, eval, classes) = match &f.train {
        Some(path) => {
            let (train, c1) = load_labeled(path)?;
            let (eval, c2) = match &f.eval {
                Some(p) => load_labeled(p)?,
                None => (Vec::new(), 0),
            };
            (train, eval, c1.max(c2))
        }
        None => {
            let (train, eval) = synthetic_motif_task(cfg)?;
            (train, eval, 2)
        }
    };
    if train.is_empty() {
        return Err(ModelError::EmptyDataset.into());
    }
    let model_cfg = cfg.model_config();
    let (mut params, initialization, step) = match checkpoint {
        Some(dir) if dir.join("manifest.json").exists() => {
            let ckpt = load_checkpoint::<f32>(dir)?;
            if ckpt.params.config.vocab_size != model_cfg.vocab_size {
                return Err(PipelineError::Usage("checkpoint vocabulary does not match tokenizer.k".into()));
            }
            (ckpt.params, "checkpoint", Some(ckpt.step))
        }
        other => {
            if let Some(dir) = other {
                warn!("checkpoint {} not found; fine-tuning from random initialization", dir.display());
            } else {
                warn!("no checkpoint given; fine-tuning from random initialization");
            }
            (ModelParams::<f32>::init(&model_cfg)?, "random", None)
        }
    };
    params.reset_classifier(classes.max(1), cfg.seed)?;
    let mut tok_cfg = cfg.clone();
    tok_cfg.model.max_len = params.config.max_len;
    let train_x = to_cls(&train, &tok_cfg, &vocab)?;
    let eval_x = to_cls(&eval, &tok_cfg, &vocab)?;
    let epochs = finetune_classify(&mut params, &train_x, &eval_x, &cfg.finetune_config())?;
    let report = FinetuneReport {
        schema_version: analysis::REPORT_SCHEMA_VERSION,
        command: "finetune".into(),
        config: cfg.to_json_value(),
        seeds: seeds(cfg),
        initialization: initialization.into(),
        checkpoint_step: step,
        num_classes: classes,
        train_size: train.len(),
        eval_size: eval.len(),
        epochs,
    };
    if report.epochs.iter().any(|e| !e.loss.is_finite() || !(-1.0..=1.0).contains(&e.mcc)) {
        return Err(AnalysisError::InvariantViolated("non-finite loss or MCC outside [-1, 1]".into()).into());
    }
    let dir = report_dir(out);
    let report_json = dir.join("finetune.json");
    let metrics_csv = dir.join("finetune_metrics.csv");
    write_text(&report_json, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    let mut csv = String::from("epoch,loss,mcc\n");
    for e in &report.epochs {
        csv.push_str(&format!("{},{},{}\n", e.epoch, e.loss, e.mcc));
    }
    write_text(&metrics_csv, &csv)?;
    Ok(FinetuneOutcome { report, report_json, metrics_csv })
}

/// Writes `value` as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

pub fn json_error(err: &PipelineError) -> Value {
    json!({"error": {"kind": err.kind(), "message": err.to_string(), "exit_code": err.exit_code()}})
}
