//! Curriculum span masking.
//!
//! Training is split into stages. At a given step the set of allowed span
//! widths is `[6]` in stage 0 and grows by one width per stage, `[6, 8]`,
//! `[6, 8, 10]`, and so on. For each sequence one width `m` is drawn
//! uniformly from the allowed set. Then every token position `i` is visited in
//! ascending order with one uniform draw `r`. When `r <= P` the span
//! `[i - m/2 + 1, i + m/2]`, clipped to the sequence, joins the mask set.
//! The plan is the union of all such spans.
//!
//! The fixed-width baseline is the same procedure with the width pinned to k.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::{TokenId, Vocabulary, MASK_ID, NUM_SPECIAL};

/// Label value at positions that do not contribute to the loss.
pub const IGNORE_INDEX: i32 = -100;

/// Stage boundaries, as fractions of the run, of the reference 500k-step
/// curriculum `[30k, 60k, 100k, 150k, 500k]`.
pub const DEFAULT_STAGE_FRACTIONS: [f64; 5] = [0.06, 0.12, 0.20, 0.30, 1.00];
pub const DEFAULT_BASE_WIDTH: usize = 6;
pub const DEFAULT_WIDTH_INCREMENT: usize = 2;
pub const REFERENCE_TOTAL_STEPS: u64 = 500_000;

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error("step {step} outside [1, {total}]")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("invalid corruption policy: {0}")]
    InvalidPolicy(String),
    #[error("mask index {index} outside frame of length {len}")]
    IndexOutOfFrame { index: usize, len: usize },
    #[error("span width must be >= 1")]
    ZeroWidth,
    #[error("exclusion mask length {found} does not match sequence length {expected}")]
    ExclusionLength { expected: usize, found: usize },
}

/// Which masking procedure a run uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskingMode {
    #[default]
    RandomMask,
    Baseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSchedule {
    total_steps: u64,
    stage_fractions: Vec<f64>,
    base_width: usize,
    width_increment: usize,
}

impl MaskSchedule {
    /// Default five-stage curriculum scaled to `total_steps`.
    pub fn new(total_steps: u64) -> Result<Self, MaskError> {
        Self::with_stages(
            total_steps,
            DEFAULT_STAGE_FRACTIONS.to_vec(),
            DEFAULT_BASE_WIDTH,
            DEFAULT_WIDTH_INCREMENT,
        )
    }

    pub fn reference() -> Self {
        Self::new(REFERENCE_TOTAL_STEPS).expect("reference schedule is valid")
    }

    pub fn with_stages(
        total_steps: u64,
        stage_fractions: Vec<f64>,
        base_width: usize,
        width_increment: usize,
    ) -> Result<Self, MaskError> {
        let bad = |m: &str| Err(MaskError::InvalidSchedule(m.to_string()));
        if total_steps == 0 {
            return bad("total_steps must be >= 1");
        }
        if stage_fractions.is_empty() {
            return bad("at least one stage is required");
        }
        if stage_fractions.iter().any(|f| !f.is_finite() || *f <= 0.0) {
            return bad("stage fractions must be positive");
        }
        if stage_fractions.windows(2).any(|w| w[0] >= w[1]) {
            return bad("stage fractions must be strictly ascending");
        }
        if *stage_fractions.last().unwrap() != 1.0 {
            return bad("last stage fraction must be 1.0");
        }
        if base_width == 0 {
            return bad("base width must be >= 1");
        }
        Ok(MaskSchedule { total_steps, stage_fractions, base_width, width_increment })
    }

    /// Every stage allows only `width`.
    pub fn fixed(total_steps: u64, width: usize) -> Result<Self, MaskError> {
        Self::with_stages(total_steps, DEFAULT_STAGE_FRACTIONS.to_vec(), width, 0)
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn stage_fractions(&self) -> &[f64] {
        &self.stage_fractions
    }

    pub fn base_width(&self) -> usize {
        self.base_width
    }

    pub fn width_increment(&self) -> usize {
        self.width_increment
    }

    pub fn num_stages(&self) -> usize {
        self.stage_fractions.len()
    }

    /// Last step of each stage.
    pub fn boundaries(&self) -> Vec<u64> {
        self.stage_fractions
            .iter()
            .map(|f| (f * self.total_steps as f64).round() as u64)
            .collect()
    }

    /// Boundaries after which the width set changes (all but the final one).
    pub fn transition_steps(&self) -> Vec<u64> {
        let b = self.boundaries();
        b[..b.len() - 1].to_vec()
    }

    pub fn stage_of(&self, step: u64) -> Result<usize, MaskError> {
        if step == 0 || step > self.total_steps {
            return Err(MaskError::StepOutOfRange { step, total: self.total_steps });
        }
        let stage = self
            .boundaries()
            .iter()
            .position(|&b| step <= b)
            .unwrap_or(self.num_stages() - 1);
        Ok(stage)
    }

    pub fn widths_for_stage(&self, stage: usize) -> Vec<usize> {
        let mut widths: Vec<usize> =
            (0..=stage).map(|i| self.base_width + i * self.width_increment).collect();
        widths.dedup();
        widths
    }

    pub fn allowed_widths(&self, step: u64) -> Result<Vec<usize>, MaskError> {
        Ok(self.widths_for_stage(self.stage_of(step)?))
    }
}

pub fn allowed_widths(step: u64, schedule: &MaskSchedule) -> Result<Vec<usize>, MaskError> {
    schedule.allowed_widths(step)
}

/// Masked token indices for one sequence at one step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPlan {
    /// Sorted, unique.
    pub mask_ids: Vec<usize>,
    pub width: usize,
    pub step: u64,
    pub trigger_centers: Vec<usize>,
}

impl MaskPlan {
    pub fn empty(width: usize, step: u64) -> Self {
        MaskPlan { mask_ids: Vec::new(), width, step, trigger_centers: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.mask_ids.is_empty()
    }

    /// Moves every index by `offset`, e.g. into a frame that starts with `[CLS]`.
    pub fn shifted(mut self, offset: usize) -> Self {
        self.mask_ids.iter_mut().for_each(|i| *i += offset);
        self.trigger_centers.iter_mut().for_each(|i| *i += offset);
        self
    }
}

/// Unclipped span of width `m` around `center`: `[center - ceil(m/2) + 1, center + floor(m/2)]`.
/// For even `m` this is `[center - m/2 + 1, center + m/2]`.
pub fn span_bounds(center: usize, m: usize) -> (i64, i64) {
    let c = center as i64;
    let m = m as i64;
    let start = c - (m + 1) / 2 + 1;
    (start, start + m - 1)
}

/// Union of clipped spans around the given trigger positions, minus excluded positions.
pub fn plan_from_triggers(
    seq_len: usize,
    width: usize,
    step: u64,
    triggers: &[usize],
    exclude: Option<&[bool]>,
) -> Result<MaskPlan, MaskError> {
    if width == 0 {
        return Err(MaskError::ZeroWidth);
    }
    if let Some(ex) = exclude {
        if ex.len() != seq_len {
            return Err(MaskError::ExclusionLength { expected: seq_len, found: ex.len() });
        }
    }
    let mut marked = vec![false; seq_len];
    for &center in triggers {
        if center >= seq_len {
            return Err(MaskError::IndexOutOfFrame { index: center, len: seq_len });
        }
        let (start, end) = span_bounds(center, width);
        let lo = start.max(0) as usize;
        let hi = end.min(seq_len as i64 - 1) as usize;
        marked[lo..=hi].iter_mut().for_each(|m| *m = true);
    }
    if let Some(ex) = exclude {
        marked.iter_mut().zip(ex).for_each(|(m, &x)| *m &= !x);
    }
    let mask_ids = marked.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
    Ok(MaskPlan { mask_ids, width, step, trigger_centers: triggers.to_vec() })
}

fn check_probability(p: f64) -> Result<(), MaskError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(MaskError::InvalidProbability(p))
    }
}

/// Draws a width from `widths`, then one trigger decision per position.
fn plan_with_widths<R: Rng + ?Sized>(
    seq_len: usize,
    step: u64,
    p: f64,
    widths: &[usize],
    exclude: Option<&[bool]>,
    rng: &mut R,
) -> Result<MaskPlan, MaskError> {
    check_probability(p)?;
    let width = widths[rng.random_range(0..widths.len())];
    let mut triggers = Vec::new();
    for i in 0..seq_len {
        // r in (0, 1] so that P = 0 never fires and P = 1 always does
        let r = 1.0 - rng.random::<f64>();
        if r <= p {
            triggers.push(i);
        }
    }
    plan_from_triggers(seq_len, width, step, &triggers, exclude)
}

/// Curriculum masking plan for one sequence of `seq_len` tokens at `step`.
/// `exclude` marks positions that may never be masked.
pub fn plan_mask<R: Rng + ?Sized>(
    seq_len: usize,
    step: u64,
    p: f64,
    schedule: &MaskSchedule,
    exclude: Option<&[bool]>,
    rng: &mut R,
) -> Result<MaskPlan, MaskError> {
    let widths = schedule.allowed_widths(step)?;
    plan_with_widths(seq_len, step, p, &widths, exclude, rng)
}

/// Fixed-width masking: every span is `k` tokens wide.
pub fn baseline_plan_mask<R: Rng + ?Sized>(
    seq_len: usize,
    p: f64,
    k: usize,
    exclude: Option<&[bool]>,
    rng: &mut R,
) -> Result<MaskPlan, MaskError> {
    if k == 0 {
        return Err(MaskError::ZeroWidth);
    }
    plan_with_widths(seq_len, 0, p, &[k], exclude, rng)
}

/// How a masked position's input token is replaced.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionPolicy {
    pub p_mask: f64,
    pub p_random: f64,
    pub p_keep: f64,
}

impl Default for CorruptionPolicy {
    fn default() -> Self {
        CorruptionPolicy { p_mask: 0.8, p_random: 0.1, p_keep: 0.1 }
    }
}

impl CorruptionPolicy {
    /// Every masked position becomes `[MASK]`.
    pub fn pure_mask() -> Self {
        CorruptionPolicy { p_mask: 1.0, p_random: 0.0, p_keep: 0.0 }
    }

    pub fn validate(&self) -> Result<(), MaskError> {
        let ps = [self.p_mask, self.p_random, self.p_keep];
        if ps.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(MaskError::InvalidPolicy("probabilities must be non-negative".into()));
        }
        let total: f64 = ps.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(MaskError::InvalidPolicy(format!("probabilities sum to {total}")));
        }
        Ok(())
    }
}

/// Model inputs and per-position targets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corrupted {
    pub ids: Vec<TokenId>,
    /// Original id at masked positions, [`IGNORE_INDEX`] elsewhere.
    pub labels: Vec<i32>,
}

pub fn apply_corruption<R: Rng + ?Sized>(
    ids: &[TokenId],
    plan: &MaskPlan,
    policy: &CorruptionPolicy,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Result<Corrupted, MaskError> {
    policy.validate()?;
    let mut out = ids.to_vec();
    let mut labels = vec![IGNORE_INDEX; ids.len()];
    for &j in &plan.mask_ids {
        if j >= ids.len() {
            return Err(MaskError::IndexOutOfFrame { index: j, len: ids.len() });
        }
        labels[j] = ids[j] as i32;
        let u: f64 = rng.random();
        if u < policy.p_mask {
            out[j] = MASK_ID;
        } else if u < policy.p_mask + policy.p_random {
            out[j] = (NUM_SPECIAL + rng.random_range(0..vocab.num_kmers())) as TokenId;
        }
    }
    Ok(Corrupted { ids: out, labels })
}

/// Exact per-position masking probabilities for a single width.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskFraction {
    /// A token at least m/2 positions from either end: `1 - (1-P)^m`.
    pub interior: f64,
    /// Mean over all positions, accounting for clipping at the ends.
    pub average: f64,
}

/// A position is masked iff at least one trigger whose span covers it fires.
/// Interior positions are covered by exactly `m` centers; near the ends by fewer.
pub fn expected_mask_fraction(p: f64, m: usize, seq_len: usize) -> Result<MaskFraction, MaskError> {
    check_probability(p)?;
    if m == 0 {
        return Err(MaskError::ZeroWidth);
    }
    let interior = 1.0 - (1.0 - p).powi(m as i32);
    if seq_len == 0 {
        return Ok(MaskFraction { interior, average: 0.0 });
    }
    let (half_down, half_up) = (m / 2, m.div_ceil(2));
    let mut total = 0.0;
    for j in 0..seq_len {
        // centers i with span(i) ∋ j: i in [j - floor(m/2), j + ceil(m/2) - 1]
        let lo = j.saturating_sub(half_down);
        let hi = (j + half_up - 1).min(seq_len - 1);
        let covering = (hi - lo + 1) as i32;
        total += 1.0 - (1.0 - p).powi(covering);
    }
    Ok(MaskFraction { interior, average: total / seq_len as f64 })
}

/// Sequence-average masking probability when `m` is uniform over `widths`.
pub fn expected_mixed_fraction(p: f64, widths: &[usize], seq_len: usize) -> Result<f64, MaskError> {
    let mut acc = 0.0;
    for &m in widths {
        acc += expected_mask_fraction(p, m, seq_len)?.average;
    }
    Ok(acc / widths.len() as f64)
}
