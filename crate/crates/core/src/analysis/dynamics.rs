use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AnalysisError;

pub const DEFAULT_JUMP_WINDOW: usize = 100;

/// Mean loss over the `window` steps ending at a boundary versus the
/// `window` steps after it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageJump {
    pub boundary: u64,
    pub pre_mean: f64,
    pub post_mean: f64,
    pub jump: f64,
}

/// Jump at an arbitrary split step: steps `split-window+1..=split` versus
/// `split+1..=split+window`.
pub fn split_jump(losses: &BTreeMap<u64, f64>, split: u64, window: usize) -> Result<StageJump, AnalysisError> {
    let w = window as u64;
    let missing = || AnalysisError::InsufficientHistory {
        boundary: split,
        from: (split + 1).saturating_sub(w),
        to: split + w,
    };
    if window == 0 || split < w {
        return Err(missing());
    }
    let mean = |from: u64, to: u64| -> Result<f64, AnalysisError> {
        let mut sum = 0.0;
        for s in from..=to {
            sum += losses.get(&s).ok_or_else(missing)?;
        }
        Ok(sum / w as f64)
    };
    let pre_mean = mean(split + 1 - w, split)?;
    let post_mean = mean(split + 1, split + w)?;
    Ok(StageJump { boundary: split, pre_mean, post_mean, jump: post_mean - pre_mean })
}

/// One [`StageJump`] per boundary. `losses` holds (step, loss) pairs.
pub fn stage_jump_detector(
    losses: &[(u64, f64)],
    boundaries: &[u64],
    window: usize,
) -> Result<Vec<StageJump>, AnalysisError> {
    let map: BTreeMap<u64, f64> = losses.iter().copied().collect();
    boundaries.iter().map(|&b| split_jump(&map, b, window)).collect()
}

/// Spread of split jumps at steps away from any boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseBand {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub max_abs: f64,
}

impl NoiseBand {
    /// `mean ± sigmas·std`.
    pub fn contains(&self, jump: f64, sigmas: f64) -> bool {
        (jump - self.mean).abs() <= sigmas * self.std
    }
}

/// Jumps at split points spaced `window` apart whose windows do not touch a
/// boundary.
pub fn noise_band(losses: &[(u64, f64)], boundaries: &[u64], window: usize) -> Result<NoiseBand, AnalysisError> {
    let map: BTreeMap<u64, f64> = losses.iter().copied().collect();
    let w = window as u64;
    let (Some(&first), Some(&last)) = (map.keys().next(), map.keys().next_back()) else {
        return Err(AnalysisError::InsufficientHistory { boundary: 0, from: 0, to: 0 });
    };
    let mut jumps = Vec::new();
    let mut split = first + w - 1;
    while split + w <= last {
        let near = boundaries.iter().any(|&b| b + w > split && b < split + w + w);
        if !near {
            if let Ok(j) = split_jump(&map, split, window) {
                jumps.push(j.jump);
            }
        }
        split += w;
    }
    if jumps.is_empty() {
        return Err(AnalysisError::InsufficientHistory { boundary: 0, from: first, to: last });
    }
    let n = jumps.len() as f64;
    let mean = jumps.iter().sum::<f64>() / n;
    let std = (jumps.iter().map(|j| (j - mean).powi(2)).sum::<f64>() / n).sqrt();
    let max_abs = jumps.iter().map(|j| j.abs()).fold(0.0, f64::max);
    Ok(NoiseBand { count: jumps.len(), mean, std, max_abs })
}
