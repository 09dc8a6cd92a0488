use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::model::{ForwardTrace, Scalar};

const RANGE_TOL: f64 = 1e-6;

/// Per-layer attention diagnostics averaged over heads and masked queries.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttentionMetrics {
    /// Mean attention weight on position 0 (`[CLS]`).
    pub cls_mass: Vec<f64>,
    /// Mean Shannon entropy (nats) of attention rows.
    pub entropy: Vec<f64>,
}

/// Running sums for [`AttentionMetrics`] across many traces.
#[derive(Clone, Debug, Default)]
pub struct AttentionStats {
    cls_sum: Vec<f64>,
    entropy_sum: Vec<f64>,
    rows: u64,
}

impl AttentionStats {
    pub fn new(num_layers: usize) -> Self {
        AttentionStats { cls_sum: vec![0.0; num_layers], entropy_sum: vec![0.0; num_layers], rows: 0 }
    }

    /// Adds every head's row for each query in `positions`.
    pub fn accumulate<T: Scalar>(&mut self, trace: &ForwardTrace<T>, positions: &[usize]) -> Result<(), AnalysisError> {
        if self.cls_sum.len() != trace.num_layers {
            return Err(AnalysisError::InvariantViolated(format!(
                "trace has {} layers, accumulator {}",
                trace.num_layers,
                self.cls_sum.len()
            )));
        }
        let keys = trace.padding_mask.iter().filter(|&&m| m).count();
        let max_entropy = (keys.max(1) as f64).ln();
        for &q in positions {
            if q >= trace.seq_len || !trace.padding_mask[q] {
                return Err(AnalysisError::InvariantViolated(format!("query {q} is not a real position")));
            }
            for l in 0..trace.num_layers {
                for h in 0..trace.num_heads {
                    let row = trace.attention_row(l, h, q);
                    let cls = row[0].as_f64();
                    let ent: f64 = row
                        .iter()
                        .map(|a| a.as_f64())
                        .filter(|&a| a > 0.0)
                        .map(|a| -a * a.ln())
                        .sum();
                    if !(-RANGE_TOL..=1.0 + RANGE_TOL).contains(&cls) {
                        return Err(AnalysisError::InvariantViolated(format!("cls mass {cls} outside [0, 1]")));
                    }
                    if !(-RANGE_TOL..=max_entropy + RANGE_TOL).contains(&ent) {
                        return Err(AnalysisError::InvariantViolated(format!(
                            "entropy {ent} outside [0, ln {keys}]"
                        )));
                    }
                    self.cls_sum[l] += cls;
                    self.entropy_sum[l] += ent;
                }
            }
            self.rows += trace.num_heads as u64;
        }
        Ok(())
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn finish(&self) -> Result<AttentionMetrics, AnalysisError> {
        if self.rows == 0 {
            return Err(AnalysisError::NoMaskedPositions);
        }
        let n = self.rows as f64;
        Ok(AttentionMetrics {
            cls_mass: self.cls_sum.iter().map(|s| (s / n).clamp(0.0, 1.0)).collect(),
            entropy: self.entropy_sum.iter().map(|s| (s / n).max(0.0)).collect(),
        })
    }
}

fn single<T: Scalar>(trace: &ForwardTrace<T>, masked: &[usize]) -> Result<AttentionMetrics, AnalysisError> {
    let mut stats = AttentionStats::new(trace.num_layers);
    stats.accumulate(trace, masked)?;
    stats.finish()
}

/// Per layer: mean over heads and masked queries of the weight on `[CLS]`.
pub fn attention_cls_mass<T: Scalar>(trace: &ForwardTrace<T>, masked: &[usize]) -> Result<Vec<f64>, AnalysisError> {
    Ok(single(trace, masked)?.cls_mass)
}

/// Per layer: mean entropy (natural log) of attention rows of masked queries.
pub fn attention_entropy<T: Scalar>(trace: &ForwardTrace<T>, masked: &[usize]) -> Result<Vec<f64>, AnalysisError> {
    Ok(single(trace, masked)?.entropy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace_with(n: usize, real: usize, layers: usize, heads: usize, row: impl Fn(usize) -> Vec<f64>) -> ForwardTrace<f64> {
        let mask: Vec<bool> = (0..n).map(|i| i < real).collect();
        let mut attn = vec![0.0; heads * n * n];
        for h in 0..heads {
            for q in 0..n {
                attn[(h * n + q) * n..(h * n + q + 1) * n].copy_from_slice(&row(q));
            }
        }
        ForwardTrace {
            seq_len: n,
            vocab_size: 1,
            num_layers: layers,
            num_heads: heads,
            hidden_dim: 1,
            padding_mask: mask,
            logits: vec![0.0; n],
            attention: vec![attn; layers],
            hidden: vec![0.0; n],
            pooled: vec![0.0],
            class_logits: vec![],
        }
    }

    #[test]
    fn uniform_rows() {
        let (n, real) = (8, 5);
        let t = trace_with(n, real, 3, 2, |_| (0..n).map(|j| if j < real { 0.2 } else { 0.0 }).collect());
        let cls = attention_cls_mass(&t, &[1, 3]).unwrap();
        let ent = attention_entropy(&t, &[1, 3]).unwrap();
        assert_eq!(cls.len(), 3);
        for l in 0..3 {
            assert!((cls[l] - 0.2).abs() < 1e-12);
            assert!((ent[l] - 5f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn one_hot_on_cls() {
        let t = trace_with(4, 4, 2, 4, |_| vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(attention_cls_mass(&t, &[2]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(attention_entropy(&t, &[2]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn no_masked_positions() {
        let t = trace_with(4, 4, 1, 1, |_| vec![0.25; 4]);
        assert!(matches!(attention_cls_mass(&t, &[]), Err(AnalysisError::NoMaskedPositions)));
    }

    #[test]
    fn out_of_range_rows_are_rejected() {
        let t = trace_with(4, 4, 1, 1, |_| vec![1.5, 0.0, 0.0, 0.0]);
        assert!(matches!(attention_cls_mass(&t, &[1]), Err(AnalysisError::InvariantViolated(_))));
        let t = trace_with(4, 2, 1, 1, |_| vec![0.5, 0.5, 0.0, 0.0]);
        assert!(attention_cls_mass(&t, &[3]).is_err());
    }
}
