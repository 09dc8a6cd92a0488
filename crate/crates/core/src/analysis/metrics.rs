use serde::{Deserialize, Serialize};

use super::AnalysisError;

/// Binary confusion matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        ConfusionCounts { tp, tn, fp, fn_ }
    }

    /// Class 1 is positive.
    pub fn from_predictions(labels: &[usize], predictions: &[usize]) -> Result<Self, AnalysisError> {
        check_lengths(labels, predictions)?;
        let mut c = ConfusionCounts::default();
        for (&l, &p) in labels.iter().zip(predictions) {
            match (l == 1, p == 1) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

fn check_lengths(labels: &[usize], predictions: &[usize]) -> Result<(), AnalysisError> {
    if labels.len() != predictions.len() {
        return Err(AnalysisError::LengthMismatch { labels: labels.len(), predictions: predictions.len() });
    }
    Ok(())
}

/// Matthews correlation coefficient. Returns 0 when any marginal is empty.
pub fn mcc(c: ConfusionCounts) -> f64 {
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let factors = [tp + fp, tp + fn_, tn + fp, tn + fn_];
    if factors.contains(&0.0) {
        return 0.0;
    }
    let num = tp * tn - fp * fn_;
    let den = (factors[0] * factors[1]).sqrt() * (factors[2] * factors[3]).sqrt();
    (num / den).clamp(-1.0, 1.0)
}

/// Generalized (K-class) correlation coefficient; equals [`mcc`] for two
/// classes. Returns 0 when either marginal is concentrated on one class.
pub fn multiclass_mcc(labels: &[usize], predictions: &[usize]) -> Result<f64, AnalysisError> {
    check_lengths(labels, predictions)?;
    let k = labels.iter().chain(predictions).copied().max().map_or(0, |m| m + 1);
    let mut t = vec![0f64; k];
    let mut p = vec![0f64; k];
    let mut correct = 0f64;
    for (&l, &q) in labels.iter().zip(predictions) {
        t[l] += 1.0;
        p[q] += 1.0;
        if l == q {
            correct += 1.0;
        }
    }
    let s = labels.len() as f64;
    let pt: f64 = p.iter().zip(&t).map(|(a, b)| a * b).sum();
    let pp: f64 = p.iter().map(|a| a * a).sum();
    let tt: f64 = t.iter().map(|a| a * a).sum();
    let (dp, dt) = (s * s - pp, s * s - tt);
    if dp <= 0.0 || dt <= 0.0 {
        return Ok(0.0);
    }
    Ok(((correct * s - pt) / (dp.sqrt() * dt.sqrt())).clamp(-1.0, 1.0))
}
