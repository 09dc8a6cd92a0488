use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AnalysisError, AttentionMetrics, StageJump};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const LOSS_CSV_HEADER: [&str; 4] = ["step", "loss", "stage", "width_max"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub stage: usize,
    pub widths: Vec<usize>,
    pub loss: f64,
}

/// Everything one run produced, serialized as JSON plus a CSV loss curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    /// Effective configuration after merging file and flags.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub stage_boundaries: Vec<u64>,
    pub records: Vec<StepRecord>,
    pub attention: Option<AttentionMetrics>,
    pub silhouette: Option<f64>,
    pub stage_jumps: Vec<StageJump>,
    pub resumed_from_step: Option<u64>,
}

impl RunReport {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        RunReport {
            schema_version: REPORT_SCHEMA_VERSION,
            command: command.into(),
            config,
            seeds: BTreeMap::new(),
            stage_boundaries: Vec::new(),
            records: Vec::new(),
            attention: None,
            silhouette: None,
            stage_jumps: Vec::new(),
            resumed_from_step: None,
        }
    }

    /// Steps strictly increasing and every metric finite and in range.
    pub fn validate(&self) -> Result<(), AnalysisError> {
        let bad = |m: String| Err(AnalysisError::InvariantViolated(m));
        for pair in self.records.windows(2) {
            if pair[1].step <= pair[0].step {
                return bad(format!("step {} follows step {}", pair[1].step, pair[0].step));
            }
        }
        if let Some(r) = self.records.iter().find(|r| !r.loss.is_finite() || r.loss < 0.0) {
            return bad(format!("loss {} at step {}", r.loss, r.step));
        }
        if let Some(a) = &self.attention {
            if a.cls_mass.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return bad(format!("cls mass out of range: {:?}", a.cls_mass));
            }
            if a.entropy.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return bad(format!("entropy out of range: {:?}", a.entropy));
            }
        }
        if let Some(s) = self.silhouette {
            if !(-1.0..=1.0).contains(&s) {
                return bad(format!("silhouette {s} out of range"));
            }
        }
        if self.stage_jumps.iter().any(|j| !j.jump.is_finite()) {
            return bad("non-finite stage jump".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, AnalysisError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, AnalysisError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn loss_csv(&self) -> Result<String, AnalysisError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(LOSS_CSV_HEADER)?;
        for r in &self.records {
            let width_max = r.widths.iter().max().copied().unwrap_or(0);
            w.write_record([r.step.to_string(), r.loss.to_string(), r.stage.to_string(), width_max.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| AnalysisError::IoFailure(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Validates and writes `<stem>.json` and `<stem>_loss.csv` into `dir`.
pub fn emit_report(report: &RunReport, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf), AnalysisError> {
    report.validate()?;
    fs::create_dir_all(dir)?;
    let json = dir.join(format!("{stem}.json"));
    let csv = dir.join(format!("{stem}_loss.csv"));
    fs::write(&json, report.to_json()?)?;
    fs::write(&csv, report.loss_csv()?)?;
    Ok((json, csv))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunReport {
        let mut r = RunReport::new("pretrain", serde_json::json!({"seed": 3, "lr": 1e-3}));
        r.seeds.insert("root".into(), 3);
        r.stage_boundaries = vec![60, 120];
        r.records = (1..=5)
            .map(|s| StepRecord { step: s, stage: 0, widths: vec![6, 8], loss: 8.3 / s as f64 + 0.1 })
            .collect();
        r.attention = Some(AttentionMetrics { cls_mass: vec![0.1, 0.7], entropy: vec![2.0, 1.1] });
        r.silhouette = Some(-0.0123456789012345);
        r
    }

    #[test]
    fn json_round_trip() {
        let r = sample();
        assert_eq!(RunReport::from_json(&r.to_json().unwrap()).unwrap(), r);
        let empty = RunReport::new("analyze", serde_json::Value::Null);
        assert_eq!(RunReport::from_json(&empty.to_json().unwrap()).unwrap(), empty);
    }

    #[test]
    fn emits_files_with_csv_header() {
        let dir = tempfile::tempdir().unwrap();
        let (json, csv) = emit_report(&sample(), dir.path(), "run").unwrap();
        assert!(json.exists());
        let text = fs::read_to_string(csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("step,loss,stage,width_max"));
        assert_eq!(lines.next().unwrap().split(',').last(), Some("8"));
        assert_eq!(text.lines().count(), 6);
    }

    #[test]
    fn validation_rejects_bad_reports() {
        let mut r = sample();
        r.records[2].step = 1;
        assert!(r.validate().is_err());
        let mut r = sample();
        r.records[0].loss = f64::NAN;
        assert!(r.validate().is_err());
        let mut r = sample();
        r.silhouette = Some(1.5);
        assert!(emit_report(&r, Path::new("/nonexistent"), "x").is_err());
    }
}
