use serde::{Deserialize, Serialize};

use super::SearchError;

/// Per-epoch log line of a search run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub epsilon: f64,
    pub lambda_max_estimate: Option<f64>,
    pub trace_estimate: Option<f64>,
    /// `((from, to), op_name)` for every edge of the current argmax architecture.
    pub discrete_arch: Vec<((usize, usize), String)>,
    pub param_free_proportion: f64,
    pub oracle_test_error: Option<f64>,
    /// Only recorded when timing is enabled, to keep outputs reproducible.
    pub wall_seconds: Option<f64>,
}

/// Terminal line of a trajectory file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalRecord {
    /// Always `"final"`.
    pub kind: String,
    pub method: String,
    pub seed: u64,
    pub encoding: String,
    pub discrete_arch: Vec<((usize, usize), String)>,
    /// Final architecture logits, flattened edge-major.
    pub alpha: Vec<f64>,
    /// Why the run stopped early, if it did.
    pub aborted: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
    pub final_record: FinalRecord,
}

impl Trajectory {
    /// One JSON object per line: the epoch records, then the final record.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&self.final_record).expect("record serializes"));
        out.push('\n');
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, SearchError> {
        let mut records = Vec::new();
        let mut final_record = None;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            if final_record.is_some() {
                return Err(SearchError::Parse(format!("line {}: data after the final record", i + 1)));
            }
            let value: serde_json::Value =
                serde_json::from_str(line).map_err(|e| SearchError::Parse(format!("line {}: {e}", i + 1)))?;
            if value.get("kind").and_then(|k| k.as_str()) == Some("final") {
                final_record = Some(
                    serde_json::from_value::<FinalRecord>(value)
                        .map_err(|e| SearchError::Parse(format!("line {}: {e}", i + 1)))?,
                );
            } else {
                let r: TrajectoryRecord =
                    serde_json::from_value(value).map_err(|e| SearchError::Parse(format!("line {}: {e}", i + 1)))?;
                if records.last().is_some_and(|p: &TrajectoryRecord| p.epoch >= r.epoch) {
                    return Err(SearchError::Parse(format!("line {}: epochs out of order", i + 1)));
                }
                records.push(r);
            }
        }
        let final_record = final_record.ok_or_else(|| SearchError::Parse("missing final record".into()))?;
        Ok(Self { records, final_record })
    }
}
