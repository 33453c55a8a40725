//! Benchmark report records, per-policy summaries, and byte-stable
//! JSON / CSV serialization with atomic file writes.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::BenchError;

pub const SCHEMA_VERSION: u32 = 1;

pub const CSV_HEADER: &str = "policy,ratio,alpha,seed,per_layer_keep,output_agreement,\
needle_recall,kv_scalars_full,kv_scalars_kept,flops_per_step_full,flops_per_step_kept";

/// Output serialization format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// One (policy, ratio, alpha, seed) benchmark outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub policy: String,
    pub ratio: f64,
    pub alpha: f64,
    pub seed: u64,
    pub per_layer_keep: Vec<usize>,
    /// Fraction of greedy decode tokens matching the uncompressed run.
    pub output_agreement: f64,
    /// Mean over layers of the retained needle-token fraction.
    pub needle_recall: f64,
    pub kv_scalars_full: usize,
    pub kv_scalars_kept: usize,
    pub flops_per_step_full: usize,
    pub flops_per_step_kept: usize,
}

/// Aggregate over the seeds of one (policy, ratio, alpha) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub policy: String,
    pub ratio: f64,
    pub alpha: f64,
    pub n: usize,
    pub agreement_mean: f64,
    pub agreement_std: f64,
    pub recall_mean: f64,
    pub recall_std: f64,
    pub kept_fraction_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub records: Vec<RunRecord>,
    pub summaries: Vec<Summary>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl RunReport {
    /// Builds the report; records must already be sorted by
    /// (policy, ratio, alpha, seed) so summaries group contiguously.
    pub fn build(records: Vec<RunRecord>) -> Self {
        let mut summaries = Vec::new();
        let mut start = 0;
        while start < records.len() {
            let head = &records[start];
            let mut end = start + 1;
            while end < records.len() {
                let r = &records[end];
                if r.policy != head.policy || r.ratio != head.ratio || r.alpha != head.alpha {
                    break;
                }
                end += 1;
            }
            let group = &records[start..end];
            let agreements: Vec<f64> = group.iter().map(|r| r.output_agreement).collect();
            let recalls: Vec<f64> = group.iter().map(|r| r.needle_recall).collect();
            let kept: Vec<f64> = group
                .iter()
                .map(|r| r.kv_scalars_kept as f64 / r.kv_scalars_full as f64)
                .collect();
            let (agreement_mean, agreement_std) = mean_std(&agreements);
            let (recall_mean, recall_std) = mean_std(&recalls);
            summaries.push(Summary {
                policy: head.policy.clone(),
                ratio: head.ratio,
                alpha: head.alpha,
                n: group.len(),
                agreement_mean,
                agreement_std,
                recall_mean,
                recall_std,
                kept_fraction_mean: mean_std(&kept).0,
            });
            start = end;
        }
        RunReport {
            schema_version: SCHEMA_VERSION,
            records,
            summaries,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let keeps = r
                .per_layer_keep
                .iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join(";");
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.policy,
                r.ratio,
                r.alpha,
                r.seed,
                keeps,
                r.output_agreement,
                r.needle_recall,
                r.kv_scalars_full,
                r.kv_scalars_kept,
                r.flops_per_step_full,
                r.flops_per_step_kept
            )
            .expect("write to string");
        }
        s
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => self.to_json(),
            Format::Csv => self.to_csv(),
        }
    }
}

/// Writes the content to a sibling temp file and renames it into place, so
/// a partially written report is never observable at the target path.
pub fn write_atomic(path: &Path, content: &str) -> Result<(), BenchError> {
    let file_name = path
        .file_name()
        .ok_or_else(|| BenchError::Config("output path has no file name".into()))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, content)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(policy: &str, ratio: f64, seed: u64, agreement: f64) -> RunRecord {
        RunRecord {
            policy: policy.to_string(),
            ratio,
            alpha: 0.9,
            seed,
            per_layer_keep: vec![4, 5],
            output_agreement: agreement,
            needle_recall: 1.0,
            kv_scalars_full: 100,
            kv_scalars_kept: 50,
            flops_per_step_full: 100,
            flops_per_step_kept: 50,
        }
    }

    #[test]
    fn summaries_group_by_cell() {
        let report = RunReport::build(vec![
            record("a", 0.1, 0, 1.0),
            record("a", 0.1, 1, 0.5),
            record("b", 0.1, 0, 0.0),
        ]);
        assert_eq!(report.summaries.len(), 2);
        assert_eq!(report.summaries[0].n, 2);
        assert!((report.summaries[0].agreement_mean - 0.75).abs() <= 1e-12);
        // Sample std of {1.0, 0.5}.
        assert!((report.summaries[0].agreement_std - 0.5 / 2f64.sqrt()).abs() <= 1e-12);
        assert_eq!(report.summaries[1].n, 1);
        assert_eq!(report.summaries[1].agreement_std, 0.0);
    }

    #[test]
    fn json_round_trips() {
        let report = RunReport::build(vec![record("a", 0.1, 0, 1.0)]);
        let text = report.to_json();
        let back: RunReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.schema_version, 1);
    }

    #[test]
    fn json_is_byte_stable() {
        let a = RunReport::build(vec![record("a", 0.1, 0, 1.0), record("a", 0.1, 1, 0.5)]);
        let b = RunReport::build(vec![record("a", 0.1, 0, 1.0), record("a", 0.1, 1, 0.5)]);
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn csv_has_header_and_one_row_per_record() {
        let report = RunReport::build(vec![record("a", 0.1, 0, 1.0), record("b", 0.2, 1, 0.5)]);
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], CSV_HEADER);
        assert!(lines[1].starts_with("a,0.1,0.9,0,4;5,"));
    }

    #[test]
    fn atomic_write_replaces_and_cleans_up() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        write_atomic(&path, "first").unwrap();
        write_atomic(&path, "second").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "second");
        assert!(!dir.path().join("report.json.tmp").exists());
    }
}
