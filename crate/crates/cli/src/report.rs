//! Versioned experiment report: everything one run produced, as a
//! single JSON document. Reruns with the same config and seed must
//! write byte-identical reports except for the one timestamp field.

use std::path::Path;

use serde::{Deserialize, Serialize};

use fedmia_core::{Error, Result};

use crate::config::ConfigFile;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentReport {
    pub schema_version: u32,
    /// The only nondeterministic field; excluded from byte comparisons.
    pub generated_unix_seconds: u64,
    /// Echo of the configuration the run used, seed override included.
    pub config: ConfigFile,
    pub federated: Vec<RoundRow>,
    pub attacks: Vec<AttackOutcome>,
    pub cost: CostSection,
    /// Per-kind mean score trajectories of the evaluation split.
    pub trajectory_means: Vec<TrajectoryMeans>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sliding_window: Option<Vec<SlidingPoint>>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundRow {
    pub round: usize,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackOutcome {
    pub kind: String,
    pub test_accuracy: f64,
    pub train_accuracy: f64,
    pub true_positives: usize,
    pub true_negatives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostRow {
    pub param_count: usize,
    pub memory_bytes: usize,
    pub macs: u64,
}

/// Cost of the trajectory classifier next to the white-box baseline
/// regressor for the same observed epochs; ratios are baseline over
/// trajectory.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub trajectory_input_len: usize,
    pub baseline_input_len: usize,
    pub input_len_ratio: f64,
    pub trajectory: CostRow,
    pub baseline: CostRow,
    pub memory_ratio: f64,
    pub mac_ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryMeans {
    pub kind: String,
    pub epochs: Vec<usize>,
    pub member_mean: Vec<f64>,
    pub non_member_mean: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlidingPoint {
    pub end_epoch: usize,
    pub accuracy: f64,
}

pub fn save_report(report: &ExperimentReport, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::State(format!("report serialization failed: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Read a report back, rejecting unknown fields and foreign schema
/// versions so downstream consumers never misread a newer layout.
pub fn load_report(path: &Path) -> Result<ExperimentReport> {
    let text = std::fs::read_to_string(path)?;
    let report: ExperimentReport = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("{}: {e}", path.display()),
    })?;
    if report.schema_version != REPORT_SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "report schema version {} is not the supported {REPORT_SCHEMA_VERSION}",
            report.schema_version
        )));
    }
    Ok(report)
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_report() -> ExperimentReport {
        let config: ConfigFile = toml::from_str(crate::config::tests::MINIMAL).unwrap();
        ExperimentReport {
            schema_version: REPORT_SCHEMA_VERSION,
            generated_unix_seconds: 123,
            config,
            federated: vec![RoundRow { round: 1, train_accuracy: 0.5, test_accuracy: None }],
            attacks: vec![AttackOutcome {
                kind: "true_label".into(),
                test_accuracy: 0.75,
                train_accuracy: 0.8,
                true_positives: 3,
                true_negatives: 3,
                false_positives: 1,
                false_negatives: 1,
                train_rows: 8,
                test_rows: 8,
                final_train_loss: 0.25,
            }],
            cost: CostSection {
                trajectory_input_len: 2,
                baseline_input_len: 200,
                input_len_ratio: 100.0,
                trajectory: CostRow { param_count: 10, memory_bytes: 40, macs: 20 },
                baseline: CostRow { param_count: 30, memory_bytes: 120, macs: 2000 },
                memory_ratio: 3.0,
                mac_ratio: 100.0,
            },
            trajectory_means: vec![TrajectoryMeans {
                kind: "true_label".into(),
                epochs: vec![2, 4],
                member_mean: vec![0.9, 0.95],
                non_member_mean: vec![0.6, 0.55],
            }],
            sliding_window: None,
        }
    }

    #[test]
    fn report_round_trips_and_rejects_unknown_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        let report = tiny_report();
        save_report(&report, &path).unwrap();
        let loaded = load_report(&path).unwrap();
        assert_eq!(loaded.attacks[0].test_accuracy, 0.75);
        assert_eq!(loaded.federated[0].test_accuracy, None);

        let mut text = std::fs::read_to_string(&path).unwrap();
        text = text.replacen("\"schema_version\"", "\"mystery\": 1,\n  \"schema_version\"", 1);
        std::fs::write(&path, text).unwrap();
        assert!(load_report(&path).is_err());
    }

    #[test]
    fn foreign_schema_versions_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        let mut report = tiny_report();
        report.schema_version = 99;
        save_report(&report, &path).unwrap();
        match load_report(&path) {
            Err(Error::Config(message)) => assert!(message.contains("schema version")),
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn serialization_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        let report = tiny_report();
        save_report(&report, &a).unwrap();
        save_report(&report, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }
}
