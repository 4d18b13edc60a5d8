//! Metrics serialization: the per-round CSV and the JSON sidecar.
//!
//! The CSV header is fixed:
//!
//! ```text
//! round,sample_rate,m,train_loss,test_loss,test_acc,uploaded,downloaded,cum_cost
//! ```
//!
//! Floats are printed in the shortest form that parses back to the same
//! double, so equal runs produce byte-identical files. Rounds without an
//! evaluation leave `test_loss` and `test_acc` empty. The sidecar echoes the
//! fully resolved configuration and the selected client ids per round,
//! enough to reproduce a run exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::engine::{RoundRecord, RunConfig};
use crate::error::Result;

pub const CSV_HEADER: &str =
    "round,sample_rate,m,train_loss,test_loss,test_acc,uploaded,downloaded,cum_cost";

fn optional(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

/// Render the metrics table.
pub fn metrics_csv(records: &[RoundRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.round,
            r.sample_rate,
            r.m,
            r.train_loss,
            optional(r.test_loss),
            optional(r.test_acc),
            r.uploaded,
            r.downloaded,
            r.cum_cost
        )
        .expect("writing to a string cannot fail");
    }
    out
}

pub fn write_metrics_csv(path: &Path, records: &[RoundRecord]) -> Result<()> {
    fs::write(path, metrics_csv(records))?;
    Ok(())
}

#[derive(Serialize)]
struct Sidecar<'a> {
    config: &'a RunConfig,
    rounds: Vec<SidecarRound<'a>>,
}

#[derive(Serialize)]
struct SidecarRound<'a> {
    round: usize,
    selected: &'a [usize],
}

/// Render the JSON sidecar.
pub fn run_json(config: &RunConfig, records: &[RoundRecord]) -> String {
    let sidecar = Sidecar {
        config,
        rounds: records
            .iter()
            .map(|r| SidecarRound {
                round: r.round,
                selected: &r.selected,
            })
            .collect(),
    };
    let mut out =
        serde_json::to_string_pretty(&sidecar).expect("run config always serializes");
    out.push('\n');
    out
}

pub fn write_run_json(path: &Path, config: &RunConfig, records: &[RoundRecord]) -> Result<()> {
    fs::write(path, run_json(config, records))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(round: usize, evaluated: bool) -> RoundRecord {
        RoundRecord {
            round,
            sample_rate: 0.5,
            m: 3,
            selected: vec![0, 2, 5],
            train_loss: 1.25,
            test_loss: evaluated.then_some(1.0986122886681098),
            test_acc: evaluated.then_some(0.75),
            uploaded: 45,
            downloaded: 45,
            cum_cost: 0.375,
        }
    }

    #[test]
    fn header_and_row_layout() {
        let csv = metrics_csv(&[record(0, true)]);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        assert_eq!(
            lines.next().unwrap(),
            "0,0.5,3,1.25,1.0986122886681098,0.75,45,45,0.375"
        );
        assert!(lines.next().is_none());
    }

    #[test]
    fn unevaluated_rounds_leave_fields_empty() {
        let csv = metrics_csv(&[record(1, false)]);
        assert!(csv.lines().nth(1).unwrap().contains(",1.25,,,45,"));
    }

    #[test]
    fn sidecar_lists_selected_clients() {
        let config = crate::engine::RunConfig {
            data: crate::engine::DataSource::Blobs {
                train_examples: 100,
                test_examples: 20,
                dims: 2,
                classes: 2,
                spread: 1.0,
            },
            num_clients: 6,
            model: crate::model::ModelSpec::logreg(2, 2),
            train: crate::model::TrainConfig {
                epochs: 1,
                batch_size: 8,
                learning_rate: 0.1,
            },
            sampling: crate::sampling::SamplingSchedule::fixed(0.5),
            masking: crate::masking::MaskingPolicy::None,
            aggregation: crate::aggregation::AggregationMode::Weighted,
            rounds: 1,
            eval_every: 1,
            seed: 1,
            dropout_prob: 0.0,
        };
        let json = run_json(&config, &[record(0, true)]);
        let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed["rounds"][0]["selected"], serde_json::json!([0, 2, 5]));
        assert_eq!(parsed["config"]["seed"], serde_json::json!(1));
        assert_eq!(parsed["config"]["sampling"]["kind"], serde_json::json!("static"));
    }
}
