//! Append-only JSON-lines metric log.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde_json::json;

use crate::config::RunConfig;
use crate::error::{io_err, Result};
use crate::eval::MetricReport;

/// One log line: timestamp, config hash, seed, task and metrics.
pub fn log_record(report: &MetricReport, config: &RunConfig) -> serde_json::Value {
    json!({
        "timestamp": chrono::Utc::now().to_rfc3339(),
        "config_hash": config.hash(),
        "seed": config.seed,
        "task": report.task,
        "metrics": report.metrics,
    })
}

pub fn log_metrics(report: &MetricReport, config: &RunConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    let mut line = serde_json::to_string(&log_record(report, config)).expect("metric record serializes");
    line.push('\n');
    f.write_all(line.as_bytes()).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Task;

    #[test]
    fn appends_one_line_per_call() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        let cfg = RunConfig::from_yaml("seed: 11").unwrap();
        let report = MetricReport {
            task: Task::Segmentation,
            metrics: [("mean_iou".to_string(), 0.5)].into_iter().collect(),
        };
        log_metrics(&report, &cfg, &path).unwrap();
        log_metrics(&report, &cfg, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0]["seed"], 11);
        assert_eq!(lines[0]["task"], "segmentation");
        assert_eq!(lines[0]["config_hash"], cfg.hash());
        assert_eq!(lines[1]["metrics"]["mean_iou"], 0.5);
        assert!(chrono::DateTime::parse_from_rfc3339(lines[0]["timestamp"].as_str().unwrap()).is_ok());
    }
}
