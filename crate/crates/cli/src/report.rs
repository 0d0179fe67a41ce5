use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use universe_match::io::atomic_write;
use universe_match::metrics::{ClusteringMetrics, MatchTypeCounts};

pub const SCHEMA_VERSION: u32 = 1;

/// One CSV row: metric name, value, and what the value should be read against.
#[derive(Debug, Clone, Serialize)]
pub struct MetricRow {
    pub metric: String,
    pub value: f64,
    pub context: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub metrics: Vec<MetricRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub match_types: Option<MatchTypeCounts>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clustering: Option<ClusteringMetrics<f64>>,
    pub checks: Vec<CheckResult>,
    pub artifacts: Vec<String>,
    pub elapsed_seconds: f64,
}

impl RunReport {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            seed,
            config,
            metrics: Vec::new(),
            match_types: None,
            clustering: None,
            checks: Vec::new(),
            artifacts: Vec::new(),
            elapsed_seconds: 0.0,
        }
    }

    pub fn metric(&mut self, name: &str, value: f64, context: impl Into<String>) {
        self.metrics.push(MetricRow {
            metric: name.to_string(),
            value,
            context: context.into(),
        });
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(CheckResult {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Columns: `metric,value,context`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["metric", "value", "context"])?;
        for row in &self.metrics {
            w.write_record([row.metric.as_str(), &row.value.to_string(), row.context.as_str()])?;
        }
        for c in &self.checks {
            let value = if c.passed { "1" } else { "0" };
            w.write_record([format!("check:{}", c.name).as_str(), value, c.detail.as_str()])?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }

    pub fn emit(&self, json_path: Option<&Path>, csv_path: Option<&Path>) -> Result<()> {
        let json = self.to_json()?;
        match json_path {
            Some(p) => atomic_write(p, json.as_bytes()).with_context(|| format!("writing report {}", p.display()))?,
            None => print!("{json}"),
        }
        if let Some(p) = csv_path {
            atomic_write(p, self.to_csv()?.as_bytes()).with_context(|| format!("writing CSV {}", p.display()))?;
        }
        for c in &self.checks {
            eprintln!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        Ok(())
    }
}
