//! Experiment reports: CSV rows, named checks and the JSON summary.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::ExperimentKind;

pub const CSV_HEADER: [&str; 8] = [
    "t",
    "estimator",
    "scheme",
    "exact_value",
    "empirical_value",
    "ci_low",
    "ci_high",
    "n_replicates",
];

/// One CSV line. `exact_value` comes from an oracle, `empirical_value`
/// from simulation or a fit; either may be absent.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Row {
    pub t: Option<usize>,
    pub estimator: String,
    pub scheme: String,
    pub exact_value: Option<f64>,
    pub empirical_value: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n_replicates: usize,
}

impl Row {
    pub fn exact(t: usize, estimator: impl Into<String>, scheme: impl Into<String>, value: f64) -> Self {
        Row {
            t: Some(t),
            estimator: estimator.into(),
            scheme: scheme.into(),
            exact_value: Some(value),
            empirical_value: None,
            ci_low: None,
            ci_high: None,
            n_replicates: 0,
        }
    }

    pub fn with_empirical(mut self, value: f64, ci: Option<(f64, f64)>, n: usize) -> Self {
        self.empirical_value = Some(value);
        if let Some((lo, hi)) = ci {
            self.ci_low = Some(lo);
            self.ci_high = Some(hi);
        }
        self.n_replicates = n;
        self
    }

    pub fn without_exact(mut self) -> Self {
        self.exact_value = None;
        self
    }

    pub fn untimed(mut self) -> Self {
        self.t = None;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct Report {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub rows: Vec<Row>,
    pub checks: Vec<Check>,
    pub metrics: Map<String, Value>,
}

/// 17 significant digits, enough to round-trip an `f64`.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn cell(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

impl Report {
    pub fn new(experiment: ExperimentKind, seed: u64) -> Self {
        Report {
            experiment,
            seed,
            rows: Vec::new(),
            checks: Vec::new(),
            metrics: Map::new(),
        }
    }

    pub fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) -> bool {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
        passed
    }

    pub fn metric(&mut self, key: &str, value: impl Serialize) {
        self.metrics
            .insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.t.map(|t| t.to_string()).unwrap_or_default(),
                r.estimator.clone(),
                r.scheme.clone(),
                cell(r.exact_value),
                cell(r.empirical_value),
                cell(r.ci_low),
                cell(r.ci_high),
                r.n_replicates.to_string(),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }

    pub fn summary(&self) -> Value {
        let mut metrics = self.metrics.clone();
        metrics.insert("checks".into(), serde_json::to_value(&self.checks).unwrap_or(Value::Null));
        json!({
            "experiment": self.experiment.as_str(),
            "seed": self.seed,
            "passed": self.passed(),
            "metrics": Value::Object(metrics),
        })
    }

    pub fn summary_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&self.summary())?;
        s.push('\n');
        Ok(s)
    }

    /// Write `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let json_path = dir.join(format!("{stem}.json"));
        std::fs::write(&csv_path, self.to_csv()?).with_context(|| format!("writing {}", csv_path.display()))?;
        std::fs::write(&json_path, self.summary_json()?)
            .with_context(|| format!("writing {}", json_path.display()))?;
        Ok((csv_path, json_path))
    }
}
