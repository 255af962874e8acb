//! Result records and their JSON / CSV emission.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::map_csv_io;
use crate::error::{Error, Result};
use crate::metrics::DetectionReport;

pub const SCHEMA_VERSION: u32 = 1;

/// Metrics reported as percentages in `results.csv`.
pub const PERCENT_METRICS: &[&str] = &[
    "tnr_at_tpr95",
    "auroc",
    "aupr_in",
    "aupr_out",
    "aupr_succ",
    "aupr_err",
    "detection_accuracy",
    "ece",
    "accuracy",
    "near_far_auroc",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Summary { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub score: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub per_seed: Vec<SeedMetrics>,
    pub summary: BTreeMap<String, Summary>,
}

impl MethodResult {
    pub fn new(method: &str, score: &str, epsilon: Option<f64>, per_seed: Vec<SeedMetrics>) -> Self {
        let mut summary = BTreeMap::new();
        if let Some(first) = per_seed.first() {
            for name in first.metrics.keys() {
                let values: Vec<f64> = per_seed.iter().filter_map(|s| s.metrics.get(name).copied()).collect();
                summary.insert(name.clone(), Summary::of(&values));
            }
        }
        MethodResult {
            method: method.into(),
            score: score.into(),
            epsilon,
            per_seed,
            summary,
        }
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.summary.get(metric).map(|s| s.mean)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Results {
    pub schema_version: u32,
    pub experiment: String,
    pub name: String,
    pub seeds: Vec<u64>,
    pub methods: Vec<MethodResult>,
    #[serde(default)]
    pub extras: BTreeMap<String, f64>,
}

impl Results {
    pub fn new(experiment: &str, name: &str, seeds: &[u64]) -> Self {
        Results {
            schema_version: SCHEMA_VERSION,
            experiment: experiment.into(),
            name: name.into(),
            seeds: seeds.to_vec(),
            methods: Vec::new(),
            extras: BTreeMap::new(),
        }
    }

    pub fn method(&self, method: &str, score: &str) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.method == method && m.score == score && m.epsilon.is_none())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// One row per (method, score, epsilon, metric) with the mean ± std string.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| map_csv_io(path, e))?;
        w.write_record(["method", "score", "epsilon", "metric", "mean", "std", "formatted"])?;
        for m in &self.methods {
            for (name, s) in &m.summary {
                w.write_record([
                    m.method.clone(),
                    m.score.clone(),
                    m.epsilon.map_or_else(String::new, |e| e.to_string()),
                    name.clone(),
                    s.mean.to_string(),
                    s.std.to_string(),
                    format_summary(name, s),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// `97.3 ± 0.4` for percentage metrics, four decimals otherwise.
pub fn format_summary(metric: &str, s: &Summary) -> String {
    if PERCENT_METRICS.contains(&metric) {
        format!("{:.1} ± {:.1}", 100.0 * s.mean, 100.0 * s.std)
    } else {
        format!("{:.4} ± {:.4}", s.mean, s.std)
    }
}

pub fn report_metrics(report: &DetectionReport) -> BTreeMap<String, f64> {
    report.fields().into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// One scored input in `raw_scores.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawScore {
    pub seed: u64,
    pub method: String,
    pub score: String,
    pub epsilon: Option<f64>,
    pub input: usize,
    pub positive: bool,
    pub value: f64,
}

pub fn raw_scores(
    seed: u64,
    method: &str,
    score: &str,
    epsilon: Option<f64>,
    positives: &[f64],
    negatives: &[f64],
) -> Vec<RawScore> {
    let pos = positives.iter().enumerate().map(|(i, &v)| (i, true, v));
    let neg = negatives.iter().enumerate().map(|(i, &v)| (i, false, v));
    pos.chain(neg)
        .map(|(input, positive, value)| RawScore {
            seed,
            method: method.into(),
            score: score.into(),
            epsilon,
            input,
            positive,
            value,
        })
        .collect()
}

pub fn write_raw_scores(path: &Path, rows: &[RawScore]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| map_csv_io(path, e))?;
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["seed", "method", "score", "epsilon", "input", "positive", "value"])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_raw_scores(path: &Path) -> Result<Vec<RawScore>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| map_csv_io(path, e))?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Output directory layout.
#[derive(Clone, Debug)]
pub struct OutputDir {
    pub root: PathBuf,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(OutputDir { root: root.to_path_buf() })
    }

    pub fn seed_dir(&self, seed: u64) -> Result<PathBuf> {
        let dir = self.root.join(format!("seed-{seed}"));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}
