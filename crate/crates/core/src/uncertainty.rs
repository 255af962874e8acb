//! Aleatoric and epistemic scores from sampled paths.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::map_csv_io;
use crate::error::{Error, Result};
use crate::model::{PathOptions, PathSample, SdeNet, Task, TaskOutput};

/// Default number of test-time paths.
pub const DEFAULT_TEST_PATHS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MeanPrediction {
    Probabilities(Vec<f64>),
    Gaussian { mean: f64, sigma: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub aleatoric: f64,
    pub epistemic: f64,
    pub mean_prediction: MeanPrediction,
    /// Largest averaged class probability; `None` for regression.
    pub max_prob: Option<f64>,
}

impl UncertaintyReport {
    /// Predicted class, or the averaged mean for regression.
    pub fn prediction(&self) -> f64 {
        match &self.mean_prediction {
            MeanPrediction::Probabilities(p) => argmax(p) as f64,
            MeanPrediction::Gaussian { mean, .. } => *mean,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    MaxProb,
    Epistemic,
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Natural-log entropy, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Unbiased sample variance. Deviations are taken from the first value, so
/// identical values give exactly 0.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let d: Vec<f64> = values.iter().map(|v| v - values[0]).collect();
    let mean = d.iter().sum::<f64>() / n;
    d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
}

fn probabilities(s: &PathSample) -> Result<&[f64]> {
    match &s.output {
        TaskOutput::Probabilities(p) => Ok(p),
        TaskOutput::Gaussian { .. } => Err(Error::Config("expected class probabilities, got a regression output".into())),
    }
}

fn gaussian(s: &PathSample) -> Result<(f64, f64)> {
    match s.output {
        TaskOutput::Gaussian { mean, sigma } => Ok((mean, sigma)),
        TaskOutput::Probabilities(_) => Err(Error::Config("expected a regression output, got class probabilities".into())),
    }
}

fn need(samples: &[PathSample], needed: usize) -> Result<()> {
    if samples.len() < needed {
        return Err(Error::InsufficientSamples {
            needed,
            got: samples.len(),
        });
    }
    Ok(())
}

/// Mean predictive entropy, or mean predictive variance for regression.
pub fn aleatoric_score(samples: &[PathSample], task: Task) -> Result<f64> {
    need(samples, 1)?;
    let m = samples.len() as f64;
    let mut total = 0.0;
    for s in samples {
        total += match task {
            Task::Classification { .. } => entropy(probabilities(s)?),
            Task::Regression => gaussian(s)?.1.powi(2),
        };
    }
    Ok(total / m)
}

/// Mean per-dimension variance of `x_T`, or variance of the predictive mean
/// for regression. Needs at least two paths.
pub fn epistemic_score(samples: &[PathSample], task: Task) -> Result<f64> {
    need(samples, 2)?;
    match task {
        Task::Classification { .. } => {
            let d = samples[0].final_state.len();
            let mut column = vec![0.0; samples.len()];
            let mut total = 0.0;
            for j in 0..d {
                for (c, s) in column.iter_mut().zip(samples) {
                    *c = s.final_state[j];
                }
                total += sample_variance(&column);
            }
            Ok(total / d as f64)
        }
        Task::Regression => {
            let means = samples.iter().map(|s| gaussian(s).map(|g| g.0)).collect::<Result<Vec<_>>>()?;
            Ok(sample_variance(&means))
        }
    }
}

/// Path-averaged class probabilities.
pub fn mean_probabilities(samples: &[PathSample]) -> Result<Vec<f64>> {
    need(samples, 1)?;
    let mut mean = vec![0.0; probabilities(&samples[0])?.len()];
    for s in samples {
        for (m, p) in mean.iter_mut().zip(probabilities(s)?) {
            *m += p;
        }
    }
    let m = samples.len() as f64;
    mean.iter_mut().for_each(|v| *v /= m);
    Ok(mean)
}

/// `max_prob`: higher means more in-distribution. `epistemic`: higher means
/// more out-of-distribution.
pub fn detection_score(samples: &[PathSample], task: Task, mode: ScoreMode) -> Result<f64> {
    match (mode, task) {
        (ScoreMode::MaxProb, Task::Regression) => {
            Err(Error::Config("max_prob scoring needs a classification task".into()))
        }
        (ScoreMode::MaxProb, Task::Classification { .. }) => {
            let p = mean_probabilities(samples)?;
            Ok(p.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        }
        (ScoreMode::Epistemic, _) => epistemic_score(samples, task),
    }
}

pub fn report(samples: &[PathSample], task: Task) -> Result<UncertaintyReport> {
    let aleatoric = aleatoric_score(samples, task)?;
    let epistemic = epistemic_score(samples, task)?;
    let (mean_prediction, max_prob) = match task {
        Task::Classification { .. } => {
            let p = mean_probabilities(samples)?;
            let max = p[argmax(&p)];
            (MeanPrediction::Probabilities(p), Some(max))
        }
        Task::Regression => {
            let m = samples.len() as f64;
            let mut mean = 0.0;
            let mut sigma = 0.0;
            for s in samples {
                let (mu, sd) = gaussian(s)?;
                mean += mu;
                sigma += sd;
            }
            (
                MeanPrediction::Gaussian {
                    mean: mean / m,
                    sigma: sigma / m,
                },
                None,
            )
        }
    };
    Ok(UncertaintyReport {
        aleatoric,
        epistemic,
        mean_prediction,
        max_prob,
    })
}

/// Runs `opts.paths` paths on every row and reports each input.
pub fn evaluate(model: &SdeNet, x: &Tensor, opts: PathOptions) -> Result<Vec<UncertaintyReport>> {
    let task = model.task();
    model
        .forward_paths(x, opts)?
        .iter()
        .map(|samples| report(samples, task))
        .collect()
}

/// Detection scores for every row of `x`.
pub fn score_batch(model: &SdeNet, x: &Tensor, opts: PathOptions, mode: ScoreMode) -> Result<Vec<f64>> {
    let task = model.task();
    model
        .forward_paths(x, opts)?
        .iter()
        .map(|samples| detection_score(samples, task, mode))
        .collect()
}

/// Writes `input_id, aleatoric, epistemic, max_prob, prediction` rows.
pub fn write_reports(path: &Path, reports: &[UncertaintyReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| map_csv_io(path, e))?;
    w.write_record(["input_id", "aleatoric", "epistemic", "max_prob", "prediction"])?;
    for (i, r) in reports.iter().enumerate() {
        w.write_record([
            i.to_string(),
            r.aleatoric.to_string(),
            r.epistemic.to_string(),
            r.max_prob.map_or_else(String::new, |p| p.to_string()),
            r.prediction().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
