//! End-to-end experiments driven by an [`ExperimentConfig`].
//!
//! Every runner is a pure function of the configuration and its seed list. It
//! writes `results.json`, `results.csv`, `raw_scores.csv` and the effective
//! configuration into the output directory, plus per-seed checkpoints and logs
//! under `seed-<s>/`.

pub mod config;
pub mod output;
mod runners;
pub mod selfcheck;

pub use config::{ActiveSpec, AttackSpec, DatasetSpec, EvalSpec, ExperimentConfig, ModelSpec, OodSpec, VisualizeSpec};
pub use output::{MethodResult, RawScore, Results, SeedMetrics, Summary, SCHEMA_VERSION};
pub use runners::{prepare_data, Prepared};

use std::fs;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use output::OutputDir;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Train,
    EvalOod,
    EvalMisclass,
    Attack,
    ActiveLearn,
    Visualize,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Train => "train",
            ExperimentKind::EvalOod => "eval-ood",
            ExperimentKind::EvalMisclass => "eval-misclass",
            ExperimentKind::Attack => "attack",
            ExperimentKind::ActiveLearn => "active-learn",
            ExperimentKind::Visualize => "visualize",
        }
    }
}

/// Runs one experiment and writes all of its outputs.
pub fn run(kind: ExperimentKind, config: &ExperimentConfig) -> Result<Results> {
    config.validate()?;
    let out = OutputDir::create(&config.output_dir)?;
    let effective = out.file("config.effective.toml");
    fs::write(&effective, config.to_toml()?).map_err(|e| Error::io(&effective, e))?;
    let (results, raw) = match kind {
        ExperimentKind::Train => runners::train(config, &out)?,
        ExperimentKind::EvalOod => runners::ood(config, &out)?,
        ExperimentKind::EvalMisclass => runners::misclassification(config, &out)?,
        ExperimentKind::Attack => runners::attack(config, &out)?,
        ExperimentKind::ActiveLearn => runners::active_learning(config, &out)?,
        ExperimentKind::Visualize => runners::visualize(config, &out)?,
    };
    results.write_json(&out.file("results.json"))?;
    results.write_csv(&out.file("results.csv"))?;
    output::write_raw_scores(&out.file("raw_scores.csv"), &raw)?;
    Ok(results)
}

/// Maps `f` over the seeds, in parallel when configured; output order always
/// follows the seed list.
pub(crate) fn for_each_seed<T, F>(config: &ExperimentConfig, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let wrapped = |&seed: &u64| f(seed).map_err(|e| e.with_context(format!("seed {seed}")));
    if config.parallel {
        config.seeds.par_iter().map(wrapped).collect()
    } else {
        config.seeds.iter().map(wrapped).collect()
    }
}
