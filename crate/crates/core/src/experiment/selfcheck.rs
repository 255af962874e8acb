//! Compares the fast metric implementations with the brute-force versions on
//! random score sets.

use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::metrics::{self, brute_force, ScoredSample};
use crate::rng::{self, Domain};

pub const DEFAULT_SETS: usize = 200;
pub const MAX_SET_SIZE: usize = 100;
pub const TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, Serialize)]
pub struct MetricCheck {
    pub metric: &'static str,
    pub sets: usize,
    pub max_abs_diff: f64,
    pub passed: bool,
}

/// Random labelled scores with at least one of each class. Every other set is
/// drawn from a coarse grid so tie groups are exercised.
pub fn random_set(seed: u64, index: u64) -> Vec<ScoredSample> {
    let mut r = rng::stream(seed, Domain::Selfcheck, index, 0);
    let n = r.random_range(2..=MAX_SET_SIZE);
    let coarse = index % 2 == 1;
    let mut samples: Vec<ScoredSample> = (0..n)
        .map(|_| {
            let s: f64 = r.random();
            let score = if coarse { (s * 8.0).floor() / 8.0 } else { s };
            ScoredSample::new(score, r.random_bool(0.5))
        })
        .collect();
    samples[0].positive = true;
    samples[1].positive = false;
    samples
}

/// Runs every metric on `sets` random score sets.
pub fn run(sets: usize, seed: u64) -> Result<Vec<MetricCheck>> {
    type Pair = (&'static str, fn(&[ScoredSample]) -> Result<f64>, fn(&[ScoredSample]) -> Result<f64>);
    let pairs: [Pair; 5] = [
        ("auroc", metrics::auroc, brute_force::auroc),
        ("tnr_at_tpr95", |s| metrics::tnr_at_tpr(s, 0.95), |s| brute_force::tnr_at_tpr(s, 0.95)),
        ("aupr_in", metrics::aupr_in, brute_force::aupr_in),
        ("aupr_out", metrics::aupr_out, brute_force::aupr_out),
        ("detection_accuracy", metrics::detection_accuracy, brute_force::detection_accuracy),
    ];
    let mut worst = [0.0f64; 6];
    for i in 0..sets as u64 {
        let set = random_set(seed, i);
        for (k, (_, fast, slow)) in pairs.iter().enumerate() {
            worst[k] = worst[k].max((fast(&set)? - slow(&set)?).abs());
        }
        let conf: Vec<f64> = set.iter().map(|s| s.score).collect();
        let correct: Vec<bool> = set.iter().map(|s| s.positive).collect();
        let d = metrics::ece(&conf, &correct, 10)? - brute_force::ece(&conf, &correct, 10)?;
        worst[5] = worst[5].max(d.abs());
    }
    let names = pairs.iter().map(|p| p.0).chain(std::iter::once("ece"));
    Ok(names
        .zip(worst)
        .map(|(metric, max_abs_diff)| MetricCheck {
            metric,
            sets,
            max_abs_diff,
            passed: max_abs_diff <= TOLERANCE,
        })
        .collect())
}
