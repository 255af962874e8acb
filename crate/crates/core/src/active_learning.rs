//! Pool-based acquisition weighted by the epistemic to aleatoric ratio.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{gen_gapped_regression, gen_gapped_test, map_csv_io, Dataset, GappedRegression, Normalizer, Split};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, PathOptions, SdeNet, Task};
use crate::rng::{self, Domain};
use crate::training::{self, TrainConfig};
use crate::uncertainty::{self, MeanPrediction, UncertaintyReport};

/// `(1 + epistemic / aleatoric)^2`.
pub fn acquisition_weight(report: &UncertaintyReport) -> f64 {
    let ratio = report.epistemic / report.aleatoric;
    (1.0 + ratio) * (1.0 + ratio)
}

/// Draws `amount` distinct indices with probability proportional to `weights`,
/// successively renormalised over the remaining items.
pub fn weighted_sample(weights: &[f64], amount: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if amount > weights.len() {
        return Err(Error::InsufficientSamples {
            needed: amount,
            got: weights.len(),
        });
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(Error::numeric(format!("acquisition weight {w}")));
    }
    let picked = rand::seq::index::sample_weighted(rng, weights.len(), |i| weights[i], amount)
        .map_err(|e| Error::numeric(format!("weighted sampling: {e}")))?;
    let mut v = picked.into_vec();
    v.sort_unstable();
    Ok(v)
}

/// Labeled and unlabeled index sets into a fixed candidate dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolState {
    /// Every candidate point, with its withheld label.
    pub candidates: Dataset,
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

impl PoolState {
    pub fn new(candidates: Dataset, labeled: Vec<usize>) -> Result<Self> {
        let mut is_labeled = vec![false; candidates.len()];
        for &i in &labeled {
            if i >= candidates.len() || is_labeled[i] {
                return Err(Error::Config(format!("labeled index {i} is out of range or repeated")));
            }
            is_labeled[i] = true;
        }
        let unlabeled = (0..candidates.len()).filter(|&i| !is_labeled[i]).collect();
        Ok(PoolState {
            candidates,
            labeled,
            unlabeled,
        })
    }

    pub fn labeled_set(&self) -> Dataset {
        self.candidates.subset(&self.labeled, Split::Train)
    }

    pub fn unlabeled_set(&self) -> Dataset {
        self.candidates.subset(&self.unlabeled, Split::Pool)
    }

    /// Moves the given unlabeled positions into the labeled set.
    fn label(&mut self, positions: &[usize]) -> Vec<usize> {
        let chosen: Vec<usize> = positions.iter().map(|&p| self.unlabeled[p]).collect();
        let mut drop = vec![false; self.unlabeled.len()];
        positions.iter().for_each(|&p| drop[p] = true);
        let mut k = 0;
        self.unlabeled.retain(|_| {
            k += 1;
            !drop[k - 1]
        });
        self.labeled.extend(&chosen);
        chosen
    }
}

/// A selected point with the weight it was drawn under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Acquisition {
    pub candidate: usize,
    pub weight: f64,
}

/// Scores the unlabeled pool and moves `batch_size` sampled points into the
/// labeled set. `uniform` forces every weight to 1.
pub fn acquire_batch(
    pool: &mut PoolState,
    model: &SdeNet,
    normalizer: &Normalizer,
    batch_size: usize,
    opts: PathOptions,
    uniform: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Acquisition>> {
    if pool.unlabeled.len() < batch_size {
        return Err(Error::InsufficientSamples {
            needed: batch_size,
            got: pool.unlabeled.len(),
        });
    }
    let weights = if uniform {
        vec![1.0; pool.unlabeled.len()]
    } else {
        let x = normalizer.transform(&pool.unlabeled_set().features)?;
        uncertainty::evaluate(model, &x, opts)?
            .iter()
            .map(acquisition_weight)
            .collect()
    };
    let positions = weighted_sample(&weights, batch_size, rng)?;
    let picked_weights: Vec<f64> = positions.iter().map(|&p| weights[p]).collect();
    let chosen = pool.label(&positions);
    Ok(chosen
        .into_iter()
        .zip(picked_weights)
        .map(|(candidate, weight)| Acquisition { candidate, weight })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActiveLearningConfig {
    pub data: GappedRegression,
    pub test_size: usize,
    pub initial_labels: usize,
    pub batch_size: usize,
    pub rounds: usize,
    pub epochs_per_round: usize,
    pub warm_start: bool,
    pub paths: usize,
    pub uniform_acquisition: bool,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for ActiveLearningConfig {
    fn default() -> Self {
        ActiveLearningConfig {
            data: GappedRegression::default(),
            test_size: 500,
            initial_labels: 50,
            batch_size: 50,
            rounds: 5,
            epochs_per_round: 100,
            warm_start: true,
            paths: uncertainty::DEFAULT_TEST_PATHS,
            uniform_acquisition: false,
            model: ModelConfig::regression(1),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundResult {
    pub round: usize,
    pub labeled_count: usize,
    pub rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionRecord {
    pub round: usize,
    pub candidate: usize,
    pub x: f64,
    pub in_gap: bool,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActiveLearningResult {
    pub series: Vec<RoundResult>,
    pub acquisitions: Vec<AcquisitionRecord>,
    /// Fraction of the initial pool lying in the gap.
    pub pool_gap_fraction: f64,
}

impl ActiveLearningResult {
    pub fn gap_hits(&self) -> usize {
        self.acquisitions.iter().filter(|a| a.in_gap).count()
    }

    pub fn write_series(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| map_csv_io(path, e))?;
        w.write_record(["round", "labeled_count", "rmse"])?;
        for r in &self.series {
            w.write_record([r.round.to_string(), r.labeled_count.to_string(), r.rmse.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_acquisitions(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| map_csv_io(path, e))?;
        w.write_record(["round", "candidate", "x", "in_gap", "weight"])?;
        for a in &self.acquisitions {
            w.write_record([
                a.round.to_string(),
                a.candidate.to_string(),
                a.x.to_string(),
                a.in_gap.to_string(),
                a.weight.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Test RMSE in original target units of the path-averaged mean.
pub fn test_rmse(
    model: &SdeNet,
    test: &Dataset,
    features: &Normalizer,
    targets: &Normalizer,
    opts: PathOptions,
) -> Result<f64> {
    let x = features.transform(&test.features)?;
    let reports = uncertainty::evaluate(model, &x, opts)?;
    let means: Vec<f64> = reports
        .iter()
        .map(|r| match r.mean_prediction {
            MeanPrediction::Gaussian { mean, .. } => mean,
            MeanPrediction::Probabilities(_) => unreachable!("regression model"),
        })
        .collect();
    let pred = targets.inverse_values(&means);
    let se: f64 = pred.iter().zip(&test.targets).map(|(p, y)| (p - y) * (p - y)).sum();
    Ok((se / test.len() as f64).sqrt())
}

/// Runs the acquisition loop on the gapped regression curve. The initial
/// labels come from outside the gap; the pool holds the remaining outside
/// points plus every gap point; the test set is a fresh draw over the domain.
pub fn active_learning_experiment(config: &ActiveLearningConfig, seed: u64) -> Result<ActiveLearningResult> {
    if config.model.task != Task::Regression || config.model.input_dim != 1 {
        return Err(Error::Config("active learning needs a 1-D regression model".into()));
    }
    if config.initial_labels == 0 {
        return Err(Error::Config("initial_labels must be positive".into()));
    }
    let sample = gen_gapped_regression(&config.data, seed)?;
    let test = gen_gapped_test(&config.data, config.test_size, seed)?;
    if test.is_empty() {
        return Err(Error::EmptyDataset("active-learning test set".into()));
    }
    let n_out = sample.outside.len();
    if n_out < config.initial_labels {
        return Err(Error::InsufficientSamples {
            needed: config.initial_labels,
            got: n_out,
        });
    }
    let candidates = sample.outside.concat(&sample.gap)?;
    let mut rng = rng::stream(seed, Domain::Acquisition, 0, 0);
    let initial = weighted_sample(&vec![1.0; n_out], config.initial_labels, &mut rng)?;
    let mut pool = PoolState::new(candidates, initial)?;
    let pool_gap_fraction = sample.gap.len() as f64 / pool.unlabeled.len().max(1) as f64;

    let labeled0 = pool.labeled_set();
    let fnorm = Normalizer::fit(&labeled0.features)?;
    let tnorm = Normalizer::fit_values(&labeled0.targets)?;
    let opts = PathOptions {
        paths: config.paths,
        seed,
        sigma_max: config.model.sigma_max_test,
        first_input: 0,
    };

    let mut model = SdeNet::new(config.model.clone(), seed)?;
    let mut series = Vec::with_capacity(config.rounds + 1);
    let mut acquisitions = Vec::new();
    for round in 0..=config.rounds {
        if !config.warm_start && round > 0 {
            model = SdeNet::new(config.model.clone(), seed)?;
        }
        let train_set = fnorm.apply(&pool.labeled_set(), Some(&tnorm))?;
        let train_config = TrainConfig {
            epochs: config.epochs_per_round,
            seed: seed ^ ((round as u64) << 40),
            ..config.train.clone()
        };
        training::train(&mut model, &train_set, None, &train_config)
            .map_err(|e| e.with_context(format!("active-learning round {round}")))?;
        series.push(RoundResult {
            round,
            labeled_count: pool.labeled.len(),
            rmse: test_rmse(&model, &test, &fnorm, &tnorm, opts)?,
        });
        if round < config.rounds {
            let picked = acquire_batch(
                &mut pool,
                &model,
                &fnorm,
                config.batch_size,
                opts,
                config.uniform_acquisition,
                &mut rng,
            )?;
            for a in picked {
                let x = pool.candidates.features.get(a.candidate, 0);
                acquisitions.push(AcquisitionRecord {
                    round,
                    candidate: a.candidate,
                    x,
                    in_gap: config.data.in_gap(x),
                    weight: a.weight,
                });
            }
        }
    }
    Ok(ActiveLearningResult {
        series,
        acquisitions,
        pool_gap_fraction,
    })
}

/// One-sided binomial test `P(X >= hits)` under success probability `p0`.
pub fn binomial_p_value(hits: u64, trials: u64, p0: f64) -> Result<f64> {
    use statrs::distribution::{Binomial, DiscreteCDF};
    let b = Binomial::new(p0, trials).map_err(|e| Error::Config(format!("binomial test: {e}")))?;
    Ok(if hits == 0 { 1.0 } else { b.sf(hits - 1) })
}
