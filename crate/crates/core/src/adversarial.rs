//! L-infinity gradient-sign attacks and adversarial-input detection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::metrics::{self, DetectionReport, ScoredSample};
use crate::model::{noise_name, PathOptions, SdeNet, Trainable};
use crate::rng::{self, Domain};
use crate::uncertainty::{self, ScoreMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Fgsm,
    Pgd,
}

/// Per-feature input domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClampRange {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ClampRange {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let c = ClampRange { lo, hi };
        c.validate()?;
        Ok(c)
    }

    /// Observed per-column minimum and maximum.
    pub fn observed(x: &Tensor) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::EmptyDataset("cannot infer clamp range from zero rows".into()));
        }
        let d = x.cols();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for i in 0..x.rows() {
            for (j, v) in x.row(i).iter().enumerate() {
                lo[j] = lo[j].min(*v);
                hi[j] = hi[j].max(*v);
            }
        }
        for j in 0..d {
            if lo[j] == hi[j] {
                lo[j] -= 0.5;
                hi[j] += 0.5;
            }
        }
        Self::new(lo, hi)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.len() != self.hi.len() {
            return Err(Error::Config("clamp bounds differ in length".into()));
        }
        if let Some(j) = (0..self.lo.len()).find(|&j| self.lo[j].partial_cmp(&self.hi[j]) != Some(std::cmp::Ordering::Less)) {
            return Err(Error::Config(format!(
                "clamp range for feature {j} is empty: [{}, {}]",
                self.lo[j], self.hi[j]
            )));
        }
        Ok(())
    }

    fn apply(&self, x: &mut Tensor) {
        let d = self.lo.len();
        for (k, v) in x.data_mut().iter_mut().enumerate() {
            *v = v.clamp(self.lo[k % d], self.hi[k % d]);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub epsilon: f64,
    pub step_size: f64,
    pub iterations: usize,
    /// `None` means the observed range of the attacked inputs.
    #[serde(default)]
    pub clamp: Option<ClampRange>,
    #[serde(default)]
    pub random_start: bool,
    /// Paths averaged for the input gradient; 1 is a single frozen-noise pass.
    #[serde(default = "one")]
    pub gradient_paths: usize,
    /// Diffusion bound during the gradient pass; `None` uses the test bound.
    #[serde(default)]
    pub sigma_max: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl AttackConfig {
    pub fn fgsm(epsilon: f64) -> Self {
        AttackConfig {
            kind: AttackKind::Fgsm,
            epsilon,
            step_size: epsilon,
            iterations: 1,
            clamp: None,
            random_start: false,
            gradient_paths: 1,
            sigma_max: None,
            seed: 0,
        }
    }

    pub fn pgd(epsilon: f64, step_size: f64, iterations: usize) -> Self {
        AttackConfig {
            kind: AttackKind::Pgd,
            step_size,
            iterations,
            ..Self::fgsm(epsilon)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        if self.kind == AttackKind::Pgd {
            if !(self.step_size > 0.0 && self.step_size.is_finite()) {
                return Err(Error::Config(format!("PGD step size must be positive, got {}", self.step_size)));
            }
            if self.iterations == 0 {
                return Err(Error::Config("PGD needs at least one iteration".into()));
            }
        }
        if self.gradient_paths == 0 {
            return Err(Error::Config("gradient_paths must be at least 1".into()));
        }
        if let Some(c) = &self.clamp {
            c.validate()?;
        }
        Ok(())
    }
}

/// `d L / d x` for the summed task loss over the batch, averaged over `paths`
/// frozen-noise passes keyed by `seed`.
pub fn input_gradient(model: &SdeNet, x: &Tensor, y: &Tensor, sigma_max: f64, paths: usize, seed: u64) -> Result<Tensor> {
    let mut g = Graph::new();
    let xin = g.input_with_grad("x");
    let yin = g.input("y");
    let x0 = model.build_head(&mut g, xin, Trainable::NONE);
    let diff = model.build_diffusion(&mut g, x0, sigma_max, Trainable::NONE);
    let z = model.noise_inputs(&mut g);
    let xt = model.build_path(&mut g, x0, diff, &z, Trainable::NONE);
    let out = model.build_output(&mut g, xt, Trainable::NONE);
    let per_row = model.build_task_loss(&mut g, out, yin);
    let loss = g.sum(per_row);

    let steps = model.config().solver.steps;
    let names: Vec<String> = (0..steps).map(noise_name).collect();
    let keys: Vec<u64> = (0..x.rows() as u64).collect();
    let mut total = Tensor::zeros(x.shape());
    for p in 0..paths as u64 {
        let noise: Vec<Tensor> = (0..steps as u64)
            .map(|k| rng::step_noise(seed, Domain::Attack, &keys, p, k, model.config().state_dim))
            .collect();
        let mut bindings: Vec<(&str, &Tensor)> = vec![("x", x), ("y", y)];
        bindings.extend(names.iter().map(String::as_str).zip(&noise));
        g.forward(model.params(), &bindings)?;
        let grads = g.backward(loss)?;
        let gx = grads
            .input("x")
            .ok_or_else(|| Error::State("input gradient missing".into()))?;
        for (t, v) in total.data_mut().iter_mut().zip(gx.data()) {
            *t += v;
        }
    }
    let total = total.map(|v| v / paths as f64);
    if !total.is_finite() {
        return Err(Error::numeric("input gradient"));
    }
    Ok(total)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `x <- proj_ball(clamp(x + step * sign(grad)))` around `origin`.
fn signed_step(x: &Tensor, grad: &Tensor, origin: &Tensor, step: f64, epsilon: f64, clamp: &ClampRange) -> Tensor {
    let mut next = x.clone();
    for (v, g) in next.data_mut().iter_mut().zip(grad.data()) {
        *v += step * sign(*g);
    }
    clamp.apply(&mut next);
    project(&mut next, origin, epsilon);
    next
}

fn project(x: &mut Tensor, origin: &Tensor, epsilon: f64) {
    for (v, o) in x.data_mut().iter_mut().zip(origin.data()) {
        *v = v.clamp(o - epsilon, o + epsilon);
    }
}

fn resolve_clamp(config: &AttackConfig, x: &Tensor) -> Result<ClampRange> {
    let clamp = match &config.clamp {
        Some(c) => c.clone(),
        None => ClampRange::observed(x)?,
    };
    if clamp.lo.len() != x.cols() {
        return Err(Error::shape(
            "attack clamp",
            format!("{} bounds for {} features", clamp.lo.len(), x.cols()),
        ));
    }
    Ok(clamp)
}

pub fn fgsm(model: &SdeNet, x: &Tensor, y: &Tensor, epsilon: f64, clamp: &ClampRange) -> Result<Tensor> {
    let config = AttackConfig {
        clamp: Some(clamp.clone()),
        ..AttackConfig::fgsm(epsilon)
    };
    attack(model, x, y, &config)
}

pub fn pgd(model: &SdeNet, x: &Tensor, y: &Tensor, config: &AttackConfig) -> Result<Tensor> {
    attack(
        model,
        x,
        y,
        &AttackConfig {
            kind: AttackKind::Pgd,
            ..config.clone()
        },
    )
}

/// Runs the configured attack. FGSM is one signed step of size epsilon.
pub fn attack(model: &SdeNet, x: &Tensor, y: &Tensor, config: &AttackConfig) -> Result<Tensor> {
    config.validate()?;
    let clamp = resolve_clamp(config, x)?;
    let sigma_max = config.sigma_max.unwrap_or(model.config().sigma_max_test);
    let grad = |x: &Tensor| input_gradient(model, x, y, sigma_max, config.gradient_paths, config.seed);
    match config.kind {
        AttackKind::Fgsm => {
            if config.epsilon == 0.0 {
                return Ok(x.clone());
            }
            Ok(signed_step(x, &grad(x)?, x, config.epsilon, config.epsilon, &clamp))
        }
        AttackKind::Pgd => {
            let mut current = x.clone();
            if config.random_start && config.epsilon > 0.0 {
                let mut r = rng::stream(config.seed, Domain::Attack, u64::MAX, 0);
                for v in current.data_mut() {
                    *v += r.random_range(-config.epsilon..=config.epsilon);
                }
                clamp.apply(&mut current);
                project(&mut current, x, config.epsilon);
            }
            for it in 0..config.iterations {
                let g = grad(&current).map_err(|e| e.with_context(format!("PGD iteration {it}")))?;
                current = signed_step(&current, &g, x, config.step_size, config.epsilon, &clamp);
            }
            Ok(current)
        }
    }
}

/// Scores where higher means "clean": max-prob as is, epistemic negated.
pub fn positive_scores(model: &SdeNet, x: &Tensor, opts: PathOptions, mode: ScoreMode) -> Result<Vec<f64>> {
    let s = uncertainty::score_batch(model, x, opts, mode)?;
    Ok(match mode {
        ScoreMode::MaxProb => s,
        ScoreMode::Epistemic => s.into_iter().map(|v| -v).collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialDetection {
    pub report: DetectionReport,
    pub clean_scores: Vec<f64>,
    pub adversarial_scores: Vec<f64>,
}

/// Clean inputs are positives, their attacked versions negatives. Both sets are
/// scored with the same path streams, so an unchanged input scores identically.
pub fn adversarial_detection_experiment(
    model: &SdeNet,
    x: &Tensor,
    y: &Tensor,
    config: &AttackConfig,
    mode: ScoreMode,
    opts: PathOptions,
) -> Result<AdversarialDetection> {
    let clean_scores = positive_scores(model, x, opts, mode)?;
    detect_against(model, x, y, config, mode, opts, clean_scores)
}

fn detect_against(
    model: &SdeNet,
    x: &Tensor,
    y: &Tensor,
    config: &AttackConfig,
    mode: ScoreMode,
    opts: PathOptions,
    clean_scores: Vec<f64>,
) -> Result<AdversarialDetection> {
    let adv = attack(model, x, y, config)?;
    let adversarial_scores = positive_scores(model, &adv, opts, mode)?;
    let samples: Vec<ScoredSample> = metrics::scored(&clean_scores, &adversarial_scores);
    Ok(AdversarialDetection {
        report: DetectionReport::compute(&samples)?,
        clean_scores,
        adversarial_scores,
    })
}

/// Detection reports across an epsilon grid, reusing the clean scores.
pub fn epsilon_sweep(
    model: &SdeNet,
    x: &Tensor,
    y: &Tensor,
    base: &AttackConfig,
    epsilons: &[f64],
    mode: ScoreMode,
    opts: PathOptions,
) -> Result<Vec<(f64, AdversarialDetection)>> {
    let clean = positive_scores(model, x, opts, mode)?;
    epsilons
        .iter()
        .map(|&eps| {
            let config = AttackConfig {
                epsilon: eps,
                step_size: if base.kind == AttackKind::Fgsm { eps } else { base.step_size },
                ..base.clone()
            };
            detect_against(model, x, y, &config, mode, opts, clean.clone()).map(|d| (eps, d))
        })
        .collect()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: a.len().min(b.len()),
        });
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let (mut va, mut vb) = (0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::UndefinedMetric("rank correlation of a constant series".into()));
    }
    Ok(cov / (va * vb).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_of_monotone_series() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn clamp_validation() {
        assert!(ClampRange::new(vec![0.0], vec![0.0]).is_err());
        let c = ClampRange::observed(&Tensor::matrix(2, 2, vec![0.0, 1.0, 2.0, 1.0]).unwrap()).unwrap();
        assert_eq!(c.lo, vec![0.0, 0.5]);
        assert_eq!(c.hi, vec![2.0, 1.5]);
    }
}
