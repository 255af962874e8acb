//! Alternating optimisation: the drift side (`h1`, `f`, `h2`) on the task loss,
//! then the diffusion net on in-distribution versus perturbed inputs.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Sgd, Tensor};
use crate::data::{map_csv_io, Dataset};
use crate::error::{Error, Result};
use crate::model::{noise_name, PathOptions, SdeNet, Task, Trainable};
use crate::rng::{self, Domain};
use crate::uncertainty;

/// Piecewise-constant learning rate: multiplied by `gamma` at each milestone epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    #[serde(default)]
    pub milestones: Vec<usize>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_gamma() -> f64 {
    0.1
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        LrSchedule {
            initial: lr,
            milestones: Vec::new(),
            gamma: default_gamma(),
        }
    }

    pub fn at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.initial * self.gamma.powi(passed as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionObjective {
    /// `mean g(ID) - mean g(OOD)`.
    Literal,
    /// Binary cross-entropy on `g / sigma_max` with targets 0 (ID) and 1 (OOD).
    Bce,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub drift_lr: LrSchedule,
    pub diffusion_lr: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub ood_noise_variance: f64,
    pub paths_per_example: usize,
    pub diffusion_objective: DiffusionObjective,
    /// Paths used for the per-epoch validation metric.
    pub val_paths: usize,
    /// Global gradient-norm bound for both optimisers; unbounded when absent.
    pub max_grad_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 128,
            drift_lr: LrSchedule::constant(0.05),
            diffusion_lr: LrSchedule::constant(0.01),
            momentum: 0.9,
            weight_decay: 5e-4,
            ood_noise_variance: 4.0,
            paths_per_example: 1,
            diffusion_objective: DiffusionObjective::Literal,
            val_paths: 1,
            max_grad_norm: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.ood_noise_variance > 0.0 && self.ood_noise_variance.is_finite()) {
            return Err(Error::Config(format!(
                "ood_noise_variance must be positive, got {}",
                self.ood_noise_variance
            )));
        }
        if self.paths_per_example == 0 || self.val_paths == 0 {
            return Err(Error::Config("path counts must be at least 1".into()));
        }
        for s in [&self.drift_lr, &self.diffusion_lr] {
            if !(s.gamma > 0.0 && s.gamma.is_finite()) {
                return Err(Error::Config(format!("lr decay factor must be positive, got {}", s.gamma)));
            }
        }
        Sgd::new(self.drift_lr.initial, self.momentum, self.weight_decay)?.with_max_grad_norm(self.max_grad_norm)?;
        Sgd::new(self.diffusion_lr.initial, self.momentum, self.weight_decay)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub g_id: f64,
    pub g_ood: f64,
    /// Accuracy (classification) or RMSE in training units (regression).
    pub val_metric: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn last(&self) -> Option<&EpochLog> {
        self.epochs.last()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| map_csv_io(path, e))?;
        w.write_record(["epoch", "loss", "g_id", "g_ood", "val_metric"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.loss.to_string(),
                e.g_id.to_string(),
                e.g_ood.to_string(),
                e.val_metric.map_or_else(String::new, |v| v.to_string()),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Pseudo out-of-distribution batch `x + eps`, `eps ~ N(0, variance I)`.
pub fn ood_perturb(x: &Tensor, variance: f64, rng: &mut rand_chacha::ChaCha8Rng) -> Result<Tensor> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::Config(format!("perturbation variance must be positive, got {variance}")));
    }
    let sd = variance.sqrt();
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v += sd * rng::standard_normal(rng));
    Ok(out)
}

/// Brownian increments for a training batch: `noise[path][step]`.
pub fn train_noise(model: &SdeNet, seed: u64, row_keys: &[u64], paths: usize) -> Vec<Vec<Tensor>> {
    let steps = model.config().solver.steps;
    let d = model.config().state_dim;
    (0..paths as u64)
        .map(|p| {
            (0..steps as u64)
                .map(|k| rng::step_noise(seed, Domain::TrainNoise, row_keys, p, k, d))
                .collect()
        })
        .collect()
}

/// Graph for the mean task loss of one path with the given parameter scope.
struct DriftGraph {
    graph: Graph,
    loss: crate::autodiff::NodeId,
    noise_names: Vec<String>,
}

fn drift_graph(model: &SdeNet, scope: Trainable) -> DriftGraph {
    let mut g = Graph::new();
    let x = g.input("x");
    let y = g.input("y");
    let x0 = model.build_head(&mut g, x, scope);
    let diff = model.build_diffusion(&mut g, x0, model.config().sigma_max_train, scope);
    let noise = model.noise_inputs(&mut g);
    let xt = model.build_path(&mut g, x0, diff, &noise, scope);
    let out = model.build_output(&mut g, xt, scope);
    let per_row = model.build_task_loss(&mut g, out, y);
    let loss = g.mean(per_row);
    DriftGraph {
        graph: g,
        loss,
        noise_names: (0..model.config().solver.steps).map(noise_name).collect(),
    }
}

fn run_drift(dg: &mut DriftGraph, model: &SdeNet, x: &Tensor, y: &Tensor, noise: &[Tensor]) -> Result<f64> {
    let mut bindings: Vec<(&str, &Tensor)> = vec![("x", x), ("y", y)];
    bindings.extend(dg.noise_names.iter().map(String::as_str).zip(noise));
    dg.graph.forward(model.params(), &bindings)?;
    Ok(dg.graph.value(dg.loss)?.item())
}

/// Mean task loss averaged over the supplied paths, without updating anything.
pub fn drift_loss(model: &SdeNet, x: &Tensor, y: &Tensor, noise: &[Vec<Tensor>]) -> Result<f64> {
    let mut dg = drift_graph(model, Trainable::NONE);
    let mut total = 0.0;
    for path in noise {
        total += run_drift(&mut dg, model, x, y, path)?;
    }
    Ok(total / noise.len() as f64)
}

/// One update of `h1`, `f` and `h2` on the task loss. Returns the loss before the update.
pub fn drift_step(
    model: &mut SdeNet,
    opt: &mut Sgd,
    x: &Tensor,
    y: &Tensor,
    noise: &[Vec<Tensor>],
) -> Result<f64> {
    if x.rows() == 0 {
        return Err(Error::EmptyDataset("drift step on an empty batch".into()));
    }
    let mut dg = drift_graph(model, Trainable::DRIFT_SIDE);
    let mut total = 0.0;
    let mut grads = None;
    for path in noise {
        total += run_drift(&mut dg, model, x, y, path)?;
        let g = dg.graph.backward(dg.loss)?;
        match &mut grads {
            None => grads = Some(g),
            Some(acc) => acc.accumulate(&g),
        }
    }
    let mut grads = grads.ok_or_else(|| Error::Config("drift step needs at least one path".into()))?;
    let paths = noise.len() as f64;
    grads.scale(1.0 / paths);
    let ids = model.param_ids(Trainable::DRIFT_SIDE);
    opt.step(model.params_mut(), &grads, &ids)?;
    Ok(total / paths)
}

/// Values logged by a diffusion step, measured before the update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffusionStats {
    pub g_id: f64,
    pub g_ood: f64,
    /// The minimised objective.
    pub objective: f64,
}

struct DiffusionGraph {
    graph: Graph,
    g_id: crate::autodiff::NodeId,
    g_ood: crate::autodiff::NodeId,
    objective: crate::autodiff::NodeId,
}

fn diffusion_graph(model: &SdeNet, kind: DiffusionObjective, scope: Trainable) -> DiffusionGraph {
    let sigma_max = model.config().sigma_max_train;
    let mut g = Graph::new();
    let side = |g: &mut Graph, name: &str| {
        let x = g.input(name);
        let x0 = model.build_head(g, x, Trainable::NONE);
        let logit = model.build_diffusion_logit(g, x0, scope);
        let s = g.sigmoid(logit);
        let value = g.scale(s, sigma_max);
        (logit, g.mean(value))
    };
    let (logit_id, g_id) = side(&mut g, "x_id");
    let (logit_ood, g_ood) = side(&mut g, "x_ood");
    let objective = match kind {
        DiffusionObjective::Literal => g.sub(g_id, g_ood),
        DiffusionObjective::Bce => {
            let id_term = g.softplus(logit_id);
            let id_term = g.mean(id_term);
            let neg = g.scale(logit_ood, -1.0);
            let ood_term = g.softplus(neg);
            let ood_term = g.mean(ood_term);
            g.add(id_term, ood_term)
        }
    };
    DiffusionGraph {
        graph: g,
        g_id,
        g_ood,
        objective,
    }
}

fn run_diffusion(dg: &mut DiffusionGraph, model: &SdeNet, x_id: &Tensor, x_ood: &Tensor) -> Result<DiffusionStats> {
    dg.graph.forward(model.params(), &[("x_id", x_id), ("x_ood", x_ood)])?;
    Ok(DiffusionStats {
        g_id: dg.graph.value(dg.g_id)?.item(),
        g_ood: dg.graph.value(dg.g_ood)?.item(),
        objective: dg.graph.value(dg.objective)?.item(),
    })
}

pub fn diffusion_objective(
    model: &SdeNet,
    x_id: &Tensor,
    x_ood: &Tensor,
    kind: DiffusionObjective,
) -> Result<DiffusionStats> {
    let mut dg = diffusion_graph(model, kind, Trainable::NONE);
    run_diffusion(&mut dg, model, x_id, x_ood)
}

/// One update of the diffusion net only; `h1` is held fixed.
pub fn diffusion_step(
    model: &mut SdeNet,
    opt: &mut Sgd,
    x_id: &Tensor,
    x_ood: &Tensor,
    kind: DiffusionObjective,
) -> Result<DiffusionStats> {
    if x_id.rows() == 0 || x_ood.rows() == 0 {
        return Err(Error::EmptyDataset("diffusion step on an empty batch".into()));
    }
    if model.config().sigma_max_train == 0.0 {
        return Err(Error::Config("diffusion step with sigma_max_train = 0".into()));
    }
    let mut dg = diffusion_graph(model, kind, Trainable::DIFFUSION);
    let stats = run_diffusion(&mut dg, model, x_id, x_ood)?;
    let grads = dg.graph.backward(dg.objective)?;
    let ids = model.param_ids(Trainable::DIFFUSION);
    opt.step(model.params_mut(), &grads, &ids)?;
    Ok(stats)
}

/// Task loss plus `mean g(ID) - mean g(OOD)` evaluated in one pass.
pub fn full_objective(model: &SdeNet, x: &Tensor, y: &Tensor, x_ood: &Tensor, noise: &[Vec<Tensor>]) -> Result<f64> {
    let sigma_max = model.config().sigma_max_train;
    let mut g = Graph::new();
    let xin = g.input("x");
    let yin = g.input("y");
    let oin = g.input("x_ood");
    let x0 = model.build_head(&mut g, xin, Trainable::NONE);
    let diff = model.build_diffusion(&mut g, x0, sigma_max, Trainable::NONE);
    let z = model.noise_inputs(&mut g);
    let xt = model.build_path(&mut g, x0, diff, &z, Trainable::NONE);
    let out = model.build_output(&mut g, xt, Trainable::NONE);
    let per_row = model.build_task_loss(&mut g, out, yin);
    let task = g.mean(per_row);
    let o0 = model.build_head(&mut g, oin, Trainable::NONE);
    let gap_node = diff.map(|gi| {
        let go = model
            .build_diffusion(&mut g, o0, sigma_max, Trainable::NONE)
            .expect("sigma_max > 0");
        let mi = g.mean(gi);
        let mo = g.mean(go);
        g.sub(mi, mo)
    });
    let names: Vec<String> = (0..model.config().solver.steps).map(noise_name).collect();
    let mut total = 0.0;
    let mut gap = 0.0;
    for (p, path) in noise.iter().enumerate() {
        let mut bindings: Vec<(&str, &Tensor)> = vec![("x", x), ("y", y), ("x_ood", x_ood)];
        bindings.extend(names.iter().map(String::as_str).zip(path));
        g.forward(model.params(), &bindings)?;
        total += g.value(task)?.item();
        if let (0, Some(d)) = (p, gap_node) {
            gap = g.value(d)?.item();
        }
    }
    let task_loss = total / noise.len() as f64;
    Ok(task_loss + gap)
}

/// Accuracy or RMSE of the path-averaged prediction.
pub fn evaluate_metric(model: &SdeNet, data: &Dataset, paths: usize, sigma_max: f64, seed: u64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("evaluation set".into()));
    }
    let opts = PathOptions {
        paths,
        seed,
        sigma_max,
        first_input: 0,
    };
    let samples = model.forward_paths(&data.features, opts)?;
    let n = data.len() as f64;
    match model.task() {
        Task::Classification { .. } => {
            let mut correct = 0usize;
            for (s, y) in samples.iter().zip(&data.targets) {
                let p = uncertainty::mean_probabilities(s)?;
                correct += usize::from(uncertainty::argmax(&p) as f64 == *y);
            }
            Ok(correct as f64 / n)
        }
        Task::Regression => {
            let mut se = 0.0;
            for (s, y) in samples.iter().zip(&data.targets) {
                let mean = s
                    .iter()
                    .map(|p| match p.output {
                        crate::model::TaskOutput::Gaussian { mean, .. } => mean,
                        _ => unreachable!("regression model"),
                    })
                    .sum::<f64>()
                    / s.len() as f64;
                se += (mean - y) * (mean - y);
            }
            Ok((se / n).sqrt())
        }
    }
}

fn batches(order: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(size)
}

/// Trains with pseudo out-of-distribution inputs made by perturbing each
/// diffusion minibatch.
pub fn train(model: &mut SdeNet, train_set: &Dataset, val: Option<&Dataset>, config: &TrainConfig) -> Result<TrainLog> {
    train_with_ood(model, train_set, val, None, config)
}

/// As [`train`], optionally drawing the diffusion step's OOD batches from an
/// external set instead of perturbation.
pub fn train_with_ood(
    model: &mut SdeNet,
    train_set: &Dataset,
    val: Option<&Dataset>,
    external_ood: Option<&Tensor>,
    config: &TrainConfig,
) -> Result<TrainLog> {
    config.validate()?;
    let mut log = TrainLog::default();
    if config.epochs == 0 {
        return Ok(log);
    }
    if train_set.is_empty() {
        return Err(Error::EmptyDataset("training set".into()));
    }
    if train_set.dim() != model.config().input_dim {
        return Err(Error::shape(
            "train",
            format!("model expects {} features, data has {}", model.config().input_dim, train_set.dim()),
        ));
    }
    if let Some(o) = external_ood {
        if o.rows() == 0 || o.cols() != train_set.dim() {
            return Err(Error::shape("train", format!("external OOD set has shape {:?}", o.shape())));
        }
    }
    let learn_diffusion = model.config().sigma_max_train > 0.0;
    let mut drift_opt =
        Sgd::new(config.drift_lr.initial, config.momentum, config.weight_decay)?.with_max_grad_norm(config.max_grad_norm)?;
    let mut diff_opt = Sgd::new(config.diffusion_lr.initial, config.momentum, config.weight_decay)?
        .with_max_grad_norm(config.max_grad_norm)?;
    let n = train_set.len();
    let y_all = train_set.target_column();

    for epoch in 0..config.epochs {
        drift_opt.learning_rate = config.drift_lr.at(epoch);
        diff_opt.learning_rate = config.diffusion_lr.at(epoch);
        let e = epoch as u64;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(config.seed, Domain::Shuffle, e, 0));
        let mut diff_order: Vec<usize> = (0..n).collect();
        diff_order.shuffle(&mut rng::stream(config.seed, Domain::DiffusionBatch, e, 0));
        let mut ood_rng = rng::stream(config.seed, Domain::OodNoise, e, 0);

        let (mut loss_sum, mut g_id_sum, mut g_ood_sum) = (0.0, 0.0, 0.0);
        let mut iterations = 0usize;
        for (it, (batch, diff_batch)) in batches(&order, config.batch_size)
            .zip(batches(&diff_order, config.batch_size))
            .enumerate()
        {
            let context = |err: Error| err.with_context(format!("epoch {epoch} iteration {it}"));
            let x = train_set.features.select_rows(batch);
            let y = y_all.select_rows(batch);
            let keys: Vec<u64> = batch.iter().map(|&i| (e << 32) | i as u64).collect();
            let noise = train_noise(model, config.seed, &keys, config.paths_per_example);
            loss_sum += drift_step(model, &mut drift_opt, &x, &y, &noise).map_err(context)?;

            if learn_diffusion {
                let x_id = train_set.features.select_rows(diff_batch);
                let x_ood = match external_ood {
                    Some(pool) => {
                        let picks: Vec<usize> = (0..diff_batch.len())
                            .map(|j| (it * config.batch_size + j + epoch * n) % pool.rows())
                            .collect();
                        pool.select_rows(&picks)
                    }
                    None => ood_perturb(&x_id, config.ood_noise_variance, &mut ood_rng)?,
                };
                let stats = diffusion_step(model, &mut diff_opt, &x_id, &x_ood, config.diffusion_objective)
                    .map_err(context)?;
                g_id_sum += stats.g_id;
                g_ood_sum += stats.g_ood;
            }
            iterations += 1;
        }
        let k = iterations as f64;
        let val_metric = match val {
            Some(v) if !v.is_empty() => Some(evaluate_metric(
                model,
                v,
                config.val_paths,
                model.config().sigma_max_train,
                config.seed,
            )?),
            _ => None,
        };
        log.epochs.push(EpochLog {
            epoch,
            loss: loss_sum / k,
            g_id: g_id_sum / k,
            g_ood: g_ood_sum / k,
            val_metric,
        });
    }
    Ok(log)
}
