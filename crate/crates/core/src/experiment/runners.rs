use std::collections::BTreeMap;
use std::path::Path;

use crate::active_learning::{self, ActiveLearningConfig, ActiveLearningResult};
use crate::adversarial::{self, AttackConfig, AttackKind, ClampRange};
use crate::autodiff::Tensor;
use crate::data::{self, Dataset, LabelKind, Normalizer, Split};
use crate::ensemble::DeepEnsemble;
use crate::error::{Error, Result};
use crate::metrics::{self, DetectionReport};
use crate::model::{PathOptions, SdeNet, Task};
use crate::rng::{self, Domain};
use crate::training::{self, TrainConfig, TrainLog};
use crate::uncertainty::{self, ScoreMode};

use super::config::{DatasetSpec, ExperimentConfig, OodSpec};
use super::for_each_seed;
use super::output::{raw_scores, report_metrics, MethodResult, OutputDir, RawScore, Results, SeedMetrics};

/// Normalised splits for one seed.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub task: Task,
    pub train: Dataset,
    pub val: Option<Dataset>,
    pub test: Dataset,
    pub features: Normalizer,
    /// Target standardisation (regression only).
    pub targets: Option<Normalizer>,
}

fn task_of(labels: LabelKind) -> Task {
    match labels {
        LabelKind::Classes { classes } => Task::Classification { classes },
        LabelKind::Continuous => Task::Regression,
    }
}

/// Generates or loads the data, splits off validation rows and fits the
/// normalisation on the remaining training rows.
pub fn prepare_data(config: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let (full, test) = match &config.dataset {
        DatasetSpec::TwoGaussians { test_per_class, .. } => {
            let spec = config.dataset.two_gaussians().expect("two-Gaussian spec");
            let test_spec = data::TwoGaussians {
                n_per_class: *test_per_class,
                ..spec.clone()
            };
            (
                data::gen_two_gaussians_split(&spec, seed, Split::Train)?,
                data::gen_two_gaussians_split(&test_spec, seed, Split::Test)?,
            )
        }
        DatasetSpec::GappedRegression { curve, test_size } => (
            data::gen_gapped_regression(curve, seed)?.outside,
            data::gen_gapped_test(curve, *test_size, seed)?,
        ),
        DatasetSpec::Csv { train, test, schema } => (data::load_csv(train, schema)?, data::load_csv(test, schema)?),
    };
    if full.is_empty() || test.is_empty() {
        return Err(Error::EmptyDataset("training and test sets must be nonempty".into()));
    }
    let (train_idx, val_idx) = data::split_indices(full.len(), config.eval.val_fraction, seed);
    let train = full.subset(&train_idx, Split::Train);
    let task = task_of(full.labels);
    let features = if config.eval.normalize {
        Normalizer::fit(&train.features)?
    } else {
        Normalizer::identity(train.dim())
    };
    let targets = match task {
        Task::Regression if config.eval.normalize => Some(Normalizer::fit_values(&train.targets)?),
        _ => None,
    };
    let val = (!val_idx.is_empty()).then(|| full.subset(&val_idx, Split::Val));
    let apply = |d: &Dataset| features.apply(d, targets.as_ref());
    Ok(Prepared {
        task,
        train: apply(&train)?,
        val: val.as_ref().map(apply).transpose()?,
        test: apply(&test)?,
        features: features.clone(),
        targets: targets.clone(),
    })
}

fn train_config(config: &ExperimentConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..config.train.clone()
    }
}

/// Trains (or loads) the SDE network for a seed and stores its checkpoint and log.
fn fit_model(config: &ExperimentConfig, data: &Prepared, seed: u64, dir: &Path) -> Result<(SdeNet, TrainLog)> {
    let model_config = config.model.to_config(data.train.dim(), data.task)?;
    let checkpoint = dir.join("model.json");
    let sidecar = dir.join("model.config.json");
    if let Some(src) = &config.eval.model_dir {
        let seed_dir = src.join(format!("seed-{seed}"));
        let model = SdeNet::load(&seed_dir.join("model.json"), &seed_dir.join("model.config.json"))?;
        if model.config().input_dim != data.train.dim() || model.task() != data.task {
            return Err(Error::Config(format!(
                "checkpoint in {} does not match the dataset",
                seed_dir.display()
            )));
        }
        model.save(&checkpoint, &sidecar)?;
        return Ok((model, TrainLog::default()));
    }
    let mut model = SdeNet::new(model_config, seed)?;
    let log = training::train(&mut model, &data.train, data.val.as_ref(), &train_config(config, seed))?;
    model.save(&checkpoint, &sidecar)?;
    log.write_csv(&dir.join("trainlog.csv"))?;
    Ok((model, log))
}

/// Zero-diffusion copy of the architecture, trained on the same data.
fn fit_threshold(config: &ExperimentConfig, data: &Prepared, seed: u64) -> Result<SdeNet> {
    let mut model_config = config.model.to_config(data.train.dim(), data.task)?;
    model_config.sigma_max_train = 0.0;
    model_config.sigma_max_test = 0.0;
    let mut model = SdeNet::new(model_config, seed)?;
    training::train(&mut model, &data.train, None, &train_config(config, seed))?;
    Ok(model)
}

fn test_opts(config: &ExperimentConfig, model: &SdeNet, seed: u64, first_input: u64) -> PathOptions {
    let deterministic = model.config().sigma_max_test == 0.0;
    PathOptions {
        paths: if deterministic { 1 } else { config.model.test_paths },
        seed,
        sigma_max: model.config().sigma_max_test,
        first_input,
    }
}

fn mode_name(mode: ScoreMode) -> &'static str {
    match mode {
        ScoreMode::MaxProb => "max_prob",
        ScoreMode::Epistemic => "epistemic",
    }
}

fn attack_name(kind: AttackKind) -> &'static str {
    match kind {
        AttackKind::Fgsm => "fgsm",
        AttackKind::Pgd => "pgd",
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Collects per-seed metric maps keyed by `(method, score, epsilon)` in first-seen order.
#[derive(Default)]
struct Collector {
    order: Vec<(String, String, Option<u64>)>,
    entries: BTreeMap<(String, String, Option<u64>), Vec<SeedMetrics>>,
    raw: Vec<RawScore>,
}

impl Collector {
    fn push(&mut self, method: &str, score: &str, epsilon: Option<f64>, seed: u64, metrics: BTreeMap<String, f64>) {
        let key = (method.to_string(), score.to_string(), epsilon.map(f64::to_bits));
        if !self.entries.contains_key(&key) {
            self.order.push(key.clone());
        }
        self.entries.entry(key).or_default().push(SeedMetrics { seed, metrics });
    }

    fn into_results(mut self, results: &mut Results) -> Vec<RawScore> {
        for key in &self.order {
            let per_seed = self.entries.remove(key).expect("ordered key");
            results
                .methods
                .push(MethodResult::new(&key.0, &key.1, key.2.map(f64::from_bits), per_seed));
        }
        self.raw
    }
}

/// `(method, score, epsilon, metrics)`.
type Row = (String, String, Option<f64>, BTreeMap<String, f64>);

/// Per-seed output of a runner: metric rows and raw scores.
#[derive(Default)]
struct SeedOutput {
    rows: Vec<Row>,
    raw: Vec<RawScore>,
}

impl SeedOutput {
    fn row(&mut self, method: &str, score: &str, epsilon: Option<f64>, metrics: BTreeMap<String, f64>) {
        self.rows.push((method.into(), score.into(), epsilon, metrics));
    }

    fn detection(
        &mut self,
        seed: u64,
        method: &str,
        score: &str,
        epsilon: Option<f64>,
        positives: &[f64],
        negatives: &[f64],
    ) -> Result<DetectionReport> {
        let report = DetectionReport::compute(&metrics::scored(positives, negatives))?;
        self.row(method, score, epsilon, report_metrics(&report));
        self.raw.extend(raw_scores(seed, method, score, epsilon, positives, negatives));
        Ok(report)
    }
}

fn collect(config: &ExperimentConfig, outputs: Vec<SeedOutput>, results: &mut Results) -> Vec<RawScore> {
    let mut c = Collector::default();
    for (seed, out) in config.seeds.iter().zip(outputs) {
        for (method, score, eps, m) in out.rows {
            c.push(&method, &score, eps, *seed, m);
        }
        c.raw.extend(out.raw);
    }
    c.into_results(results)
}

/// Path-averaged class probabilities per input.
fn class_probabilities(model: &SdeNet, x: &Tensor, opts: PathOptions) -> Result<Vec<Vec<f64>>> {
    model
        .forward_paths(x, opts)?
        .iter()
        .map(|samples| uncertainty::mean_probabilities(samples))
        .collect()
}

fn classification_accuracy(model: &SdeNet, x: &Tensor, y: &[f64], opts: PathOptions) -> Result<f64> {
    let probs = class_probabilities(model, x, opts)?;
    let correct = probs
        .iter()
        .zip(y)
        .filter(|(p, y)| uncertainty::argmax(p) as f64 == **y)
        .count();
    Ok(correct as f64 / y.len() as f64)
}

pub(super) fn train(config: &ExperimentConfig, out: &OutputDir) -> Result<(Results, Vec<RawScore>)> {
    let outputs = for_each_seed(config, |seed| {
        let data = prepare_data(config, seed)?;
        let dir = out.seed_dir(seed)?;
        let (model, log) = fit_model(config, &data, seed, &dir)?;
        let mut m = BTreeMap::new();
        if let Some(last) = log.last() {
            m.insert("final_loss".to_string(), last.loss);
            m.insert("g_id".to_string(), last.g_id);
            m.insert("g_ood".to_string(), last.g_ood);
        }
        let metric = training::evaluate_metric(
            &model,
            &data.test,
            config.model.test_paths,
            model.config().sigma_max_test,
            seed,
        )?;
        let name = if data.task.is_classification() { "accuracy" } else { "rmse" };
        m.insert(name.to_string(), metric);
        let mut o = SeedOutput::default();
        o.row("sde_net", "training", None, m);
        Ok(o)
    })?;
    let mut results = Results::new("train", &config.name, &config.seeds);
    let raw = collect(config, outputs, &mut results);
    Ok((results, raw))
}

/// Out-of-distribution inputs in model input space.
fn ood_inputs(config: &ExperimentConfig, data: &Prepared, seed: u64) -> Result<Tensor> {
    match &config.eval.ood {
        OodSpec::Perturbation { variance } => {
            let mut r = rng::stream(seed, Domain::OodNoise, u64::MAX, 0);
            training::ood_perturb(&data.test.features, *variance, &mut r)
        }
        OodSpec::Csv { path, schema } => {
            let raw = data::load_csv(path, schema)?;
            data.features.transform(&raw.features)
        }
    }
}

pub(super) fn ood(config: &ExperimentConfig, out: &OutputDir) -> Result<(Results, Vec<RawScore>)> {
    let outputs = for_each_seed(config, |seed| {
        let data = prepare_data(config, seed)?;
        let dir = out.seed_dir(seed)?;
        let (model, _) = fit_model(config, &data, seed, &dir)?;
        let x_id = &data.test.features;
        let x_ood = ood_inputs(config, &data, seed)?;
        let n_id = x_id.rows() as u64;
        let mut o = SeedOutput::default();

        for &mode in &config.eval.score_modes {
            if mode == ScoreMode::MaxProb && !data.task.is_classification() {
                continue;
            }
            let pos = adversarial::positive_scores(&model, x_id, test_opts(config, &model, seed, 0), mode)?;
            let neg = adversarial::positive_scores(&model, &x_ood, test_opts(config, &model, seed, n_id), mode)?;
            o.detection(seed, "sde_net", mode_name(mode), None, &pos, &neg)?;
        }

        let sigma = model.config().sigma_max_train;
        let mut diag = BTreeMap::new();
        if sigma > 0.0 {
            diag.insert("g_id".to_string(), mean(&model.diffusion_values(x_id, sigma)?));
            diag.insert("g_ood".to_string(), mean(&model.diffusion_values(&x_ood, sigma)?));
        }
        if data.task.is_classification() {
            let opts = test_opts(config, &model, seed, 0);
            diag.insert("accuracy".to_string(), classification_accuracy(&model, x_id, &data.test.targets, opts)?);
        }
        o.row("sde_net", "diagnostics", None, diag);

        if config.eval.baseline && data.task.is_classification() {
            let base = fit_threshold(config, &data, seed)?;
            let pos = adversarial::positive_scores(&base, x_id, test_opts(config, &base, seed, 0), ScoreMode::MaxProb)?;
            let neg =
                adversarial::positive_scores(&base, &x_ood, test_opts(config, &base, seed, n_id), ScoreMode::MaxProb)?;
            o.detection(seed, "threshold", "max_prob", None, &pos, &neg)?;
        }
        if config.eval.ensemble_size > 0 && data.task.is_classification() {
            let mc = config.model.to_config(data.train.dim(), data.task)?;
            let ens = DeepEnsemble::train(&mc, config.eval.ensemble_size, &data.train, &train_config(config, seed), seed)?;
            o.detection(seed, "ensemble", "max_prob", None, &ens.max_prob(x_id)?, &ens.max_prob(&x_ood)?)?;
        }
        Ok(o)
    })?;
    let mut results = Results::new("eval-ood", &config.name, &config.seeds);
    let raw = collect(config, outputs, &mut results);
    Ok((results, raw))
}

/// Correct predictions are positives, scored by max-prob; reports AUPR under
/// the success / error names and the calibration error.
fn misclass_rows(o: &mut SeedOutput, seed: u64, method: &str, model: &SdeNet, opts: PathOptions, data: &Prepared) -> Result<()> {
    let probs = class_probabilities(model, &data.test.features, opts)?;
    let conf: Vec<f64> = probs.iter().map(|p| p[uncertainty::argmax(p)]).collect();
    let correct: Vec<bool> = probs
        .iter()
        .zip(&data.test.targets)
        .map(|(p, y)| uncertainty::argmax(p) as f64 == *y)
        .collect();
    let hits = correct.iter().filter(|c| **c).count();
    if hits == 0 || hits == correct.len() {
        return Err(Error::UndefinedMetric(format!(
            "{method}: {hits} correct and {} misclassified test inputs",
            correct.len() - hits
        )));
    }
    let pos: Vec<f64> = conf.iter().zip(&correct).filter(|(_, c)| **c).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = conf.iter().zip(&correct).filter(|(_, c)| !**c).map(|(s, _)| *s).collect();
    let report = DetectionReport::compute(&metrics::scored(&pos, &neg))?.with_ece(&conf, &correct)?;
    let mut m = report_metrics(&report);
    let succ = m.remove("aupr_in").expect("field");
    let err = m.remove("aupr_out").expect("field");
    m.insert("aupr_succ".into(), succ);
    m.insert("aupr_err".into(), err);
    m.insert("accuracy".into(), hits as f64 / correct.len() as f64);
    o.row(method, "max_prob", None, m);
    o.raw.extend(raw_scores(seed, method, "max_prob", None, &pos, &neg));
    Ok(())
}

pub(super) fn misclassification(config: &ExperimentConfig, out: &OutputDir) -> Result<(Results, Vec<RawScore>)> {
    let outputs = for_each_seed(config, |seed| {
        let data = prepare_data(config, seed)?;
        if !data.task.is_classification() {
            return Err(Error::Config("misclassification detection needs a classification task".into()));
        }
        let dir = out.seed_dir(seed)?;
        let (model, _) = fit_model(config, &data, seed, &dir)?;
        let mut o = SeedOutput::default();
        misclass_rows(&mut o, seed, "sde_net", &model, test_opts(config, &model, seed, 0), &data)?;
        if config.eval.baseline {
            let base = fit_threshold(config, &data, seed)?;
            misclass_rows(&mut o, seed, "threshold", &base, test_opts(config, &base, seed, 0), &data)?;
        }
        Ok(o)
    })?;
    let mut results = Results::new("eval-misclass", &config.name, &config.seeds);
    let raw = collect(config, outputs, &mut results);
    Ok((results, raw))
}

pub(super) fn attack(config: &ExperimentConfig, out: &OutputDir) -> Result<(Results, Vec<RawScore>)> {
    let spec = &config.attack;
    if spec.epsilons.is_empty() {
        return Err(Error::Config("attack.epsilons must not be empty".into()));
    }
    let outputs = for_each_seed(config, |seed| {
        let data = prepare_data(config, seed)?;
        let dir = out.seed_dir(seed)?;
        let (model, _) = fit_model(config, &data, seed, &dir)?;
        let n = data.test.len().min(spec.max_inputs);
        let idx: Vec<usize> = (0..n).collect();
        let x = data.test.features.select_rows(&idx);
        let y = Tensor::column(data.test.targets[..n].to_vec());
        let clamp = ClampRange::observed(&data.train.features)?;
        let opts = test_opts(config, &model, seed, 0);
        let mut o = SeedOutput::default();
        let mut sweep_rows = Vec::new();
        for &kind in &spec.kinds {
            for &mode in &config.eval.score_modes {
                if mode == ScoreMode::MaxProb && !data.task.is_classification() {
                    continue;
                }
                let base = AttackConfig {
                    kind,
                    epsilon: 0.0,
                    step_size: 1.0,
                    iterations: spec.iterations,
                    clamp: Some(clamp.clone()),
                    random_start: spec.random_start,
                    gradient_paths: spec.gradient_paths,
                    sigma_max: None,
                    seed,
                };
                let clean = adversarial::positive_scores(&model, &x, opts, mode)?;
                for &eps in &spec.epsilons {
                    let ac = AttackConfig {
                        epsilon: eps,
                        step_size: if eps > 0.0 { spec.step_fraction * eps } else { 1.0 },
                        ..base.clone()
                    };
                    let adv = adversarial::attack(&model, &x, &y, &ac)?;
                    let scores = adversarial::positive_scores(&model, &adv, opts, mode)?;
                    let method = format!("sde_net/{}", attack_name(kind));
                    let report = o.detection(seed, &method, mode_name(mode), Some(eps), &clean, &scores)?;
                    sweep_rows.push((attack_name(kind), mode_name(mode), eps, report));
                }
            }
        }
        write_sweep(&dir.join("attack_sweep.csv"), &sweep_rows)?;
        Ok(o)
    })?;
    let mut results = Results::new("attack", &config.name, &config.seeds);
    let raw = collect(config, outputs, &mut results);
    // Rank correlation between epsilon and the seed-averaged AUROC.
    let mut series: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
    for m in &results.methods {
        if let (Some(eps), Some(a)) = (m.epsilon, m.mean("auroc")) {
            series.entry((m.method.clone(), m.score.clone())).or_default().push((eps, a));
        }
    }
    for ((method, score), points) in series {
        let (e, a): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();
        if let Ok(rho) = adversarial::spearman(&e, &a) {
            results.extras.insert(format!("spearman/{method}/{score}"), rho);
        }
    }
    Ok((results, raw))
}

fn write_sweep(path: &Path, rows: &[(&str, &str, f64, DetectionReport)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| data::map_csv_io(path, e))?;
    w.write_record(["attack", "score", "epsilon", "auroc", "tnr_at_tpr95", "aupr_in", "aupr_out", "detection_accuracy"])?;
    for (kind, score, eps, r) in rows {
        w.write_record([
            kind.to_string(),
            score.to_string(),
            eps.to_string(),
            r.auroc.to_string(),
            r.tnr_at_tpr95.to_string(),
            r.aupr_in.to_string(),
            r.aupr_out.to_string(),
            r.detection_accuracy.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(super) fn visualize(config: &ExperimentConfig, out: &OutputDir) -> Result<(Results, Vec<RawScore>)> {
    let spec = config.dataset.two_gaussians().ok_or_else(|| {
        Error::Config("visualize needs a two-Gaussian classification dataset".into())
    })?;
    if spec.means[0].len() != 2 {
        return Err(Error::Config(format!(
            "visualize needs a 2-D input space, got {} dimensions",
            spec.means[0].len()
        )));
    }
    let v = &config.visualize;
    let outputs = for_each_seed(config, |seed| {
        let data = prepare_data(config, seed)?;
        let dir = out.seed_dir(seed)?;
        let (model, _) = fit_model(config, &data, seed, &dir)?;
        let grid = data::grid_probe(v.bounds, v.resolution)?;
        let x = data.features.transform(&grid)?;
        let g = model.diffusion_values(&x, model.config().sigma_max_test)?;
        let reports = uncertainty::evaluate(&model, &x, test_opts(config, &model, seed, 0))?;
        let epistemic: Vec<f64> = reports.iter().map(|r| r.epistemic).collect();
        write_heatmap(&dir.join("heatmap.csv"), &grid, &g, &epistemic)?;

        let dist = |i: usize| -> f64 {
            spec.means
                .iter()
                .map(|m| ((grid.get(i, 0) - m[0]).powi(2) + (grid.get(i, 1) - m[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        };
        let (mut near, mut far, mut g_near, mut g_far) = (vec![], vec![], vec![], vec![]);
        for i in 0..grid.rows() {
            let d = dist(i);
            if d <= v.near_radius {
                near.push(-epistemic[i]);
                g_near.push(g[i]);
            } else if d > v.far_radius {
                far.push(-epistemic[i]);
                g_far.push(g[i]);
            }
        }
        let mut o = SeedOutput::default();
        let report = DetectionReport::compute(&metrics::scored(&near, &far))?;
        let mut m = BTreeMap::new();
        m.insert("near_far_auroc".to_string(), report.auroc);
        m.insert("g_near".to_string(), mean(&g_near));
        m.insert("g_far".to_string(), mean(&g_far));
        o.row("sde_net", "epistemic", None, m);
        o.raw.extend(raw_scores(seed, "sde_net", "epistemic", None, &near, &far));
        Ok(o)
    })?;
    let mut results = Results::new("visualize", &config.name, &config.seeds);
    let raw = collect(config, outputs, &mut results);
    Ok((results, raw))
}

fn write_heatmap(path: &Path, grid: &Tensor, g: &[f64], epistemic: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| data::map_csv_io(path, e))?;
    w.write_record(["x", "y", "g", "epistemic"])?;
    for i in 0..grid.rows() {
        w.write_record([
            grid.get(i, 0).to_string(),
            grid.get(i, 1).to_string(),
            g[i].to_string(),
            epistemic[i].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn active_metrics(r: &ActiveLearningResult) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    m.insert("initial_rmse".to_string(), r.series[0].rmse);
    m.insert("final_rmse".to_string(), r.series.last().expect("nonempty series").rmse);
    m.insert("gap_hits".to_string(), r.gap_hits() as f64);
    m.insert("acquired".to_string(), r.acquisitions.len() as f64);
    m.insert("pool_gap_fraction".to_string(), r.pool_gap_fraction);
    m
}

pub(super) fn active_learning(config: &ExperimentConfig, out: &OutputDir) -> Result<(Results, Vec<RawScore>)> {
    let DatasetSpec::GappedRegression { curve, test_size } = &config.dataset else {
        return Err(Error::Config("active-learn needs the gapped_regression dataset".into()));
    };
    let a = &config.active;
    let base = ActiveLearningConfig {
        data: curve.clone(),
        test_size: *test_size,
        initial_labels: a.initial_labels,
        batch_size: a.batch_size,
        rounds: a.rounds,
        epochs_per_round: a.epochs_per_round,
        warm_start: a.warm_start,
        paths: config.model.test_paths,
        uniform_acquisition: false,
        model: config.model.to_config(1, Task::Regression)?,
        train: config.train.clone(),
    };
    let outputs = for_each_seed(config, |seed| {
        let dir = out.seed_dir(seed)?;
        let mut runs = vec![("sde_net", active_learning::active_learning_experiment(&base, seed)?)];
        if a.random_control {
            let uniform = ActiveLearningConfig {
                uniform_acquisition: true,
                ..base.clone()
            };
            runs.push(("random", active_learning::active_learning_experiment(&uniform, seed)?));
        }
        let mut o = SeedOutput::default();
        for (name, r) in &runs {
            r.write_series(&dir.join(format!("active_{name}.csv")))?;
            r.write_acquisitions(&dir.join(format!("acquisitions_{name}.csv")))?;
            o.row(name, "rmse", None, active_metrics(r));
        }
        Ok(o)
    })?;
    let mut results = Results::new("active-learn", &config.name, &config.seeds);
    let raw = collect(config, outputs, &mut results);
    if let Some(m) = results.method("sde_net", "rmse") {
        let sum = |k: &str| m.per_seed.iter().map(|s| s.metrics[k]).sum::<f64>();
        let p0 = sum("pool_gap_fraction") / m.per_seed.len() as f64;
        let p = active_learning::binomial_p_value(sum("gap_hits") as u64, sum("acquired") as u64, p0)?;
        results.extras.insert("gap_binomial_p".into(), p);
    }
    Ok((results, raw))
}
