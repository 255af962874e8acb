//! Reference implementations shared by the integration tests and the
//! acceptance target. Nothing here calls into the library's metric code.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdenet::autodiff::{Graph, NodeId, ParamId, ParamStore, Tensor};
use sdenet::metrics::ScoredSample;
use sdenet::rng::{self, Domain};
use sdenet::solver::{euler_maruyama_update, SolverConfig};

// ---- autodiff --------------------------------------------------------------

const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
const REL_FLOOR: f64 = 1e-4;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

pub struct RandomGraph {
    pub graph: Graph,
    pub params: ParamStore,
    pub inputs: Vec<(String, Tensor)>,
    pub loss: NodeId,
}

impl RandomGraph {
    pub fn loss_value(&mut self) -> f64 {
        let bindings: Vec<(&str, &Tensor)> = self.inputs.iter().map(|(n, t)| (n.as_str(), t)).collect();
        self.graph.forward(&self.params, &bindings).unwrap();
        self.graph.value(self.loss).unwrap().item()
    }
}

/// A random graph of 3 to 10 operations on `[rows, cols]` nodes ending in a
/// scalar loss. Draws from every differentiable op the graph supports.
pub fn random_graph(seed: u64) -> RandomGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = rng.random_range(1..4);
    let cols = rng.random_range(2..5);
    let mut g = Graph::new();
    let mut params = ParamStore::new();
    let mut inputs = vec![("x".to_string(), random_tensor(&mut rng, rows, cols, 1.0))];
    let x = g.input_with_grad("x");
    let w0 = params.add("w0", random_tensor(&mut rng, rows, cols, 1.0));
    let mut pool = vec![x, g.param(w0)];

    let ops = rng.random_range(3..11);
    for i in 0..ops {
        let a = pool[rng.random_range(0..pool.len())];
        let b = pool[rng.random_range(0..pool.len())];
        let node = match rng.random_range(0..15) {
            0 => g.add(a, b),
            1 => g.sub(a, b),
            2 => g.mul(a, b),
            3 => g.scale(a, rng.random_range(-2.0..2.0)),
            4 => g.add_scalar(a, rng.random_range(-1.0..1.0)),
            5 => g.tanh(a),
            6 => g.sigmoid(a),
            7 => g.softplus(a),
            8 => g.relu(a),
            9 => g.softmax(a),
            10 => {
                let w = params.add(format!("w{}", i + 1), random_tensor(&mut rng, cols, cols, 0.8));
                let w = g.param(w);
                g.matmul(a, w)
            }
            11 => {
                let bias = params.add(format!("b{}", i + 1), random_tensor(&mut rng, 1, cols, 1.0));
                let bias = g.param(bias);
                g.add_row(a, bias)
            }
            12 => {
                let j = rng.random_range(0..cols);
                let c = g.column(b, j);
                g.mul_col(a, c)
            }
            13 => {
                // Split then rejoin so concat and column both appear.
                let left = g.column(a, 0);
                let rest = (1..cols).fold(None, |acc: Option<NodeId>, j| {
                    let c = g.column(b, j);
                    Some(match acc {
                        None => c,
                        Some(n) => g.concat_cols(n, c),
                    })
                });
                g.concat_cols(left, rest.expect("cols >= 2"))
            }
            _ => {
                let name = format!("in{}", i + 1);
                inputs.push((name.clone(), random_tensor(&mut rng, rows, cols, 1.0)));
                let c = g.input_with_grad(&name);
                g.mul(a, c)
            }
        };
        pool.push(node);
    }

    let last = *pool.last().unwrap();
    let loss = match rng.random_range(0..4) {
        0 => g.mean(last),
        1 => g.sum(last),
        2 => {
            let labels = (0..rows).map(|_| rng.random_range(0..cols) as f64).collect();
            let labels = g.constant(Tensor::column(labels));
            let ce = g.softmax_cross_entropy(last, labels);
            g.mean(ce)
        }
        _ => {
            let mean = g.column(last, 0);
            let raw = g.column(last, 1);
            let sp = g.softplus(raw);
            let sigma = g.add_scalar(sp, 0.1);
            inputs.push(("target".to_string(), random_tensor(&mut rng, rows, 1, 1.0)));
            let target = g.input("target");
            let nll = g.gaussian_nll(mean, sigma, target);
            g.mean(nll)
        }
    };
    RandomGraph {
        graph: g,
        params,
        inputs,
        loss,
    }
}

/// Worst relative error between reverse-mode and central-difference gradients
/// over every parameter and gradient-carrying input entry.
pub fn gradient_check(seed: u64) -> f64 {
    let mut rg = random_graph(seed);
    rg.loss_value();
    let grads = rg.graph.backward(rg.loss).unwrap();
    let mut worst: f64 = 0.0;

    let ids: Vec<ParamId> = rg.params.ids().collect();
    for id in ids {
        let analytic = grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(rg.params.get(id).shape()));
        for e in 0..rg.params.get(id).numel() {
            let orig = rg.params.get(id).data()[e];
            rg.params.get_mut(id).data_mut()[e] = orig + FD_STEP;
            let up = rg.loss_value();
            rg.params.get_mut(id).data_mut()[e] = orig - FD_STEP;
            let down = rg.loss_value();
            rg.params.get_mut(id).data_mut()[e] = orig;
            worst = worst.max(rel_err(analytic.data()[e], (up - down) / (2.0 * FD_STEP)));
        }
    }
    for k in 0..rg.inputs.len() {
        let name = rg.inputs[k].0.clone();
        if name == "target" {
            continue;
        }
        let analytic = match grads.input(&name) {
            Some(t) => t.clone(),
            None => Tensor::zeros(rg.inputs[k].1.shape()),
        };
        for e in 0..rg.inputs[k].1.numel() {
            let orig = rg.inputs[k].1.data()[e];
            rg.inputs[k].1.data_mut()[e] = orig + FD_STEP;
            let up = rg.loss_value();
            rg.inputs[k].1.data_mut()[e] = orig - FD_STEP;
            let down = rg.loss_value();
            rg.inputs[k].1.data_mut()[e] = orig;
            worst = worst.max(rel_err(analytic.data()[e], (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

// ---- Brownian law ----------------------------------------------------------

pub struct LawCheck {
    pub sigma: f64,
    pub steps: usize,
    pub var: f64,
    pub std_err: f64,
}

impl LawCheck {
    pub fn within(&self, k: f64) -> bool {
        (self.var - self.sigma * self.sigma).abs() <= k * self.std_err
    }
}

/// Simulates `dx = sigma dW` from `x_0 = 0` on `[0, 1]` with the library's
/// update rule, one path per row. Returns the check and the raw increments
/// `z[path][step]`.
pub fn brownian_law(sigma: f64, steps: usize, paths: usize, seed: u64) -> (LawCheck, Vec<Vec<f64>>) {
    let solver = SolverConfig::new(1.0, steps).unwrap();
    let keys: Vec<u64> = (0..paths as u64).collect();
    let mut g = Graph::new();
    let x0 = g.input("x0");
    let drift = g.constant(Tensor::zeros(&[paths, 1]));
    let diffusion = g.constant(Tensor::full(&[paths, 1], sigma));
    let names: Vec<String> = (0..steps).map(|k| format!("z{k}")).collect();
    let mut x = x0;
    for name in &names {
        let z = g.input(name);
        x = euler_maruyama_update(&mut g, x, drift, Some(diffusion), z, solver.dt());
    }
    let zs: Vec<Tensor> = (0..steps)
        .map(|k| rng::step_noise(seed, Domain::PathNoise, &keys, 0, k as u64, 1))
        .collect();
    let zero = Tensor::zeros(&[paths, 1]);
    let mut bindings: Vec<(&str, &Tensor)> = vec![("x0", &zero)];
    bindings.extend(names.iter().map(String::as_str).zip(zs.iter()));
    g.forward(&ParamStore::new(), &bindings).unwrap();
    let xt = g.value(x).unwrap().data().to_vec();

    let n = xt.len() as f64;
    let mean = xt.iter().sum::<f64>() / n;
    let var = xt.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let s2 = sigma * sigma;
    let check = LawCheck {
        sigma,
        steps,
        var,
        std_err: s2 * (2.0 / (n - 1.0)).sqrt(),
    };
    let z = (0..paths).map(|p| zs.iter().map(|t| t.data()[p]).collect()).collect();
    (check, z)
}

pub struct IncrementStats {
    pub n: usize,
    pub mean: f64,
    pub var: f64,
    /// Correlation of consecutive increments within a path.
    pub lag1: f64,
}

impl IncrementStats {
    pub fn of(z: &[Vec<f64>]) -> Self {
        let flat: Vec<f64> = z.iter().flatten().copied().collect();
        let n = flat.len() as f64;
        let mean = flat.iter().sum::<f64>() / n;
        let var = flat.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let pairs: Vec<(f64, f64)> = z.iter().flat_map(|p| p.windows(2).map(|w| (w[0], w[1]))).collect();
        let m = pairs.len() as f64;
        let (ma, mb) = (
            pairs.iter().map(|p| p.0).sum::<f64>() / m,
            pairs.iter().map(|p| p.1).sum::<f64>() / m,
        );
        let cov = pairs.iter().map(|(a, b)| (a - ma) * (b - mb)).sum::<f64>();
        let va = pairs.iter().map(|(a, _)| (a - ma).powi(2)).sum::<f64>();
        let vb = pairs.iter().map(|(_, b)| (b - mb).powi(2)).sum::<f64>();
        IncrementStats {
            n: flat.len(),
            mean,
            var,
            lag1: cov / (va * vb).sqrt(),
        }
    }

    pub fn within_bounds(&self) -> bool {
        let n = self.n as f64;
        self.mean.abs() < 4.0 / n.sqrt() && (self.var - 1.0).abs() < 4.0 * (2.0 / n).sqrt() && self.lag1.abs() < 4.0 / n.sqrt()
    }
}

// ---- metrics ---------------------------------------------------------------

/// Independent metric definitions, written from the ROC / PR curves point by
/// point rather than by threshold sweeps or tie groups.
pub mod oracle {
    use super::ScoredSample;

    fn split(s: &[ScoredSample]) -> (Vec<f64>, Vec<f64>) {
        let pos = s.iter().filter(|x| x.positive).map(|x| x.score).collect();
        let neg = s.iter().filter(|x| !x.positive).map(|x| x.score).collect();
        (pos, neg)
    }

    /// Trapezoid area under the ROC polyline through every distinct threshold.
    pub fn auroc(s: &[ScoredSample]) -> f64 {
        let (pos, neg) = split(s);
        let mut t: Vec<f64> = s.iter().map(|x| x.score).collect();
        t.sort_by(|a, b| b.total_cmp(a));
        t.dedup();
        let point = |th: f64| {
            (
                neg.iter().filter(|&&v| v >= th).count() as f64 / neg.len() as f64,
                pos.iter().filter(|&&v| v >= th).count() as f64 / pos.len() as f64,
            )
        };
        let mut prev = (0.0, 0.0);
        let mut area = 0.0;
        for th in t {
            let p = point(th);
            area += (p.0 - prev.0) * (p.1 + prev.1) / 2.0;
            prev = p;
        }
        area
    }

    /// Ranks positives high to low and takes the `ceil(target * P)`-th one as
    /// the threshold; negatives strictly below it are true negatives.
    pub fn tnr_at_tpr(s: &[ScoredSample], target: f64) -> f64 {
        let (mut pos, neg) = split(s);
        pos.sort_by(|a, b| b.total_cmp(a));
        let mut k = (target * pos.len() as f64).ceil() as usize;
        // Guard against target * P landing a hair above an integer.
        while k > 1 && (k - 1) as f64 / pos.len() as f64 >= target {
            k -= 1;
        }
        let th = pos[k.max(1) - 1];
        neg.iter().filter(|&&v| v < th).count() as f64 / neg.len() as f64
    }

    /// Mean over positives of the precision at that positive's own score.
    pub fn aupr_in(s: &[ScoredSample]) -> f64 {
        let (pos, _) = split(s);
        let total: f64 = pos
            .iter()
            .map(|&th| {
                let detected: Vec<&ScoredSample> = s.iter().filter(|x| x.score >= th).collect();
                detected.iter().filter(|x| x.positive).count() as f64 / detected.len() as f64
            })
            .sum();
        total / pos.len() as f64
    }

    pub fn aupr_out(s: &[ScoredSample]) -> f64 {
        let f: Vec<ScoredSample> = s.iter().map(|x| ScoredSample::new(-x.score, !x.positive)).collect();
        aupr_in(&f)
    }

    /// Best balanced accuracy, trying a cut below, between and above every score.
    pub fn detection_accuracy(s: &[ScoredSample]) -> f64 {
        let (pos, neg) = split(s);
        let mut t: Vec<f64> = s.iter().map(|x| x.score).collect();
        t.sort_by(|a, b| a.total_cmp(b));
        let mut cuts = vec![f64::NEG_INFINITY, f64::INFINITY];
        cuts.extend(t.iter().copied());
        cuts.iter()
            .map(|&c| {
                let tpr = pos.iter().filter(|&&v| v >= c).count() as f64 / pos.len() as f64;
                let tnr = neg.iter().filter(|&&v| v < c).count() as f64 / neg.len() as f64;
                0.5 * (tpr + tnr)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Bins `(b/B, (b+1)/B]` with 0 in the first, found by integer search on
    /// exact rational edges.
    pub fn ece(conf: &[f64], correct: &[bool], bins: usize) -> f64 {
        let bin_of = |c: f64| {
            (0..bins)
                .find(|&b| c <= (b + 1) as f64 / bins as f64)
                .unwrap_or(bins - 1)
        };
        let n = conf.len() as f64;
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); bins];
        for (i, &c) in conf.iter().enumerate() {
            members[bin_of(c)].push(i);
        }
        members
            .iter()
            .filter(|m| !m.is_empty())
            .map(|m| {
                let k = m.len() as f64;
                let acc = m.iter().filter(|&&i| correct[i]).count() as f64 / k;
                let avg = m.iter().map(|&i| conf[i]).sum::<f64>() / k;
                (k / n) * (acc - avg).abs()
            })
            .sum()
    }
}

/// A random labelled score set with both classes present, size at most
/// `max_len`. Odd seeds draw from a coarse grid to create ties.
pub fn random_scores(seed: u64, max_len: usize) -> Vec<ScoredSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n = rng.random_range(2..=max_len);
    let coarse = seed % 2 == 1;
    let mut s: Vec<ScoredSample> = (0..n)
        .map(|_| {
            let v: f64 = rng.random();
            let v = if coarse { (v * 6.0).round() / 6.0 } else { v };
            ScoredSample::new(v, rng.random_bool(0.4))
        })
        .collect();
    let i = rng.random_range(0..n);
    let j = (i + 1 + rng.random_range(0..n - 1)) % n;
    s[i].positive = true;
    s[j].positive = false;
    s
}

/// Largest absolute gap between the library and the oracle for each metric
/// over `sets` random score sets.
pub fn metric_gaps(sets: u64, max_len: usize) -> Vec<(&'static str, f64)> {
    use sdenet::metrics as m;
    let mut worst = [0.0f64; 6];
    for seed in 0..sets {
        let s = random_scores(seed, max_len);
        let conf: Vec<f64> = s.iter().map(|x| x.score).collect();
        let correct: Vec<bool> = s.iter().map(|x| x.positive).collect();
        let gaps = [
            m::auroc(&s).unwrap() - oracle::auroc(&s),
            m::tnr_at_tpr(&s, 0.95).unwrap() - oracle::tnr_at_tpr(&s, 0.95),
            m::aupr_in(&s).unwrap() - oracle::aupr_in(&s),
            m::aupr_out(&s).unwrap() - oracle::aupr_out(&s),
            m::detection_accuracy(&s).unwrap() - oracle::detection_accuracy(&s),
            m::ece(&conf, &correct, 15).unwrap() - oracle::ece(&conf, &correct, 15),
        ];
        for (w, g) in worst.iter_mut().zip(gaps) {
            *w = w.max(g.abs());
        }
    }
    ["auroc", "tnr_at_tpr95", "aupr_in", "aupr_out", "detection_accuracy", "ece"]
        .into_iter()
        .zip(worst)
        .collect()
}

// ---- model -----------------------------------------------------------------

use sdenet::model::{ModelConfig, PathOptions, SdeNet, TaskOutput, Trainable};
use sdenet::uncertainty;

pub fn random_inputs(rows: usize, cols: usize, seed: u64, scale: f64) -> Tensor {
    random_tensor(&mut ChaCha8Rng::seed_from_u64(seed), rows, cols, scale)
}

/// Final states of the explicit residual iteration `x <- x + f(x, t_k) dt`
/// built from the model's own drift net, with no diffusion anywhere.
pub fn residual_forward(model: &SdeNet, x: &Tensor) -> Tensor {
    let solver = model.config().solver;
    let mut g = Graph::new();
    let xin = g.input("x");
    let mut state = model.build_head(&mut g, xin, Trainable::NONE);
    for k in 0..solver.steps {
        let f = model.build_drift(&mut g, state, solver.time(k), Trainable::NONE);
        let step = g.scale(f, solver.dt());
        state = g.add(state, step);
    }
    g.forward(model.params(), &[("x", x)]).unwrap();
    g.value(state).unwrap().clone()
}

pub struct DegeneracyCheck {
    pub matches_residual: bool,
    pub paths_identical: bool,
    pub epistemic_zero: bool,
}

pub fn zero_diffusion_check(seed: u64) -> DegeneracyCheck {
    let mut config = ModelConfig::classification(3, 2);
    config.sigma_max_train = 0.0;
    config.sigma_max_test = 0.0;
    let model = SdeNet::new(config, seed).unwrap();
    let x = random_inputs(7, 3, seed, 2.0);
    let opts = PathOptions {
        paths: 10,
        seed,
        sigma_max: 0.0,
        first_input: 0,
    };
    let samples = model.forward_paths(&x, opts).unwrap();
    let residual = residual_forward(&model, &x);
    let matches_residual = samples
        .iter()
        .enumerate()
        .all(|(i, paths)| paths.iter().all(|p| p.final_state == residual.row(i)));
    let bits = |p: &sdenet::model::PathSample| -> Vec<u64> {
        let mut v: Vec<u64> = p.final_state.iter().map(|f| f.to_bits()).collect();
        if let TaskOutput::Probabilities(pr) = &p.output {
            v.extend(pr.iter().map(|f| f.to_bits()));
        }
        v
    };
    let paths_identical = samples.iter().all(|paths| paths.iter().all(|p| bits(p) == bits(&paths[0])));
    let epistemic_zero = samples
        .iter()
        .all(|paths| uncertainty::epistemic_score(paths, model.task()).unwrap() == 0.0);
    DegeneracyCheck {
        matches_residual,
        paths_identical,
        epistemic_zero,
    }
}

// ---- attacks ---------------------------------------------------------------

use sdenet::adversarial::{self, AttackConfig, ClampRange};

pub fn attack_model(seed: u64) -> (SdeNet, Tensor, Tensor) {
    let model = SdeNet::new(ModelConfig::classification(4, 2), seed).unwrap();
    let x = random_inputs(12, 4, seed + 1, 1.0);
    let y = Tensor::column((0..12).map(|i| (i % 2) as f64).collect());
    (model, x, y)
}

pub fn linf(a: &Tensor, b: &Tensor) -> f64 {
    a.max_abs_diff(b)
}

/// Largest budget overshoot `|x_adv - x|_inf - eps` across FGSM and PGD.
pub fn budget_overshoot(seed: u64, epsilons: &[f64]) -> f64 {
    let (model, x, y) = attack_model(seed);
    let wide = ClampRange::new(vec![-10.0; 4], vec![10.0; 4]).unwrap();
    let mut worst = f64::NEG_INFINITY;
    for &eps in epsilons {
        let f = adversarial::fgsm(&model, &x, &y, eps, &wide).unwrap();
        let mut cfg = AttackConfig::pgd(eps, (eps * 0.3).max(1e-3), 7);
        cfg.random_start = true;
        cfg.seed = seed;
        let p = adversarial::pgd(&model, &x, &y, &cfg).unwrap();
        worst = worst.max(linf(&f, &x) - eps).max(linf(&p, &x) - eps);
    }
    worst
}

/// One PGD step of size at least epsilon, without random start, against FGSM.
pub fn pgd_one_step_gap(seed: u64, eps: f64, step: f64) -> f64 {
    let (model, x, y) = attack_model(seed);
    let clamp = ClampRange::new(vec![-10.0; 4], vec![10.0; 4]).unwrap();
    let f = adversarial::fgsm(&model, &x, &y, eps, &clamp).unwrap();
    let mut cfg = AttackConfig::pgd(eps, step, 1);
    cfg.clamp = Some(clamp);
    let p = adversarial::pgd(&model, &x, &y, &cfg).unwrap();
    linf(&f, &p)
}
