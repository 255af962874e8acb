//! The SDE network: head `h1`, drift net `f`, diffusion net `g`, output head `h2`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{init_weight, Activation, Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::rng::{self, Domain};
use crate::solver::{euler_maruyama_update, SolverConfig};

/// Lower bound added to the regression head's softplus scale.
pub const SIGMA_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    Classification { classes: usize },
    Regression,
}

impl Task {
    pub fn output_width(&self) -> usize {
        match self {
            Task::Classification { classes } => *classes,
            Task::Regression => 2,
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(self, Task::Classification { .. })
    }
}

/// Architecture and solver hyperparameters. Serialised as the model sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Width `d` of the SDE state.
    pub state_dim: usize,
    /// Hidden ReLU layers of the head, in order; empty for a single linear map.
    pub head_hidden: Vec<usize>,
    pub drift_hidden: usize,
    pub diffusion_hidden: usize,
    pub task: Task,
    pub solver: SolverConfig,
    /// Diffusion bound used while training. Zero freezes the diffusion at 0.
    pub sigma_max_train: f64,
    /// Diffusion bound used at inference.
    pub sigma_max_test: f64,
}

impl ModelConfig {
    pub fn classification(input_dim: usize, classes: usize) -> Self {
        ModelConfig {
            input_dim,
            state_dim: 16,
            head_hidden: Vec::new(),
            drift_hidden: 50,
            diffusion_hidden: 50,
            task: Task::Classification { classes },
            solver: SolverConfig::new(1.0, 6).expect("valid default"),
            sigma_max_train: 1.0,
            sigma_max_test: 10.0,
        }
    }

    pub fn regression(input_dim: usize) -> Self {
        ModelConfig {
            task: Task::Regression,
            solver: SolverConfig::new(1.0, 4).expect("valid default"),
            ..Self::classification(input_dim, 2)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            ("input_dim", self.input_dim),
            ("state_dim", self.state_dim),
            ("drift_hidden", self.drift_hidden),
            ("diffusion_hidden", self.diffusion_hidden),
        ];
        for (name, w) in widths {
            if w == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.head_hidden.contains(&0) {
            return Err(Error::Config("head_hidden widths must be positive".into()));
        }
        if let Task::Classification { classes } = self.task {
            if classes < 2 {
                return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
            }
        }
        for (name, s) in [
            ("sigma_max_train", self.sigma_max_train),
            ("sigma_max_test", self.sigma_max_test),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {s}")));
            }
        }
        self.solver.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamGroup {
    Head,
    Drift,
    Diffusion,
    Output,
}

/// Which parameter groups receive gradients in a graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trainable {
    pub head: bool,
    pub drift: bool,
    pub diffusion: bool,
    pub output: bool,
}

impl Trainable {
    pub const NONE: Trainable = Trainable {
        head: false,
        drift: false,
        diffusion: false,
        output: false,
    };
    pub const ALL: Trainable = Trainable {
        head: true,
        drift: true,
        diffusion: true,
        output: true,
    };
    /// `h1`, `f` and `h2`.
    pub const DRIFT_SIDE: Trainable = Trainable {
        head: true,
        drift: true,
        diffusion: false,
        output: true,
    };
    pub const DIFFUSION: Trainable = Trainable {
        head: false,
        drift: false,
        diffusion: true,
        output: false,
    };

    fn allows(&self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::Head => self.head,
            ParamGroup::Drift => self.drift,
            ParamGroup::Diffusion => self.diffusion,
            ParamGroup::Output => self.output,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Dense {
    weight: ParamId,
    bias: ParamId,
}

/// Output of one path for one input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TaskOutput {
    Probabilities(Vec<f64>),
    Gaussian { mean: f64, sigma: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathSample {
    /// `x_T`.
    pub final_state: Vec<f64>,
    pub output: TaskOutput,
    /// `g(x_0)` for the path's input.
    pub diffusion: f64,
}

/// Options for [`SdeNet::forward_paths`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathOptions {
    pub paths: usize,
    pub seed: u64,
    pub sigma_max: f64,
    /// Key of the first input row; row `i` uses `first_input + i`.
    pub first_input: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdeNet {
    config: ModelConfig,
    params: ParamStore,
    groups: Vec<ParamGroup>,
    head: Vec<Dense>,
    drift: [Dense; 2],
    diffusion: [Dense; 2],
    output: Dense,
}

impl SdeNet {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, Domain::Init, 0, 0);
        let mut params = ParamStore::new();
        let mut groups = Vec::new();
        let mut layer = |name: String, fan_in: usize, fan_out: usize, next: Activation, group: ParamGroup| {
            let weight = params.add(format!("{name}.weight"), init_weight(&mut rng, fan_in, fan_out, next));
            let bias = params.add(format!("{name}.bias"), Tensor::zeros(&[1, fan_out]));
            groups.extend([group, group]);
            Dense { weight, bias }
        };

        let d = config.state_dim;
        let mut head = Vec::new();
        let mut width = config.input_dim;
        for (i, &h) in config.head_hidden.iter().enumerate() {
            head.push(layer(format!("head.{i}"), width, h, Activation::Relu, ParamGroup::Head));
            width = h;
        }
        head.push(layer(
            format!("head.{}", config.head_hidden.len()),
            width,
            d,
            Activation::Identity,
            ParamGroup::Head,
        ));
        let drift = [
            layer("drift.0".into(), d + 1, config.drift_hidden, Activation::Relu, ParamGroup::Drift),
            layer("drift.1".into(), config.drift_hidden, d, Activation::Identity, ParamGroup::Drift),
        ];
        let diffusion = [
            layer("diffusion.0".into(), d, config.diffusion_hidden, Activation::Relu, ParamGroup::Diffusion),
            layer("diffusion.1".into(), config.diffusion_hidden, 1, Activation::Sigmoid, ParamGroup::Diffusion),
        ];
        let output = layer("output".into(), d, config.task.output_width(), Activation::Identity, ParamGroup::Output);

        Ok(SdeNet {
            config,
            params,
            groups,
            head,
            drift,
            diffusion,
            output,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn set_sigma_max(&mut self, train: f64, test: f64) -> Result<()> {
        let mut config = self.config.clone();
        config.sigma_max_train = train;
        config.sigma_max_test = test;
        config.validate()?;
        self.config = config;
        Ok(())
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        self.groups[id.0]
    }

    /// Parameter ids belonging to any group allowed by `scope`.
    pub fn param_ids(&self, scope: Trainable) -> Vec<ParamId> {
        self.params.ids().filter(|id| scope.allows(self.group(*id))).collect()
    }

    pub fn task(&self) -> Task {
        self.config.task
    }

    // ---- graph builders -------------------------------------------------

    fn param_node(&self, g: &mut Graph, id: ParamId, scope: Trainable) -> NodeId {
        if scope.allows(self.group(id)) {
            g.param(id)
        } else {
            g.frozen_param(id)
        }
    }

    fn dense(&self, g: &mut Graph, layer: Dense, x: NodeId, scope: Trainable) -> NodeId {
        let w = self.param_node(g, layer.weight, scope);
        let b = self.param_node(g, layer.bias, scope);
        let xw = g.matmul(x, w);
        g.add_row(xw, b)
    }

    /// `x_0 = h1(x)`.
    pub fn build_head(&self, g: &mut Graph, x: NodeId, scope: Trainable) -> NodeId {
        let mut h = x;
        let last = self.head.len() - 1;
        for (i, layer) in self.head.iter().enumerate() {
            h = self.dense(g, *layer, h, scope);
            if i < last {
                h = g.relu(h);
            }
        }
        h
    }

    /// Pre-sigmoid diffusion logit `[rows, 1]`.
    pub fn build_diffusion_logit(&self, g: &mut Graph, x0: NodeId, scope: Trainable) -> NodeId {
        let h = self.dense(g, self.diffusion[0], x0, scope);
        let h = g.relu(h);
        self.dense(g, self.diffusion[1], h, scope)
    }

    /// `g(x_0) = sigma_max * sigmoid(logit)`, or `None` when `sigma_max == 0`.
    pub fn build_diffusion(&self, g: &mut Graph, x0: NodeId, sigma_max: f64, scope: Trainable) -> Option<NodeId> {
        if sigma_max == 0.0 {
            return None;
        }
        let logit = self.build_diffusion_logit(g, x0, scope);
        let s = g.sigmoid(logit);
        Some(g.scale(s, sigma_max))
    }

    /// Appends the time `t` as one extra input column.
    pub fn time_conditioning(g: &mut Graph, state: NodeId, t: f64) -> NodeId {
        g.append_column(state, t)
    }

    /// `f(x, t)`.
    pub fn build_drift(&self, g: &mut Graph, x: NodeId, t: f64, scope: Trainable) -> NodeId {
        let xt = Self::time_conditioning(g, x, t);
        let h = self.dense(g, self.drift[0], xt, scope);
        let h = g.relu(h);
        self.dense(g, self.drift[1], h, scope)
    }

    /// One Euler–Maruyama step from `x_k` at step index `k`.
    pub fn build_step(
        &self,
        g: &mut Graph,
        x_k: NodeId,
        k: usize,
        diffusion: Option<NodeId>,
        z_k: NodeId,
        scope: Trainable,
    ) -> NodeId {
        let solver = self.config.solver;
        let f = self.build_drift(g, x_k, solver.time(k), scope);
        euler_maruyama_update(g, x_k, f, diffusion, z_k, solver.dt())
    }

    /// Integrates from `x_0` to `x_T`; `noise[k]` feeds step `k`.
    pub fn build_path(
        &self,
        g: &mut Graph,
        x0: NodeId,
        diffusion: Option<NodeId>,
        noise: &[NodeId],
        scope: Trainable,
    ) -> NodeId {
        let mut x = x0;
        for (k, &z) in noise.iter().enumerate().take(self.config.solver.steps) {
            x = self.build_step(g, x, k, diffusion, z, scope);
        }
        x
    }

    /// Raw `h2(x_T)`: logits, or `[mean, pre-softplus scale]` for regression.
    pub fn build_output(&self, g: &mut Graph, x_t: NodeId, scope: Trainable) -> NodeId {
        self.dense(g, self.output, x_t, scope)
    }

    /// Regression mean and scale columns from raw head output.
    pub fn build_gaussian(g: &mut Graph, out: NodeId) -> (NodeId, NodeId) {
        let mean = g.column(out, 0);
        let raw = g.column(out, 1);
        let sp = g.softplus(raw);
        (mean, g.add_scalar(sp, SIGMA_FLOOR))
    }

    /// Per-row task loss: cross-entropy or Gaussian negative log-likelihood.
    pub fn build_task_loss(&self, g: &mut Graph, out: NodeId, target: NodeId) -> NodeId {
        match self.config.task {
            Task::Classification { .. } => g.softmax_cross_entropy(out, target),
            Task::Regression => {
                let (mean, sigma) = Self::build_gaussian(g, out);
                g.gaussian_nll(mean, sigma, target)
            }
        }
    }

    /// Noise input nodes named `z0 .. z{N-1}`.
    pub fn noise_inputs(&self, g: &mut Graph) -> Vec<NodeId> {
        (0..self.config.solver.steps)
            .map(|k| g.input(&noise_name(k)))
            .collect()
    }

    // ---- evaluation -----------------------------------------------------

    /// `x_0 = h1(x)` and `g(x_0)` (zero column when the bound is 0).
    pub fn initial_state(&self, x: &Tensor, sigma_max: f64) -> Result<(Tensor, Vec<f64>)> {
        let mut g = Graph::new();
        let xin = g.input("x");
        let x0 = self.build_head(&mut g, xin, Trainable::NONE);
        let diff = self.build_diffusion(&mut g, x0, sigma_max, Trainable::NONE);
        g.forward(&self.params, &[("x", x)])?;
        let x0v = g.value(x0)?.clone();
        let gv = match diff {
            Some(d) => g.value(d)?.data().to_vec(),
            None => vec![0.0; x.rows()],
        };
        Ok((x0v, gv))
    }

    /// Diffusion magnitudes `g(h1(x))` under the given bound.
    pub fn diffusion_values(&self, x: &Tensor, sigma_max: f64) -> Result<Vec<f64>> {
        Ok(self.initial_state(x, sigma_max)?.1)
    }

    /// One Euler–Maruyama step on concrete tensors: `x_{k+1}` from `x_k`, `x_0` and `z_k`.
    pub fn step(&self, x_k: &Tensor, x_0: &Tensor, k: usize, z_k: &Tensor, sigma_max: f64) -> Result<Tensor> {
        if k >= self.config.solver.steps {
            return Err(Error::Config(format!(
                "step index {k} outside 0..{}",
                self.config.solver.steps
            )));
        }
        let mut g = Graph::new();
        let xk = g.input("xk");
        let x0 = g.input("x0");
        let z = g.input("z");
        let diff = self.build_diffusion(&mut g, x0, sigma_max, Trainable::NONE);
        let next = self.build_step(&mut g, xk, k, diff, z, Trainable::NONE);
        g.forward(&self.params, &[("xk", x_k), ("x0", x_0), ("z", z_k)])
            .map_err(|e| e.with_context(format!("euler-maruyama step {k}")))?;
        Ok(g.value(next)?.clone())
    }

    /// Runs `paths` stochastic forward passes for every row of `x`.
    ///
    /// Returns `samples[input][path]`. `h1` and `g` are evaluated once per input;
    /// each path draws its increments from the stream keyed by
    /// `(seed, first_input + row, path)`.
    pub fn forward_paths(&self, x: &Tensor, opts: PathOptions) -> Result<Vec<Vec<PathSample>>> {
        if opts.paths == 0 {
            return Err(Error::Config("forward_paths needs at least one path".into()));
        }
        let rows = x.rows();
        let (x0, gvals) = self.initial_state(x, opts.sigma_max)?;
        let keys: Vec<u64> = (0..rows as u64).map(|i| opts.first_input + i).collect();

        let mut g = Graph::new();
        let x0n = g.input("x0");
        let diff = (opts.sigma_max != 0.0).then(|| g.input("g"));
        let noise = self.noise_inputs(&mut g);
        let x_t = self.build_path(&mut g, x0n, diff, &noise, Trainable::NONE);
        let out = self.build_output(&mut g, x_t, Trainable::NONE);
        let head = match self.config.task {
            Task::Classification { .. } => g.softmax(out),
            Task::Regression => {
                let (mean, sigma) = Self::build_gaussian(&mut g, out);
                g.concat_cols(mean, sigma)
            }
        };

        let gcol = Tensor::column(gvals.clone());
        let names: Vec<String> = (0..self.config.solver.steps).map(noise_name).collect();
        let mut samples: Vec<Vec<PathSample>> = (0..rows).map(|_| Vec::with_capacity(opts.paths)).collect();
        for path in 0..opts.paths {
            let zs: Vec<Tensor> = (0..self.config.solver.steps)
                .map(|k| {
                    rng::step_noise(opts.seed, Domain::PathNoise, &keys, path as u64, k as u64, self.config.state_dim)
                })
                .collect();
            let mut bindings: Vec<(&str, &Tensor)> = vec![("x0", &x0), ("g", &gcol)];
            bindings.extend(names.iter().map(String::as_str).zip(zs.iter()));
            g.forward(&self.params, &bindings)
                .map_err(|e| e.with_context(format!("path {path}")))?;
            let xt = g.value(x_t)?;
            let hv = g.value(head)?;
            for (i, sample) in samples.iter_mut().enumerate() {
                let output = match self.config.task {
                    Task::Classification { .. } => TaskOutput::Probabilities(hv.row(i).to_vec()),
                    Task::Regression => TaskOutput::Gaussian {
                        mean: hv.get(i, 0),
                        sigma: hv.get(i, 1),
                    },
                };
                sample.push(PathSample {
                    final_state: xt.row(i).to_vec(),
                    output,
                    diffusion: gvals[i],
                });
            }
        }
        Ok(samples)
    }

    // ---- persistence ----------------------------------------------------

    /// Writes the parameter checkpoint and the JSON hyperparameter sidecar.
    pub fn save(&self, checkpoint: &Path, sidecar: &Path) -> Result<()> {
        self.params.save(checkpoint)?;
        let json = serde_json::to_string_pretty(&self.config)?;
        fs::write(sidecar, json).map_err(|e| Error::io(sidecar, e))
    }

    pub fn load(checkpoint: &Path, sidecar: &Path) -> Result<Self> {
        let text = fs::read_to_string(sidecar).map_err(|e| Error::io(sidecar, e))?;
        let config: ModelConfig = serde_json::from_str(&text)?;
        let mut model = SdeNet::new(config, 0)?;
        model.params.load(checkpoint)?;
        Ok(model)
    }
}

pub fn noise_name(k: usize) -> String {
    format!("z{k}")
}
