//! Fixed-step Euler–Maruyama integration of the network state.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};

/// Terminal time `T` and step count `N`; the step is `dt = T / N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub terminal_time: f64,
    pub steps: usize,
}

impl SolverConfig {
    pub fn new(terminal_time: f64, steps: usize) -> Result<Self> {
        let config = SolverConfig { terminal_time, steps };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("solver needs at least one step".into()));
        }
        if !(self.terminal_time > 0.0 && self.terminal_time.is_finite()) {
            return Err(Error::Config(format!(
                "terminal time must be positive, got {}",
                self.terminal_time
            )));
        }
        if self.dt() * self.steps as f64 != self.terminal_time {
            return Err(Error::Config(format!(
                "T = {} is not recovered exactly as {} steps of dt = {}",
                self.terminal_time,
                self.steps,
                self.dt()
            )));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.terminal_time / self.steps as f64
    }

    /// `t_k = k * dt`.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            terminal_time: 1.0,
            steps: 6,
        }
    }
}

/// Appends `x_{k+1} = x_k + drift * dt + diffusion * sqrt(dt) * z_k` to the graph.
///
/// `drift` is `f(x_k, t_k)` already in the graph, `diffusion` the `[rows, 1]`
/// column `g(x_0)` (absent for a zero-diffusion model) and `z_k` the `[rows, d]`
/// standard normal increments, which enter as constants.
pub fn euler_maruyama_update(
    graph: &mut Graph,
    x_k: NodeId,
    drift: NodeId,
    diffusion: Option<NodeId>,
    z_k: NodeId,
    dt: f64,
) -> NodeId {
    let drift_term = graph.scale(drift, dt);
    let next = graph.add(x_k, drift_term);
    match diffusion {
        Some(g) => {
            let shock = graph.mul_col(z_k, g);
            let shock = graph.scale(shock, dt.sqrt());
            graph.add(next, shock)
        }
        None => next,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dt_times_steps_is_exact() {
        for n in [1, 2, 4, 6, 10, 100] {
            let c = SolverConfig::new(1.0, n).unwrap();
            assert_eq!(c.dt() * n as f64, 1.0);
        }
        assert!(SolverConfig::new(1.0, 0).is_err());
        assert!(SolverConfig::new(-1.0, 4).is_err());
    }

    #[test]
    fn first_step_time_is_zero() {
        let c = SolverConfig::new(1.0, 4).unwrap();
        assert_eq!(c.time(0), 0.0);
        assert_eq!(c.time(3), 0.75);
    }
}
