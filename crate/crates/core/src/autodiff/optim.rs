use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Momentum SGD with weight decay folded into the velocity:
/// `v <- momentum * v + (grad + weight_decay * param)`, `param <- param - lr * v`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Rescales the gradient of each step to at most this global L2 norm.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
    velocity: BTreeMap<ParamId, Vec<f64>>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {learning_rate}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {momentum}")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight decay must be nonnegative, got {weight_decay}")));
        }
        Ok(Sgd {
            learning_rate,
            momentum,
            weight_decay,
            max_grad_norm: None,
            velocity: BTreeMap::new(),
        })
    }

    pub fn with_max_grad_norm(mut self, max_norm: Option<f64>) -> Result<Self> {
        if let Some(m) = max_norm {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::Config(format!("max_grad_norm must be positive, got {m}")));
            }
        }
        self.max_grad_norm = max_norm;
        Ok(self)
    }

    pub fn velocity(&self, id: ParamId) -> Option<&[f64]> {
        self.velocity.get(&id).map(Vec::as_slice)
    }

    /// Updates the parameters in `ids`. A parameter without a gradient entry is
    /// treated as having zero gradient. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, ids: &[ParamId]) -> Result<()> {
        for &id in ids {
            if let Some(g) = grads.param(id) {
                if g.shape() != params.get(id).shape() {
                    return Err(Error::shape(
                        "sgd_step",
                        format!(
                            "gradient {:?} vs parameter {:?} for {}",
                            g.shape(),
                            params.get(id).shape(),
                            params.name(id)
                        ),
                    ));
                }
                if !g.is_finite() {
                    return Err(Error::numeric(format!("sgd_step: gradient of {}", params.name(id))));
                }
            }
        }
        let norm = ids
            .iter()
            .filter_map(|&id| grads.param(id))
            .flat_map(|g| g.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        let factor = match self.max_grad_norm {
            Some(m) if norm > m => m / norm,
            _ => 1.0,
        };
        for &id in ids {
            let param = params.get_mut(id);
            let n = param.numel();
            let v = self.velocity.entry(id).or_insert_with(|| vec![0.0; n]);
            let grad = grads.param(id).map(|g| g.data());
            for (j, (p, vj)) in param.data_mut().iter_mut().zip(v.iter_mut()).enumerate() {
                let g = grad.map_or(0.0, |g| g[j] * factor);
                *vj = self.momentum * *vj + (g + self.weight_decay * *p);
                *p -= self.learning_rate * *vj;
            }
        }
        Ok(())
    }
}
