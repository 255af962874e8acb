//! Deep-ensemble baseline: independently initialised zero-diffusion members.

use crate::autodiff::Tensor;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, PathOptions, SdeNet, TaskOutput};
use crate::training::{self, TrainConfig};
use crate::uncertainty;

#[derive(Clone, Debug, PartialEq)]
pub struct DeepEnsemble {
    pub members: Vec<SdeNet>,
}

impl DeepEnsemble {
    /// Trains `size` members, each with its own initialisation and data order.
    pub fn train(config: &ModelConfig, size: usize, data: &Dataset, train: &TrainConfig, seed: u64) -> Result<Self> {
        if size == 0 {
            return Err(Error::Config("ensemble needs at least one member".into()));
        }
        let mut member_config = config.clone();
        member_config.sigma_max_train = 0.0;
        member_config.sigma_max_test = 0.0;
        let mut members = Vec::with_capacity(size);
        for m in 0..size as u64 {
            let member_seed = seed.wrapping_add(m.wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let mut model = SdeNet::new(member_config.clone(), member_seed)?;
            let tc = TrainConfig {
                seed: member_seed,
                ..train.clone()
            };
            training::train(&mut model, data, None, &tc).map_err(|e| e.with_context(format!("ensemble member {m}")))?;
            members.push(model);
        }
        Ok(DeepEnsemble { members })
    }

    /// Member-averaged class probabilities per input.
    pub fn probabilities(&self, x: &Tensor) -> Result<Vec<Vec<f64>>> {
        let mut mean: Vec<Vec<f64>> = Vec::new();
        for model in &self.members {
            let opts = PathOptions {
                paths: 1,
                seed: 0,
                sigma_max: 0.0,
                first_input: 0,
            };
            for (i, samples) in model.forward_paths(x, opts)?.iter().enumerate() {
                let TaskOutput::Probabilities(p) = &samples[0].output else {
                    return Err(Error::Config("ensemble scoring needs a classification task".into()));
                };
                if mean.len() <= i {
                    mean.push(vec![0.0; p.len()]);
                }
                mean[i].iter_mut().zip(p).for_each(|(m, v)| *m += v);
            }
        }
        let k = self.members.len() as f64;
        mean.iter_mut().flatten().for_each(|v| *v /= k);
        Ok(mean)
    }

    /// Largest averaged class probability per input.
    pub fn max_prob(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self
            .probabilities(x)?
            .iter()
            .map(|p| p[uncertainty::argmax(p)])
            .collect())
    }
}
