//! Neural stochastic differential equation networks for uncertainty estimation.
//!
//! An [`SdeNet`](model::SdeNet) maps an input through a head layer to an initial
//! state, integrates `dx = f(x, t) dt + g(x0) dW` with a fixed-step
//! Euler–Maruyama scheme, and reads the task output from the final state. The
//! drift net `f` fits the task; the diffusion net `g` is trained to be small on
//! in-distribution inputs and large on perturbed ones, so the spread of final
//! states across sampled paths measures epistemic uncertainty.
//!
//! Modules:
//! - [`autodiff`]: dense tensors, reverse-mode graph, momentum SGD.
//! - [`model`], [`solver`]: the network and its stochastic forward pass.
//! - [`training`]: alternating drift / diffusion optimisation.
//! - [`uncertainty`]: aleatoric / epistemic scores from sampled paths.
//! - [`metrics`]: AUROC, AUPR, TNR at TPR 95%, detection accuracy, ECE.
//! - [`adversarial`]: FGSM / PGD and adversarial-input detection.
//! - [`active_learning`]: uncertainty-weighted acquisition loop.
//! - [`data`]: synthetic generators, CSV I/O, normalisation.
//! - [`experiment`]: configuration and end-to-end experiment runners.

pub mod active_learning;
pub mod adversarial;
pub mod autodiff;
pub mod data;
pub mod ensemble;
mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod solver;
pub mod training;
pub mod uncertainty;

pub use error::{Error, Result};
pub use model::{ModelConfig, SdeNet, Task};
