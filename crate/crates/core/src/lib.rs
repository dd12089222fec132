//! Controllable fair representation learning.
//!
//! Representations `z ~ q(z|x,u)` are trained to keep as much information
//! about the inputs `x` as possible while the mutual information between `z`
//! and a sensitive attribute `u` stays under user-chosen budgets. The
//! information terms are replaced by tractable bounds:
//!
//! | term | role | estimator |
//! |------|------|-----------|
//! | `L_r` | lower-bounds `I(x;z|u)` | decoder negative log-likelihood |
//! | `C1` | upper-bounds `I(z;u)` | mean `KL(q(z|x,u) ‖ p(z))` |
//! | `C2` | adversarial `I(z;u)` estimate | adversary `E[log p(u|z) − log p(u)]` |
//! | `C_EO`, `C_EOpp` | equalized odds / opportunity | label-conditioned adversary |
//!
//! Training either fixes the multipliers of those constraints (MIFR) or runs
//! dual ascent on them (L-MIFR), see [`trainer`]. [`eval`] holds the kernel
//! density MI estimators, the downstream classifier and fairness metrics.
//!
//! All information quantities are in nats.

mod codec;
pub mod data;
pub mod dist;
pub mod error;
pub mod eval;
pub mod model;
pub mod numcore;
pub mod objective;
pub mod trainer;

pub use data::{Batch, TabularDataset};
pub use dist::{DiagGaussian, EmpiricalCategorical, FactoredBernoulli, GaussianMixture};
pub use error::{Error, Result};
pub use model::{ModelConfig, ModelParams};
pub use numcore::{RngStream, Tape, Tensor, Var};
pub use objective::{BatchEstimates, ConstraintId, ConstraintSpec, Multipliers, PerConstraint};
pub use trainer::{Mode, TrainConfig, TrainState};

/// Version tag written into checkpoints.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
