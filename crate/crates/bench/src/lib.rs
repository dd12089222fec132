//! Shared fixtures for the benchmarks.

use mifr_core::data::{synthetic_gen, SyntheticSpec};
use mifr_core::trainer::model_config_for;
use mifr_core::{ConstraintId, ConstraintSpec, Mode, TabularDataset, TrainConfig};

/// A synthetic table about as wide as preprocessed Adult.
pub fn adult_like(n: usize) -> TabularDataset {
    let spec = SyntheticSpec {
        n,
        binary_dim: 96,
        continuous_dim: 6,
        rho: 0.6,
        ..SyntheticSpec::default()
    };
    synthetic_gen(&spec, 1).expect("valid synthetic spec")
}

/// L-MIFR with the default architecture and `adversary_steps` adversary steps.
pub fn lmifr_config(data: &TabularDataset, adversary_steps: usize) -> TrainConfig {
    let spec = ConstraintSpec::new().with(ConstraintId::C1, 10.0).with(ConstraintId::C2, 0.1);
    let mut c = TrainConfig::new(Mode::Lmifr, model_config_for(data, 10, 50, false), spec);
    c.adversary_steps = adversary_steps;
    c.epochs = 1_000;
    c
}
