use crate::data::TabularDataset;
use crate::error::Result;
use crate::objective::{ConstraintId, ConstraintSpec, Multipliers};
use crate::trainer::{Mode, TrainConfig, Trainer};

/// Suggested budgets: the smallest `ε1` a plain conditional VAE reaches and
/// the largest useful `ε2`, `H(u)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeasibleEps {
    pub eps1_floor: f64,
    pub eps2_ceiling: f64,
    pub probe_epochs: u64,
}

/// Train a conditional VAE (`λ1 = 1`, no adversarial term) for
/// `probe_epochs` with the architecture and optimizer settings of `base`,
/// then report its full-data `C1` and the entropy of `u`.
pub fn estimate_feasible_eps(base: &TrainConfig, data: &TabularDataset, probe_epochs: u64) -> Result<FeasibleEps> {
    let mut config = base.clone();
    config.mode = Mode::Mifr;
    config.epochs = probe_epochs;
    config.constraints = ConstraintSpec::new().with_unbudgeted(ConstraintId::C1);
    config.initial_multipliers = Multipliers::splat(0.0);
    config.initial_multipliers.lambda.c1 = 1.0;
    config.model.label_conditioned_adversaries = false;
    config.pin_encoder_to_prior = false;
    let mut trainer = Trainer::new(config, data)?;
    trainer.run()?;
    let est = trainer.evaluate()?;
    Ok(FeasibleEps {
        eps1_floor: est.c.c1.expect("C1 is always evaluated"),
        eps2_ceiling: data.u_marginal()?.entropy(),
        probe_epochs,
    })
}
