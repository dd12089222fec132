//! Training objectives: the reconstruction term, the constraint estimates and
//! the two ways of combining them.
//!
//! Terms are built on a [`Tape`] so the trainer can differentiate one combined
//! loss; the plain functions (`recon_loss`, `c1_term`, ...) evaluate a single
//! term for fixed parameters.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::dist::EmpiricalCategorical;
use crate::error::{invalid, Error, Result};
use crate::model::{
    adversary_forward, decoder_forward, decoder_log_lik_rows, encoder_forward, kl_to_standard_normal_rows,
    log_lik_of_groups, reparameterize_on_tape, AdversaryParams, DecoderParams, EncoderParams, EncoderVars,
    PosteriorVars, TwoLayerVars,
};
use crate::numcore::{Tape, Tensor, Var};

pub const LAMBDA_MIN: f64 = 0.01;
pub const LAMBDA_MAX: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConstraintId {
    C1,
    C2,
    Eo,
    Eopp,
}

impl ConstraintId {
    pub const ALL: [ConstraintId; 4] = [ConstraintId::C1, ConstraintId::C2, ConstraintId::Eo, ConstraintId::Eopp];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ConstraintId::C1 => "C1",
            ConstraintId::C2 => "C2",
            ConstraintId::Eo => "C_EO",
            ConstraintId::Eopp => "C_EOpp",
        }
    }

    /// Key used in configuration files.
    pub fn key(self) -> &'static str {
        match self {
            ConstraintId::C1 => "c1",
            ConstraintId::C2 => "c2",
            ConstraintId::Eo => "eo",
            ConstraintId::Eopp => "eopp",
        }
    }

    pub fn needs_labels(self) -> bool {
        matches!(self, ConstraintId::Eo | ConstraintId::Eopp)
    }
}

/// One value per constraint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerConstraint<T> {
    #[serde(default)]
    pub c1: T,
    #[serde(default)]
    pub c2: T,
    #[serde(default)]
    pub eo: T,
    #[serde(default)]
    pub eopp: T,
}

impl<T: Clone> PerConstraint<T> {
    pub fn splat(v: T) -> Self {
        Self {
            c1: v.clone(),
            c2: v.clone(),
            eo: v.clone(),
            eopp: v,
        }
    }
}

impl<T> PerConstraint<T> {
    pub fn map<U>(&self, mut f: impl FnMut(ConstraintId, &T) -> U) -> PerConstraint<U> {
        PerConstraint {
            c1: f(ConstraintId::C1, &self.c1),
            c2: f(ConstraintId::C2, &self.c2),
            eo: f(ConstraintId::Eo, &self.eo),
            eopp: f(ConstraintId::Eopp, &self.eopp),
        }
    }
}

impl<T> Index<ConstraintId> for PerConstraint<T> {
    type Output = T;

    fn index(&self, id: ConstraintId) -> &T {
        match id {
            ConstraintId::C1 => &self.c1,
            ConstraintId::C2 => &self.c2,
            ConstraintId::Eo => &self.eo,
            ConstraintId::Eopp => &self.eopp,
        }
    }
}

impl<T> IndexMut<ConstraintId> for PerConstraint<T> {
    fn index_mut(&mut self, id: ConstraintId) -> &mut T {
        match id {
            ConstraintId::C1 => &mut self.c1,
            ConstraintId::C2 => &mut self.c2,
            ConstraintId::Eo => &mut self.eo,
            ConstraintId::Eopp => &mut self.eopp,
        }
    }
}

/// Which constraints are active and their budgets in nats.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    #[serde(default)]
    pub enabled: PerConstraint<bool>,
    #[serde(default)]
    pub eps: PerConstraint<Option<f64>>,
}

impl ConstraintSpec {
    pub fn new() -> Self {
        Self::default()
    }

    /// Enable `id` with budget `eps`.
    pub fn with(mut self, id: ConstraintId, eps: f64) -> Self {
        self.enabled[id] = true;
        self.eps[id] = Some(eps);
        self
    }

    /// Enable `id` without a budget (fixed-multiplier training only).
    pub fn with_unbudgeted(mut self, id: ConstraintId) -> Self {
        self.enabled[id] = true;
        self
    }

    pub fn is_enabled(&self, id: ConstraintId) -> bool {
        self.enabled[id]
    }

    pub fn enabled_ids(&self) -> Vec<ConstraintId> {
        ConstraintId::ALL.into_iter().filter(|&c| self.enabled[c]).collect()
    }

    /// Budget of `id`; `+∞` when disabled or unset.
    pub fn budget(&self, id: ConstraintId) -> f64 {
        match (self.enabled[id], self.eps[id]) {
            (true, Some(e)) => e,
            _ => f64::INFINITY,
        }
    }

    pub fn needs_labels(&self) -> bool {
        self.enabled_ids().into_iter().any(ConstraintId::needs_labels)
    }

    /// Checks required by dual training: something is enabled and every
    /// enabled budget is finite and positive.
    pub fn validate_for_dual(&self) -> Result<()> {
        let ids = self.enabled_ids();
        if ids.is_empty() {
            return Err(invalid("dual training needs at least one enabled constraint"));
        }
        for id in ids {
            match self.eps[id] {
                Some(e) if e.is_finite() && e > 0.0 => {}
                other => {
                    return Err(invalid(format!(
                        "constraint {} needs a finite positive budget, got {other:?}",
                        id.name()
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for id in ConstraintId::ALL {
            if let Some(e) = self.eps[id] {
                if self.enabled[id] && !(e > 0.0) {
                    return Err(invalid(format!("budget of {} must be positive, got {e}", id.name())));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub lambda: PerConstraint<f64>,
}

impl Multipliers {
    pub fn splat(v: f64) -> Self {
        Self {
            lambda: PerConstraint::splat(v),
        }
    }

    pub fn clamped(mut self) -> Self {
        for id in ConstraintId::ALL {
            self.lambda[id] = self.lambda[id].clamp(LAMBDA_MIN, LAMBDA_MAX);
        }
        self
    }
}

impl Default for Multipliers {
    fn default() -> Self {
        Self::splat(1.0)
    }
}

/// Term values of one minibatch, in nats. Constraints that were not computed
/// are `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchEstimates {
    pub l_r: f64,
    pub c: PerConstraint<Option<f64>>,
    pub batch_size: usize,
}

impl BatchEstimates {
    pub fn is_finite(&self) -> bool {
        self.l_r.is_finite() && ConstraintId::ALL.iter().all(|&id| self.c[id].map_or(true, f64::is_finite))
    }
}

/// Fixed-multiplier loss `L_r + Σ λ_i C_i` over the computed constraints.
pub fn mifr_loss(est: &BatchEstimates, lambda: &Multipliers) -> f64 {
    est.l_r
        + ConstraintId::ALL
            .iter()
            .filter_map(|&id| est.c[id].map(|c| lambda.lambda[id] * c))
            .sum::<f64>()
}

/// Lagrangian `L_r + Σ λ_i (C_i − ε_i)` over enabled, budgeted constraints.
pub fn lmifr_loss(est: &BatchEstimates, lambda: &Multipliers, spec: &ConstraintSpec) -> f64 {
    est.l_r
        + ConstraintId::ALL
            .iter()
            .filter(|&&id| spec.budget(id).is_finite())
            .filter_map(|&id| est.c[id].map(|c| lambda.lambda[id] * (c - spec.budget(id))))
            .sum::<f64>()
}

/// `λ_i ← clamp(λ_i + η (C_i − ε_i), 0.01, 100)` for every enabled, budgeted
/// constraint with an estimate; other multipliers are unchanged.
pub fn lambda_ascent_step(
    lambda: &Multipliers,
    est: &BatchEstimates,
    spec: &ConstraintSpec,
    eta_lambda: f64,
) -> Result<Multipliers> {
    if !(eta_lambda > 0.0) {
        return Err(invalid(format!("eta_lambda must be positive, got {eta_lambda}")));
    }
    let mut next = *lambda;
    for id in ConstraintId::ALL {
        let eps = spec.budget(id);
        if let (true, Some(c)) = (eps.is_finite(), est.c[id]) {
            next.lambda[id] = (lambda.lambda[id] + eta_lambda * (c - eps)).clamp(LAMBDA_MIN, LAMBDA_MAX);
        }
    }
    Ok(next)
}

/// Where the posterior comes from: the encoder, or the fixed prior `N(0, I)`.
#[derive(Clone, Copy, Debug)]
pub enum EncoderSource<'a> {
    Params(&'a EncoderParams),
    Prior { z_dim: usize },
}

/// Posterior and sample of one batch on a tape.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    /// Encoder parameter vars, when the source has parameters.
    pub vars: Option<EncoderVars>,
    pub post: PosteriorVars,
    pub z: Var,
}

pub fn encode_on_tape(
    tape: &mut Tape,
    source: EncoderSource,
    trainable: bool,
    batch: &Batch,
    noise: &Tensor,
) -> Result<Encoded> {
    non_empty(batch)?;
    let (vars, post) = match source {
        EncoderSource::Params(enc) => {
            let vars = enc.bind(tape, trainable);
            let post = encoder_forward(tape, &vars, &batch.x, &batch.u_onehot)?;
            (Some(vars), post)
        }
        EncoderSource::Prior { z_dim } => {
            let mean = tape.constant(Tensor::zeros(&[batch.len(), z_dim]));
            let log_std = tape.constant(Tensor::zeros(&[batch.len(), z_dim]));
            (None, PosteriorVars { mean, log_std })
        }
    };
    if noise.shape() != tape.value(post.mean).shape() {
        return Err(Error::ShapeMismatch {
            op: "encoder noise",
            left: tape.value(post.mean).shape().to_vec(),
            right: noise.shape().to_vec(),
        });
    }
    let z = reparameterize_on_tape(tape, post, noise)?;
    Ok(Encoded { vars, post, z })
}

fn non_empty(batch: &Batch) -> Result<()> {
    if batch.is_empty() {
        Err(Error::Empty("batch"))
    } else {
        Ok(())
    }
}

/// `L_r = −mean log p(x | z, u)`.
pub fn recon_on_tape(tape: &mut Tape, dec: &TwoLayerVars, mask: &[bool], z: Var, batch: &Batch) -> Result<Var> {
    let out = decoder_forward(tape, dec, z, &batch.u_onehot)?;
    let ll = decoder_log_lik_rows(tape, out, &batch.x, mask)?;
    let m = tape.mean(ll)?;
    Ok(tape.scale(m, -1.0))
}

/// `C1 = mean KL(q(z|x,u) ‖ N(0, I))`.
pub fn c1_on_tape(tape: &mut Tape, post: PosteriorVars) -> Result<Var> {
    let rows = kl_to_standard_normal_rows(tape, post)?;
    tape.mean(rows)
}

/// Per-row `log p_ψ(u_i | z_i [, y_i]) − log p(u_i)`, shape `[n, 1]`.
pub fn log_ratio_rows(
    tape: &mut Tape,
    adv: &TwoLayerVars,
    label_conditioned: bool,
    z: Var,
    batch: &Batch,
    p_u: &EmpiricalCategorical,
) -> Result<Var> {
    if p_u.group_count() != batch.u_onehot.cols() {
        return Err(invalid("marginal and batch disagree on the group count"));
    }
    let y = if label_conditioned {
        Some(batch.y.as_deref().ok_or_else(|| invalid("label constraints need labels"))?)
    } else {
        None
    };
    let logits = adversary_forward(tape, adv, label_conditioned, z, y)?;
    let ll = log_lik_of_groups(tape, logits, &batch.u)?;
    let log_pu = Tensor::from_parts(vec![batch.len(), 1], batch.u.iter().map(|&g| p_u.log_prob(g)).collect());
    let log_pu = tape.constant(log_pu);
    tape.sub(ll, log_pu)
}

/// `C2 = mean [log p_ψ(u|z) − log p(u)]`.
pub fn c2_on_tape(
    tape: &mut Tape,
    adv: &TwoLayerVars,
    z: Var,
    batch: &Batch,
    p_u: &EmpiricalCategorical,
) -> Result<Var> {
    let r = log_ratio_rows(tape, adv, false, z, batch, p_u)?;
    tape.mean(r)
}

/// Row weights turning per-row values into label-slice combinations:
/// `q(y_i) / n_{y_i}` for equalized odds, `1/n_1` on positives for
/// opportunity. Slices absent from the batch contribute nothing.
fn slice_weights(y: &[u8], q_y1: Option<f64>) -> Tensor {
    let n1 = y.iter().filter(|&&v| v == 1).count();
    let n0 = y.len() - n1;
    let w = y
        .iter()
        .map(|&v| match (v, q_y1) {
            (1, Some(q)) => q / n1 as f64,
            (_, Some(q)) => (1.0 - q) / n0 as f64,
            (1, None) => 1.0 / n1 as f64,
            (_, None) => 0.0,
        })
        .collect();
    Tensor::from_parts(vec![y.len(), 1], w)
}

fn check_q(q_y1: f64) -> Result<()> {
    if (0.0..=1.0).contains(&q_y1) {
        Ok(())
    } else {
        Err(invalid(format!("label frequency must be in [0, 1], got {q_y1}")))
    }
}

/// `C_EO = q(1)·slice_{y=1} + q(0)·slice_{y=0}` with the label-conditioned
/// adversary, `q(1)` being the dataset's positive rate.
pub fn ceo_on_tape(
    tape: &mut Tape,
    adv_y: &TwoLayerVars,
    z: Var,
    batch: &Batch,
    p_u: &EmpiricalCategorical,
    q_y1: f64,
) -> Result<Var> {
    check_q(q_y1)?;
    let r = log_ratio_rows(tape, adv_y, true, z, batch, p_u)?;
    let w = tape.constant(slice_weights(batch.y.as_deref().unwrap(), Some(q_y1)));
    let wr = tape.mul(r, w)?;
    Ok(tape.sum(wr))
}

/// `C_EOpp`: the `y = 1` slice of [`ceo_on_tape`]; zero when the batch has no
/// positives.
pub fn ceopp_on_tape(
    tape: &mut Tape,
    adv_y: &TwoLayerVars,
    z: Var,
    batch: &Batch,
    p_u: &EmpiricalCategorical,
) -> Result<Var> {
    let r = log_ratio_rows(tape, adv_y, true, z, batch, p_u)?;
    let w = tape.constant(slice_weights(batch.y.as_deref().unwrap(), None));
    let wr = tape.mul(r, w)?;
    Ok(tape.sum(wr))
}

/// Adversary cross-entropy `−mean log p_ψ(u|z[,y])`.
pub fn adversary_loss_on_tape(
    tape: &mut Tape,
    adv: &TwoLayerVars,
    label_conditioned: bool,
    z: Var,
    batch: &Batch,
) -> Result<Var> {
    let y = if label_conditioned {
        Some(batch.y.as_deref().ok_or_else(|| invalid("label-conditioned adversary needs labels"))?)
    } else {
        None
    };
    let logits = adversary_forward(tape, adv, label_conditioned, z, y)?;
    let ll = log_lik_of_groups(tape, logits, &batch.u)?;
    let m = tape.mean(ll)?;
    Ok(tape.scale(m, -1.0))
}

/// Multipliers applied to each computed constraint in the differentiated
/// loss. Both losses share them: the budgets only shift the value.
pub fn loss_coefficients(lambda: &Multipliers, spec: &ConstraintSpec) -> PerConstraint<Option<f64>> {
    lambda.lambda.map(|id, &l| spec.is_enabled(id).then_some(l))
}

fn frozen_z(batch: &Batch, enc: &EncoderParams, noise: &Tensor) -> Result<(Tape, Var)> {
    let mut tape = Tape::new();
    let e = encode_on_tape(&mut tape, EncoderSource::Params(enc), false, batch, noise)?;
    Ok((tape, e.z))
}

pub fn recon_loss(batch: &Batch, enc: &EncoderParams, dec: &DecoderParams, noise: &Tensor) -> Result<f64> {
    let (mut tape, z) = frozen_z(batch, enc, noise)?;
    let d = dec.bind(&mut tape, false);
    let l = recon_on_tape(&mut tape, &d, &dec.binary_feature_mask, z, batch)?;
    tape.scalar(l)
}

pub fn c1_term(batch: &Batch, enc: &EncoderParams) -> Result<f64> {
    non_empty(batch)?;
    let mut tape = Tape::new();
    let vars = enc.bind(&mut tape, false);
    let post = encoder_forward(&mut tape, &vars, &batch.x, &batch.u_onehot)?;
    let c = c1_on_tape(&mut tape, post)?;
    tape.scalar(c)
}

pub fn c2_term(
    batch: &Batch,
    enc: &EncoderParams,
    adv: &AdversaryParams,
    p_u: &EmpiricalCategorical,
    noise: &Tensor,
) -> Result<f64> {
    if adv.label_conditioned {
        return Err(invalid("C2 uses the label-blind adversary"));
    }
    let (mut tape, z) = frozen_z(batch, enc, noise)?;
    let a = adv.bind(&mut tape, false);
    let c = c2_on_tape(&mut tape, &a, z, batch, p_u)?;
    tape.scalar(c)
}

pub fn adversary_loss(batch: &Batch, enc: &EncoderParams, adv: &AdversaryParams, noise: &Tensor) -> Result<f64> {
    let (mut tape, z) = frozen_z(batch, enc, noise)?;
    let a = adv.bind(&mut tape, false);
    let l = adversary_loss_on_tape(&mut tape, &a, adv.label_conditioned, z, batch)?;
    tape.scalar(l)
}

fn label_adversary(adv_y: &AdversaryParams, batch: &Batch) -> Result<()> {
    if !adv_y.label_conditioned {
        return Err(invalid("label constraints use the label-conditioned adversary"));
    }
    if batch.y.is_none() {
        return Err(invalid("label constraints need labels"));
    }
    Ok(())
}

pub fn ceo_term(
    batch: &Batch,
    enc: &EncoderParams,
    adv_y: &AdversaryParams,
    p_u: &EmpiricalCategorical,
    q_y1: f64,
    noise: &Tensor,
) -> Result<f64> {
    label_adversary(adv_y, batch)?;
    let (mut tape, z) = frozen_z(batch, enc, noise)?;
    let a = adv_y.bind(&mut tape, false);
    let c = ceo_on_tape(&mut tape, &a, z, batch, p_u, q_y1)?;
    tape.scalar(c)
}

pub fn ceopp_term(
    batch: &Batch,
    enc: &EncoderParams,
    adv_y: &AdversaryParams,
    p_u: &EmpiricalCategorical,
    noise: &Tensor,
) -> Result<f64> {
    label_adversary(adv_y, batch)?;
    let (mut tape, z) = frozen_z(batch, enc, noise)?;
    let a = adv_y.bind(&mut tape, false);
    let c = ceopp_on_tape(&mut tape, &a, z, batch, p_u)?;
    tape.scalar(c)
}

#[cfg(test)]
mod tests;
