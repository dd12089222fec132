//! Alternating saddle-point training.
//!
//! Every outer iteration runs `adversary_steps` Adam steps on the adversaries
//! (each on its own resampled batch, encoder frozen), one Adam step on the
//! encoder and decoder against the combined loss (adversaries frozen) and, in
//! [`Mode::Lmifr`], one projected ascent step on the multipliers.
//!
//! All randomness comes from streams addressed by the iteration number, so a
//! run restored from a checkpoint continues exactly as the original would.

mod checkpoint;
mod metrics;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use metrics::{read_metrics_csv, write_metrics_csv, MetricsRow, METRICS_HEADER};

use serde::{Deserialize, Serialize};

use crate::data::{Batch, TabularDataset};
use crate::dist::EmpiricalCategorical;
use crate::error::{invalid, Error, Result};
use crate::model::{init_params, ModelConfig, ModelParams, ParamSet};
use crate::numcore::{adam_step, lr_at, AdamConfig, AdamState, LrSchedule, Purpose, RngStream, Tape, Tensor, Var};
use crate::objective::{
    adversary_loss_on_tape, c1_on_tape, c2_on_tape, ceo_on_tape, ceopp_on_tape, encode_on_tape, lambda_ascent_step,
    lmifr_loss, log_ratio_rows, loss_coefficients, mifr_loss, recon_on_tape, BatchEstimates, ConstraintId, ConstraintSpec,
    EncoderSource, Multipliers, PerConstraint,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Fixed multipliers.
    Mifr,
    /// Dual ascent on the multipliers.
    Lmifr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub epochs: u64,
    pub batch_size: usize,
    pub adversary_steps: usize,
    /// Adversary steps run once before the first outer iteration.
    pub adversary_warmup_steps: usize,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub eta_lambda: f64,
    pub seed: u64,
    pub constraints: ConstraintSpec,
    pub initial_multipliers: Multipliers,
    pub model: ModelConfig,
    /// Smoothing of the constraint values fed to the ascent step; `None`
    /// uses the raw minibatch values.
    pub ema_decay: Option<f64>,
    /// Metrics row every this many iterations (the last one is always logged).
    pub log_every: u64,
    /// Replace the encoder by the prior `N(0, I)`.
    pub pin_encoder_to_prior: bool,
}

impl TrainConfig {
    pub fn new(mode: Mode, model: ModelConfig, constraints: ConstraintSpec) -> Self {
        Self {
            mode,
            epochs: 2000,
            batch_size: 128,
            adversary_steps: 10,
            adversary_warmup_steps: 0,
            schedule: LrSchedule::default(),
            adam: AdamConfig::default(),
            eta_lambda: 0.01,
            seed: 0,
            constraints,
            initial_multipliers: Multipliers::splat(1.0),
            model,
            ema_decay: Some(0.95),
            log_every: 100,
            pin_encoder_to_prior: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.adversary_steps == 0 || self.log_every == 0 {
            return Err(invalid("epochs, batch_size, adversary_steps and log_every must be at least 1"));
        }
        self.schedule.validate()?;
        self.model.validate()?;
        self.constraints.validate()?;
        if self.mode == Mode::Lmifr {
            self.constraints.validate_for_dual()?;
            if !(self.eta_lambda > 0.0) {
                return Err(invalid("eta_lambda must be positive"));
            }
        }
        if let Some(d) = self.ema_decay {
            if !(0.0..1.0).contains(&d) {
                return Err(invalid(format!("ema_decay must be in [0, 1), got {d}")));
            }
        }
        for id in ConstraintId::ALL {
            let l = self.initial_multipliers.lambda[id];
            if !(l.is_finite() && l >= 0.0) {
                return Err(invalid(format!("multiplier of {} must be finite and non-negative", id.name())));
            }
        }
        if self.constraints.needs_labels() && !self.model.label_conditioned_adversaries {
            return Err(invalid("label constraints need label_conditioned_adversaries = true"));
        }
        Ok(())
    }

    pub fn batches_per_epoch(&self, rows: usize) -> u64 {
        rows.div_ceil(self.batch_size) as u64
    }

    pub fn total_iterations(&self, rows: usize) -> u64 {
        self.epochs * self.batches_per_epoch(rows)
    }
}

/// Adam accumulators, one per network.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerStates {
    pub encoder: AdamState,
    pub decoder: AdamState,
    pub adversary: AdamState,
    pub label_adversary: Option<AdamState>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub multipliers: Multipliers,
    pub optim: OptimizerStates,
    /// Completed outer iterations.
    pub iteration: u64,
    pub ema_l_r: Option<f64>,
    pub ema: PerConstraint<Option<f64>>,
}

impl TrainState {
    pub fn init(config: &TrainConfig) -> Result<Self> {
        let params = init_params(&config.model, config.seed)?;
        let optim = OptimizerStates {
            encoder: AdamState::new(params.encoder.tensors(), config.adam),
            decoder: AdamState::new(params.decoder.tensors(), config.adam),
            adversary: AdamState::new(params.adversary.tensors(), config.adam),
            label_adversary: params.label_adversary.as_ref().map(|a| AdamState::new(a.tensors(), config.adam)),
        };
        let multipliers = match config.mode {
            Mode::Lmifr => config.initial_multipliers.clamped(),
            Mode::Mifr => config.initial_multipliers,
        };
        Ok(Self {
            params,
            multipliers,
            optim,
            iteration: 0,
            ema_l_r: None,
            ema: PerConstraint::default(),
        })
    }
}

/// State at the moment training produced a non-finite value.
#[derive(Clone, Debug, PartialEq)]
pub struct DivergenceDump {
    pub iteration: u64,
    pub reason: String,
    pub estimates: Option<BatchEstimates>,
    pub multipliers: Multipliers,
    pub lr: f64,
}

/// Dataset-level quantities the objectives need.
#[derive(Clone, Debug)]
struct DataStats {
    p_u: EmpiricalCategorical,
    q_y1: Option<f64>,
}

pub struct Trainer<'a> {
    config: TrainConfig,
    data: &'a TabularDataset,
    stats: DataStats,
    state: TrainState,
    epoch_order: Option<(u64, Vec<usize>)>,
}

fn check_data(config: &TrainConfig, data: &TabularDataset) -> Result<DataStats> {
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let m = &config.model;
    if data.x_dim() != m.x_dim || data.group_count() != m.u_group_count || data.binary_mask() != m.binary_feature_mask {
        return Err(invalid(format!(
            "model expects x_dim {} with {} groups; data has x_dim {} with {} groups (or a different feature mask)",
            m.x_dim,
            m.u_group_count,
            data.x_dim(),
            data.group_count()
        )));
    }
    let q_y1 = match data.y() {
        Some(_) => Some(data.positive_rate()?),
        None => None,
    };
    if config.constraints.needs_labels() {
        let q = q_y1.ok_or_else(|| invalid("label constraints need a labeled dataset"))?;
        if config.constraints.is_enabled(ConstraintId::Eopp) && q == 0.0 {
            return Err(invalid("the opportunity constraint needs rows with y = 1"));
        }
    }
    Ok(DataStats {
        p_u: data.u_marginal()?,
        q_y1,
    })
}

/// Model configuration matching a dataset's layout.
pub fn model_config_for(data: &TabularDataset, z_dim: usize, hidden_dim: usize, label_conditioned: bool) -> ModelConfig {
    ModelConfig {
        x_dim: data.x_dim(),
        u_group_count: data.group_count(),
        z_dim,
        hidden_dim,
        binary_feature_mask: data.binary_mask().to_vec(),
        label_conditioned_adversaries: label_conditioned,
    }
}

fn finite_grads(grads: &[Tensor]) -> bool {
    grads.iter().all(Tensor::is_finite)
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, data: &'a TabularDataset) -> Result<Self> {
        config.validate()?;
        let state = TrainState::init(&config)?;
        Self::resume(config, data, state)
    }

    pub fn resume(config: TrainConfig, data: &'a TabularDataset, state: TrainState) -> Result<Self> {
        config.validate()?;
        let stats = check_data(&config, data)?;
        Ok(Self {
            config,
            data,
            stats,
            state,
            epoch_order: None,
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn total_iterations(&self) -> u64 {
        self.config.total_iterations(self.data.len())
    }

    fn source(&self) -> EncoderSource<'_> {
        if self.config.pin_encoder_to_prior {
            EncoderSource::Prior {
                z_dim: self.config.model.z_dim,
            }
        } else {
            EncoderSource::Params(&self.state.params.encoder)
        }
    }

    fn diverged(&self, reason: impl Into<String>, estimates: Option<BatchEstimates>) -> Error {
        Error::Diverged(Box::new(DivergenceDump {
            iteration: self.state.iteration,
            reason: reason.into(),
            estimates,
            multipliers: self.state.multipliers,
            lr: lr_at(&self.config.schedule, self.state.iteration),
        }))
    }

    fn epoch_batch(&mut self, iteration: u64) -> Result<Batch> {
        let bpe = self.config.batches_per_epoch(self.data.len());
        let epoch = iteration / bpe;
        if self.epoch_order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let perm = RngStream::new(self.config.seed, Purpose::Shuffle, epoch).permutation(self.data.len());
            self.epoch_order = Some((epoch, perm));
        }
        let perm = &self.epoch_order.as_ref().unwrap().1;
        let start = ((iteration % bpe) as usize) * self.config.batch_size;
        let end = (start + self.config.batch_size).min(perm.len());
        self.data.batch(&perm[start..end])
    }

    fn needs_adversary(&self) -> bool {
        self.config.constraints.is_enabled(ConstraintId::C2)
    }

    fn needs_label_adversary(&self) -> bool {
        self.config.constraints.needs_labels()
    }

    /// One Adam step on each adversary in use. `counter` addresses the
    /// batch and noise streams.
    fn adversary_step(&mut self, counter: u64, lr: f64) -> Result<()> {
        let (train_plain, train_label) = (self.needs_adversary(), self.needs_label_adversary());
        if !train_plain && !train_label {
            return Ok(());
        }
        let n = self.data.len();
        let bs = self.config.batch_size.min(n);
        let idx = RngStream::new(self.config.seed, Purpose::AdversaryBatch, counter).sample_indices(n, bs);
        let batch = self.data.batch(&idx)?;
        let noise = RngStream::new(self.config.seed, Purpose::AdversaryNoise, counter)
            .normal_tensor(&[batch.len(), self.config.model.z_dim]);
        let mut tape = Tape::new();
        let enc = encode_on_tape(&mut tape, self.source(), false, &batch, &noise)?;
        let z = tape.constant(tape.value(enc.z).clone());
        let mut losses: Vec<(bool, Var, Vec<Var>)> = Vec::new();
        if train_plain {
            let a = self.state.params.adversary.bind(&mut tape, true);
            let l = adversary_loss_on_tape(&mut tape, &a, false, z, &batch)?;
            losses.push((false, l, a.vars()));
        }
        if train_label {
            let adv = self.state.params.label_adversary.as_ref().ok_or_else(|| invalid("missing label adversary"))?;
            let a = adv.bind(&mut tape, true);
            let l = adversary_loss_on_tape(&mut tape, &a, true, z, &batch)?;
            losses.push((true, l, a.vars()));
        }
        for (label, loss, vars) in losses {
            let value = tape.scalar(loss)?;
            let grads = tape.backward(loss)?.wrt_all(&vars);
            if !value.is_finite() || !finite_grads(&grads) {
                return Err(self.diverged(format!("non-finite adversary loss {value}"), None));
            }
            let (params, state) = if label {
                (
                    self.state.params.label_adversary.as_mut().unwrap(),
                    self.state.optim.label_adversary.as_mut().unwrap(),
                )
            } else {
                (&mut self.state.params.adversary, &mut self.state.optim.adversary)
            };
            adam_step(&mut params.tensors_mut(), &grads, state, lr)?;
        }
        Ok(())
    }

    fn warmup(&mut self) -> Result<()> {
        let lr = lr_at(&self.config.schedule, 0);
        for k in 0..self.config.adversary_warmup_steps as u64 {
            // Counters above any used by the main loop.
            self.adversary_step(u64::MAX / 2 + k, lr)?;
        }
        Ok(())
    }

    /// One outer iteration; returns the minibatch estimates.
    pub fn step(&mut self) -> Result<BatchEstimates> {
        let t = self.state.iteration;
        if t == 0 {
            self.warmup()?;
        }
        let lr = lr_at(&self.config.schedule, t);
        let d = self.config.adversary_steps as u64;
        for k in 0..d {
            self.adversary_step(t * d + k, lr)?;
        }

        let batch = self.epoch_batch(t)?;
        let noise = RngStream::new(self.config.seed, Purpose::EncoderNoise, t)
            .normal_tensor(&[batch.len(), self.config.model.z_dim]);
        let spec = self.config.constraints.clone();
        let pinned = self.config.pin_encoder_to_prior;
        let mut tape = Tape::new();
        let enc = encode_on_tape(&mut tape, self.source(), true, &batch, &noise)?;
        let dec = self.state.params.decoder.bind(&mut tape, true);
        let l_r = recon_on_tape(&mut tape, &dec, &self.config.model.binary_feature_mask, enc.z, &batch)?;
        let mut terms: PerConstraint<Option<Var>> = PerConstraint::default();
        terms.c1 = Some(c1_on_tape(&mut tape, enc.post)?);
        if spec.is_enabled(ConstraintId::C2) {
            let a = self.state.params.adversary.bind(&mut tape, false);
            terms.c2 = Some(c2_on_tape(&mut tape, &a, enc.z, &batch, &self.stats.p_u)?);
        }
        if spec.needs_labels() {
            let a = self.state.params.label_adversary.as_ref().unwrap().bind(&mut tape, false);
            if spec.is_enabled(ConstraintId::Eo) {
                let q = self.stats.q_y1.unwrap();
                terms.eo = Some(ceo_on_tape(&mut tape, &a, enc.z, &batch, &self.stats.p_u, q)?);
            }
            if spec.is_enabled(ConstraintId::Eopp) {
                terms.eopp = Some(ceopp_on_tape(&mut tape, &a, enc.z, &batch, &self.stats.p_u)?);
            }
        }
        let coef = loss_coefficients(&self.state.multipliers, &spec);
        let mut loss = l_r;
        for id in ConstraintId::ALL {
            if let (Some(c), Some(v)) = (coef[id], terms[id]) {
                let scaled = tape.scale(v, c);
                loss = tape.add(loss, scaled)?;
            }
        }
        let mut est = BatchEstimates {
            l_r: tape.scalar(l_r)?,
            c: PerConstraint::default(),
            batch_size: batch.len(),
        };
        for id in ConstraintId::ALL {
            if let Some(v) = terms[id] {
                est.c[id] = Some(tape.scalar(v)?);
            }
        }
        let loss_value = tape.scalar(loss)?;
        if !loss_value.is_finite() || !est.is_finite() {
            return Err(self.diverged(format!("non-finite training loss {loss_value}"), Some(est)));
        }

        let grads = tape.backward(loss)?;
        let dec_grads = grads.wrt_all(&dec.vars());
        let enc_grads = match (pinned, enc.vars) {
            (false, Some(v)) => Some(grads.wrt_all(&v.vars())),
            _ => None,
        };
        if !finite_grads(&dec_grads) || !enc_grads.as_deref().map_or(true, finite_grads) {
            return Err(self.diverged("non-finite gradient", Some(est)));
        }
        drop(grads);
        drop(tape);
        adam_step(&mut self.state.params.decoder.tensors_mut(), &dec_grads, &mut self.state.optim.decoder, lr)?;
        if let Some(g) = enc_grads {
            adam_step(&mut self.state.params.encoder.tensors_mut(), &g, &mut self.state.optim.encoder, lr)?;
        }

        self.update_ema(&est);
        if self.config.mode == Mode::Lmifr {
            let fed = match self.config.ema_decay {
                Some(_) => BatchEstimates {
                    l_r: self.state.ema_l_r.unwrap_or(est.l_r),
                    c: self.state.ema,
                    batch_size: est.batch_size,
                },
                None => est,
            };
            self.state.multipliers = lambda_ascent_step(&self.state.multipliers, &fed, &spec, self.config.eta_lambda)?;
        }
        self.state.iteration += 1;
        Ok(est)
    }

    fn update_ema(&mut self, est: &BatchEstimates) {
        let decay = self.config.ema_decay.unwrap_or(0.0);
        let blend = |old: Option<f64>, new: f64| Some(old.map_or(new, |o| decay * o + (1.0 - decay) * new));
        self.state.ema_l_r = blend(self.state.ema_l_r, est.l_r);
        for id in ConstraintId::ALL {
            if let Some(c) = est.c[id] {
                self.state.ema[id] = blend(self.state.ema[id], c);
            }
        }
    }

    fn row(&self, est: &BatchEstimates) -> MetricsRow {
        let t = self.state.iteration;
        MetricsRow {
            iteration: t,
            epoch: (t - 1) / self.config.batches_per_epoch(self.data.len()),
            l_r: est.l_r,
            c: est.c,
            lambda: self.state.multipliers,
            lr: lr_at(&self.config.schedule, t - 1),
        }
    }

    /// Train until `iteration` outer steps are complete, returning the rows
    /// logged on the way.
    pub fn run_to(&mut self, iteration: u64) -> Result<Vec<MetricsRow>> {
        let total = self.total_iterations();
        let mut rows = Vec::new();
        while self.state.iteration < iteration.min(total) {
            let est = self.step()?;
            let t = self.state.iteration;
            if t % self.config.log_every == 0 || t == total {
                rows.push(self.row(&est));
            }
        }
        Ok(rows)
    }

    pub fn run(&mut self) -> Result<Vec<MetricsRow>> {
        self.run_to(self.total_iterations())
    }

    /// Full-data constraint values for the current parameters.
    pub fn evaluate(&self) -> Result<BatchEstimates> {
        evaluate_constraints(&self.state, &self.config, self.data)
    }
}

/// Train from scratch to completion.
pub fn train(config: &TrainConfig, data: &TabularDataset) -> Result<(TrainState, Vec<MetricsRow>)> {
    let mut trainer = Trainer::new(config.clone(), data)?;
    let rows = trainer.run()?;
    Ok((trainer.into_state(), rows))
}

/// `L_r` and every constraint the configuration can evaluate, averaged over
/// all rows of `data` with one posterior sample each.
pub fn evaluate_constraints(state: &TrainState, config: &TrainConfig, data: &TabularDataset) -> Result<BatchEstimates> {
    let stats = check_data(config, data)?;
    let z_dim = config.model.z_dim;
    let source = if config.pin_encoder_to_prior {
        EncoderSource::Prior { z_dim }
    } else {
        EncoderSource::Params(&state.params.encoder)
    };
    let chunk = 4096;
    let n = data.len();
    let mut sums = [0.0f64; 3];
    let mut slice_sum = [0.0f64; 2];
    let mut slice_n = [0usize; 2];
    for (k, start) in (0..n).step_by(chunk).enumerate() {
        let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
        let batch = data.batch(&idx)?;
        let weight = idx.len() as f64 / n as f64;
        let noise = RngStream::new(config.seed, Purpose::EvalNoise, k as u64).normal_tensor(&[idx.len(), z_dim]);
        let mut tape = Tape::new();
        let enc = encode_on_tape(&mut tape, source, false, &batch, &noise)?;
        let dec = state.params.decoder.bind(&mut tape, false);
        let mut vals = vec![(0, recon_on_tape(&mut tape, &dec, &config.model.binary_feature_mask, enc.z, &batch)?)];
        vals.push((1, c1_on_tape(&mut tape, enc.post)?));
        let a = state.params.adversary.bind(&mut tape, false);
        vals.push((2, c2_on_tape(&mut tape, &a, enc.z, &batch, &stats.p_u)?));
        if let (Some(adv), Some(y)) = (&state.params.label_adversary, batch.y.as_deref()) {
            let a = adv.bind(&mut tape, false);
            let r = log_ratio_rows(&mut tape, &a, true, enc.z, &batch, &stats.p_u)?;
            for (v, &label) in tape.value(r).data().iter().zip(y) {
                slice_sum[label as usize] += v;
                slice_n[label as usize] += 1;
            }
        }
        for (i, v) in vals {
            sums[i] += weight * tape.scalar(v)?;
        }
    }
    let slice = |y: usize| (slice_n[y] > 0).then(|| slice_sum[y] / slice_n[y] as f64);
    let (eo, eopp) = match stats.q_y1 {
        Some(q) if state.params.label_adversary.is_some() => {
            let eo = q * slice(1).unwrap_or(0.0) + (1.0 - q) * slice(0).unwrap_or(0.0);
            (Some(eo), slice(1))
        }
        _ => (None, None),
    };
    Ok(BatchEstimates {
        l_r: sums[0],
        c: PerConstraint {
            c1: Some(sums[1]),
            c2: Some(sums[2]),
            eo,
            eopp,
        },
        batch_size: n,
    })
}

/// The loss the configuration optimizes, evaluated at `est`.
pub fn objective_value(config: &TrainConfig, est: &BatchEstimates, multipliers: &Multipliers) -> f64 {
    let spec = &config.constraints;
    let mut enabled = *est;
    for id in ConstraintId::ALL {
        if !spec.is_enabled(id) {
            enabled.c[id] = None;
        }
    }
    match config.mode {
        Mode::Mifr => mifr_loss(&enabled, multipliers),
        Mode::Lmifr => lmifr_loss(&enabled, multipliers, spec),
    }
}
