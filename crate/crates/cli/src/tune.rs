//! Fixed-multiplier tuning by doubling: start every multiplier at 0.1, and
//! after each run double the multiplier of the first violated constraint
//! (order: C2, C_EO, C_EOpp, C1) until all budgets hold.

use std::fmt::Write as _;
use std::path::Path;

use mifr_core::objective::{ConstraintId, PerConstraint};
use mifr_core::{Mode, TabularDataset};

use crate::config::ConstraintEntry;
use crate::run::{execute, prepare_dir};
use crate::{CliError, RunConfig};

pub const START_LAMBDA: f64 = 0.1;
pub const MAX_DOUBLINGS: u32 = 12;
pub const ORDER: [ConstraintId; 4] = [ConstraintId::C2, ConstraintId::Eo, ConstraintId::Eopp, ConstraintId::C1];

#[derive(Clone, Debug, PartialEq)]
pub struct TuneAttempt {
    pub attempt: usize,
    pub lambda: PerConstraint<f64>,
    /// Terminal training-set values of the enabled constraints.
    pub values: PerConstraint<Option<f64>>,
    pub violated: Vec<ConstraintId>,
    pub doubled: Option<ConstraintId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneOutcome {
    pub attempts: Vec<TuneAttempt>,
    pub feasible: bool,
    pub doublings: PerConstraint<u32>,
    pub final_lambda: PerConstraint<f64>,
    /// Training runs spent, in units of one constrained run of the same length.
    pub cost_multiple: f64,
    pub failure: Option<String>,
}

impl TuneOutcome {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "feasible = {}", self.feasible);
        let _ = writeln!(s, "runs = {}", self.attempts.len());
        let _ = writeln!(s, "retrains = {}", self.attempts.len().saturating_sub(1));
        let _ = writeln!(s, "cost_multiple = {}  # runs per constrained run of equal length", self.cost_multiple);
        for id in ConstraintId::ALL {
            let _ = writeln!(s, "lambda_{} = {}", id.name(), self.final_lambda[id]);
            let _ = writeln!(s, "doublings_{} = {}", id.name(), self.doublings[id]);
        }
        if let Some(f) = &self.failure {
            let _ = writeln!(s, "failure = {f:?}");
        }
        s
    }
}

/// Run the doubling driver. Every enabled constraint needs a budget; the
/// budgets are only used to judge feasibility, training uses fixed
/// multipliers.
pub fn tune_mifr(
    base: &RunConfig,
    out: Option<&Path>,
    overwrite: bool,
    data: Option<(&TabularDataset, &TabularDataset)>,
) -> Result<TuneOutcome, CliError> {
    let spec = base.constraint_spec();
    spec.validate_for_dual()?;
    let enabled = spec.enabled_ids();
    if let Some(d) = out {
        prepare_dir(d, overwrite)?;
    }
    let loaded;
    let (train, test) = match data {
        Some(d) => d,
        None => {
            loaded = base.load_data()?;
            (&loaded.0, &loaded.1)
        }
    };
    let mut lambda = PerConstraint::splat(0.0);
    for &id in &enabled {
        lambda[id] = START_LAMBDA;
    }
    let mut doublings = PerConstraint::splat(0u32);
    let mut attempts = Vec::new();
    let mut log = String::from("attempt,lambda_C1,lambda_C2,lambda_C_EO,lambda_C_EOpp,C1_nats,C2_nats,C_EO_nats,C_EOpp_nats,doubled\n");
    loop {
        let mut cfg = base.clone();
        cfg.train.mode = Mode::Mifr;
        for &id in &enabled {
            let e = cfg.constraints.get_mut(id).get_or_insert_with(ConstraintEntry::default);
            e.lambda = Some(lambda[id]);
        }
        let attempt = attempts.len();
        let dir = out.map(|d| d.join(format!("attempt-{attempt:02}")));
        let outcome = execute(&cfg, train, test, dir.as_deref(), false)?;
        let values = outcome.terminal.c.map(|id, v| if spec.is_enabled(id) { *v } else { None });
        let violated: Vec<ConstraintId> = ORDER
            .into_iter()
            .filter(|&id| values[id].is_some_and(|v| v > spec.budget(id)))
            .collect();
        let mut record = TuneAttempt {
            attempt,
            lambda,
            values,
            violated: violated.clone(),
            doubled: None,
        };
        let mut failure = None;
        let mut done = violated.is_empty();
        if let Some(&id) = violated.first() {
            if doublings[id] >= MAX_DOUBLINGS {
                failure = Some(format!("{} still violated after {MAX_DOUBLINGS} doublings", id.name()));
                done = true;
            } else {
                lambda[id] *= 2.0;
                doublings[id] += 1;
                record.doubled = Some(id);
            }
        }
        let o = |v: Option<f64>| v.map_or_else(|| "NA".into(), |v: f64| v.to_string());
        let _ = writeln!(
            log,
            "{attempt},{},{},{},{},{},{},{},{},{}",
            record.lambda.c1,
            record.lambda.c2,
            record.lambda.eo,
            record.lambda.eopp,
            o(values.c1),
            o(values.c2),
            o(values.eo),
            o(values.eopp),
            record.doubled.map_or("", |id| id.name())
        );
        attempts.push(record);
        if done {
            let result = TuneOutcome {
                feasible: failure.is_none(),
                cost_multiple: attempts.len() as f64,
                final_lambda: attempts.last().expect("one attempt ran").lambda,
                attempts,
                doublings,
                failure,
            };
            if let Some(d) = out {
                std::fs::write(d.join("tune_log.csv"), &log)?;
                std::fs::write(d.join("tune_summary.txt"), result.summary())?;
            }
            return Ok(result);
        }
    }
}
