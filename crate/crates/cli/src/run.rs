//! Single training runs and their directories.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use mifr_core::eval::{evaluate_run, EvalOptions, EvalReport};
use mifr_core::objective::{BatchEstimates, ConstraintId};
use mifr_core::trainer::{
    evaluate_constraints, load_checkpoint, save_checkpoint, write_metrics_csv, MetricsRow, Trainer,
};
use mifr_core::{TabularDataset, TrainConfig, TrainState};

use crate::{CliError, RunConfig};

/// Everything a finished run directory contains.
pub const ARTIFACTS: [&str; 4] = ["config.toml", "checkpoint.bin", "metrics.csv", "eval_report.txt"];

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub config: RunConfig,
    pub train_config: TrainConfig,
    pub state: TrainState,
    pub metrics: Vec<MetricsRow>,
    /// Terminal full-data values on the training rows.
    pub terminal: BatchEstimates,
    pub report: EvalReport,
}

/// Create `dir`, refusing to touch an existing non-empty directory unless
/// `overwrite` is set, in which case it is emptied.
pub fn prepare_dir(dir: &Path, overwrite: bool) -> Result<(), CliError> {
    if dir.exists() {
        let non_empty = dir.read_dir()?.next().is_some();
        if non_empty && !overwrite {
            return Err(CliError::usage(format!(
                "{} already exists; pass --overwrite to replace it",
                dir.display()
            )));
        }
        if non_empty {
            std::fs::remove_dir_all(dir)?;
        }
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// The configuration with every defaulted value made explicit.
pub fn resolved(cfg: &RunConfig, dir: Option<&Path>) -> RunConfig {
    let mut c = cfg.clone();
    c.train.epochs = Some(cfg.epochs());
    c.model.z_dim = Some(cfg.model.z_dim.unwrap_or(10));
    c.output = dir.map(Path::to_path_buf).or(c.output);
    c
}

fn terminal_lines(est: &BatchEstimates) -> String {
    let mut s = format!("train_L_r = {}  # nats\n", est.l_r);
    for id in ConstraintId::ALL {
        let v = est.c[id].map_or_else(|| "NA".into(), |v| v.to_string());
        s.push_str(&format!("train_{} = {v}  # nats\n", id.name()));
    }
    s
}

pub fn report_text(report: &EvalReport, terminal: Option<&BatchEstimates>) -> String {
    let mut s = String::from("# evaluation report; information terms in nats, rates as probabilities\n");
    s.push_str(&report.to_text());
    if let Some(t) = terminal {
        s.push_str(&terminal_lines(t));
    }
    s
}

/// Train, evaluate and, when `dir` is given, write the four artifacts.
pub fn execute(
    cfg: &RunConfig,
    train: &TabularDataset,
    test: &TabularDataset,
    dir: Option<&Path>,
    overwrite: bool,
) -> Result<RunOutcome, CliError> {
    let train_config = cfg.train_config(train)?;
    if let Some(d) = dir {
        prepare_dir(d, overwrite)?;
    }
    let frozen = resolved(cfg, dir);
    if let Some(d) = dir {
        std::fs::write(d.join(ARTIFACTS[0]), frozen.to_toml())?;
    }
    let mut trainer = Trainer::new(train_config.clone(), train)?;
    let metrics = trainer.run()?;
    let state = trainer.into_state();
    let terminal = evaluate_constraints(&state, &train_config, train)?;
    let report = evaluate_run(&state, &train_config, train, test, &cfg.eval_options())?;
    if let Some(d) = dir {
        save_checkpoint(&d.join(ARTIFACTS[1]), &state, &train_config, &train.schema_fingerprint())?;
        let mut w = BufWriter::new(File::create(d.join(ARTIFACTS[2]))?);
        write_metrics_csv(&mut w, &metrics)?;
        w.flush()?;
        std::fs::write(d.join(ARTIFACTS[3]), report_text(&report, Some(&terminal)))?;
    }
    Ok(RunOutcome {
        config: frozen,
        train_config,
        state,
        metrics,
        terminal,
        report,
    })
}

/// Re-evaluate a saved checkpoint against the data its configuration names.
pub fn evaluate_checkpoint(
    cfg: &RunConfig,
    checkpoint: &Path,
    options: &EvalOptions,
) -> Result<(EvalReport, BatchEstimates), CliError> {
    let (train, test) = cfg.load_data()?;
    let ckpt = load_checkpoint(checkpoint, Some(&train.schema_fingerprint()))?;
    let terminal = evaluate_constraints(&ckpt.state, &ckpt.config, &train)?;
    let report = evaluate_run(&ckpt.state, &ckpt.config, &train, &test, options)?;
    Ok((report, terminal))
}

/// A configuration fragment carrying the suggested budgets; layer it over a
/// base configuration with a second `--config`.
pub fn eps_fragment(eps: &mifr_core::eval::FeasibleEps) -> String {
    format!(
        "# suggested budgets (nats) from a {}-epoch conditional VAE probe\n\
         [constraints.c1]\neps = {:?}\n\n[constraints.c2]\neps = {:?}\n",
        eps.probe_epochs, eps.eps1_floor, eps.eps2_ceiling
    )
}
