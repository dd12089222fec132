use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mifr_cli::report::emit_report;
use mifr_cli::run::{eps_fragment, evaluate_checkpoint, execute, report_text};
use mifr_cli::sweep::{run_sweep, SweepGrid};
use mifr_cli::tune::tune_mifr;
use mifr_cli::{CliError, RunConfig};
use mifr_core::eval::estimate_feasible_eps;

#[derive(Parser)]
#[command(name = "mifr", version, about = "Controllable fair representation learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration; repeat to layer files left to right.
    #[arg(long = "config", required = true)]
    configs: Vec<PathBuf>,
    /// Override a key, e.g. `--set train.epochs=300`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        RunConfig::load(&self.configs, &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its run directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Train every point of a multiplier or budget grid.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Grid file; defaults to the 5 x 5 multiplier grid.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Double fixed multipliers until every budget holds.
    TuneMifr {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        overwrite: bool,
    },
    /// Evaluate a saved run.
    Eval {
        /// Run directory holding config.toml and checkpoint.bin.
        #[arg(long, conflicts_with_all = ["config", "checkpoint"])]
        run: Option<PathBuf>,
        #[arg(long = "config")]
        config: Vec<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Include the PCA baseline.
        #[arg(long)]
        pca: bool,
        #[arg(long)]
        subsample: Option<usize>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Suggest budgets from a short conditional VAE probe.
    EstimateEps {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 200)]
        probe_epochs: u64,
        /// Write the fragment here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit plot-ready series from a sweep or run directory.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write_or_print(out: Option<&PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(CliError::from),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Train { config, out, overwrite } => {
            let cfg = config.load()?;
            let dir = out
                .or_else(|| cfg.output.clone())
                .ok_or_else(|| CliError::usage("no run directory: pass --out or set output"))?;
            let (train, test) = cfg.load_data()?;
            let o = execute(&cfg, &train, &test, Some(&dir), overwrite)?;
            eprintln!(
                "trained {} iterations; I(x;z|u) = {:.4} nats, I(z;u) = {:.4} nats -> {}",
                o.state.iteration,
                o.report.mi.i_xz_given_u.value,
                o.report.mi.i_zu.value,
                dir.display()
            );
        }
        Command::Sweep {
            config,
            grid,
            out,
            jobs,
            overwrite,
        } => {
            let cfg = config.load()?;
            let mut g = match grid {
                Some(p) => SweepGrid::from_toml(
                    &std::fs::read_to_string(&p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?,
                )?,
                None => SweepGrid::default(),
            };
            if jobs.is_some() {
                g.jobs = jobs;
            }
            let r = run_sweep(&cfg, &g, &out, overwrite, None)?;
            eprintln!("{} runs completed, {} failed -> {}", r.rows.len(), r.failures.len(), out.display());
        }
        Command::TuneMifr { config, out, overwrite } => {
            let cfg = config.load()?;
            let r = tune_mifr(&cfg, Some(&out), overwrite, None)?;
            eprint!("{}", r.summary());
            if !r.feasible {
                return Err(CliError::internal(r.failure.unwrap_or_default()));
            }
        }
        Command::Eval {
            run,
            config,
            checkpoint,
            pca,
            subsample,
            out,
        } => {
            let (configs, ckpt) = match run {
                Some(dir) => (vec![dir.join("config.toml")], dir.join("checkpoint.bin")),
                None => (
                    config,
                    checkpoint.ok_or_else(|| CliError::usage("pass --run or both --config and --checkpoint"))?,
                ),
            };
            let cfg = RunConfig::load(&configs, &[])?;
            let mut options = cfg.eval_options();
            options.include_pca |= pca;
            if let Some(s) = subsample {
                options.subsample = s;
            }
            let (report, terminal) = evaluate_checkpoint(&cfg, &ckpt, &options)?;
            write_or_print(out.as_ref(), &report_text(&report, Some(&terminal)))?;
        }
        Command::EstimateEps {
            config,
            probe_epochs,
            out,
        } => {
            let cfg = config.load()?;
            let (train, _) = cfg.load_data()?;
            let base = cfg.train_config(&train)?;
            let eps = estimate_feasible_eps(&base, &train, probe_epochs)?;
            write_or_print(out.as_ref(), &eps_fragment(&eps))?;
        }
        Command::Report { input, out } => {
            for p in emit_report(&input, &out)? {
                eprintln!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
