//! Grid sweeps over multipliers (MIFR) or budgets (L-MIFR).

use std::path::{Path, PathBuf};

use mifr_core::eval::{fairness_metrics, hard_predictions, pca_features, run_downstream, FairnessValue};
use mifr_core::objective::ConstraintId;
use mifr_core::{Mode, TabularDataset};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ConstraintEntry;
use crate::run::{execute, prepare_dir, RunOutcome};
use crate::{CliError, RunConfig};

pub const RESULTS_FILE: &str = "results.csv";
pub const FAILURES_FILE: &str = "failures.csv";
pub const PCA_FILE: &str = "pca_baseline.csv";

pub const RESULTS_HEADER: [&str; 20] = [
    "index",
    "seed",
    "mode",
    "lambda1",
    "lambda2",
    "eps1_nats",
    "eps2_nats",
    "L_r_nats",
    "C1_nats",
    "C2_nats",
    "C_EO_nats",
    "C_EOpp_nats",
    "I_xz_given_u_nats",
    "I_xz_given_u_se_nats",
    "I_zu_nats",
    "I_zu_se_nats",
    "auc_prob",
    "delta_dp_prob",
    "delta_eo_prob",
    "delta_eopp_prob",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default)]
    pub lambda1: Vec<f64>,
    #[serde(default)]
    pub lambda2: Vec<f64>,
    #[serde(default)]
    pub eps1: Vec<f64>,
    #[serde(default)]
    pub eps2: Vec<f64>,
    /// Concurrent runs; defaults to the number of cores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
}

fn default_mode() -> Mode {
    Mode::Mifr
}

impl Default for SweepGrid {
    /// The 5 × 5 multiplier grid.
    fn default() -> Self {
        Self {
            mode: Mode::Mifr,
            lambda1: vec![0.0, 0.1, 0.2, 1.0, 2.0],
            lambda2: vec![0.1, 0.2, 1.0, 2.0, 5.0],
            eps1: Vec::new(),
            eps2: Vec::new(),
            jobs: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub index: usize,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub eps1: Option<f64>,
    pub eps2: Option<f64>,
}

fn axis(v: &[f64]) -> Vec<Option<f64>> {
    if v.is_empty() {
        vec![None]
    } else {
        v.iter().copied().map(Some).collect()
    }
}

impl SweepGrid {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::usage(format!("grid: {e}")))
    }

    /// Cartesian product, first axis outermost.
    pub fn points(&self) -> Vec<GridPoint> {
        let (a, b) = match self.mode {
            Mode::Mifr => (axis(&self.lambda1), axis(&self.lambda2)),
            Mode::Lmifr => (axis(&self.eps1), axis(&self.eps2)),
        };
        let mut out = Vec::with_capacity(a.len() * b.len());
        for &x in &a {
            for &y in &b {
                let index = out.len();
                out.push(match self.mode {
                    Mode::Mifr => GridPoint {
                        index,
                        lambda1: x,
                        lambda2: y,
                        eps1: None,
                        eps2: None,
                    },
                    Mode::Lmifr => GridPoint {
                        index,
                        lambda1: None,
                        lambda2: None,
                        eps1: x,
                        eps2: y,
                    },
                });
            }
        }
        out
    }

    /// The run configuration of one grid point.
    pub fn apply(&self, base: &RunConfig, p: &GridPoint) -> RunConfig {
        let mut cfg = base.clone();
        cfg.train.mode = self.mode;
        cfg.seed = base.seed + p.index as u64;
        for (id, lambda, eps) in [(ConstraintId::C1, p.lambda1, p.eps1), (ConstraintId::C2, p.lambda2, p.eps2)] {
            if lambda.is_none() && eps.is_none() {
                continue;
            }
            let entry = cfg.constraints.get_mut(id).get_or_insert_with(ConstraintEntry::default);
            if lambda.is_some() {
                entry.lambda = lambda;
            }
            if eps.is_some() {
                entry.eps = eps;
            }
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub point: GridPoint,
    pub seed: u64,
    pub mode: Mode,
    pub l_r: f64,
    pub c: [Option<f64>; 4],
    pub i_xz: f64,
    pub i_xz_se: f64,
    pub i_zu: f64,
    pub i_zu_se: f64,
    pub auc: Option<f64>,
    pub delta_dp: Option<FairnessValue>,
    pub delta_eo: Option<FairnessValue>,
    pub delta_eopp: Option<FairnessValue>,
}

impl SweepRow {
    pub fn from_outcome(point: GridPoint, o: &RunOutcome) -> Self {
        let d = o.report.downstream.as_ref();
        Self {
            point,
            seed: o.config.seed,
            mode: o.config.train.mode,
            l_r: o.terminal.l_r,
            c: ConstraintId::ALL.map(|id| o.terminal.c[id]),
            i_xz: o.report.mi.i_xz_given_u.value,
            i_xz_se: o.report.mi.i_xz_given_u.std_error,
            i_zu: o.report.mi.i_zu.value,
            i_zu_se: o.report.mi.i_zu.std_error,
            auc: d.map(|d| d.test_auc),
            delta_dp: d.map(|d| d.fairness.delta_dp),
            delta_eo: d.map(|d| d.fairness.delta_eo),
            delta_eopp: d.map(|d| d.fairness.delta_eopp),
        }
    }

    fn record(&self) -> Vec<String> {
        let o = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| v.to_string());
        let f = |v: Option<FairnessValue>| v.map_or_else(|| "NA".to_string(), |v| v.to_string());
        let mut r = vec![
            self.point.index.to_string(),
            self.seed.to_string(),
            format!("{:?}", self.mode).to_lowercase(),
            o(self.point.lambda1),
            o(self.point.lambda2),
            o(self.point.eps1),
            o(self.point.eps2),
            self.l_r.to_string(),
        ];
        r.extend(self.c.iter().map(|&v| o(v)));
        r.extend([self.i_xz, self.i_xz_se, self.i_zu, self.i_zu_se].iter().map(f64::to_string));
        r.extend([o(self.auc), f(self.delta_dp), f(self.delta_eo), f(self.delta_eopp)]);
        r
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaBaseline {
    pub k: usize,
    pub auc: f64,
    pub delta_dp: FairnessValue,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<(usize, String)>,
    pub pca: Option<PcaBaseline>,
}

pub fn run_dir_name(index: usize) -> String {
    format!("run-{index:03}")
}

pub fn pca_baseline(train: &TabularDataset, test: &TabularDataset, k: usize, l2: f64) -> Result<PcaBaseline, CliError> {
    let (ty, vy) = train
        .y()
        .zip(test.y())
        .ok_or_else(|| CliError::usage("the PCA baseline needs labeled data"))?;
    let k = k.min(train.x_dim());
    let p = pca_features(train.x(), k)?;
    let res = run_downstream(&p.project(train.x())?, ty, &p.project(test.x())?, vy, l2)?;
    let fm = fairness_metrics(&hard_predictions(&res.predictions), test.u(), vy, test.group_count())?;
    Ok(PcaBaseline {
        k,
        auc: res.test_auc,
        delta_dp: fm.delta_dp,
    })
}

/// Run every grid point, each in `out/run-NNN`, and write the aggregated
/// tables. Failed points are listed in `failures.csv`; the rest continue.
pub fn run_sweep(
    base: &RunConfig,
    grid: &SweepGrid,
    out: &Path,
    overwrite: bool,
    data: Option<(&TabularDataset, &TabularDataset)>,
) -> Result<SweepResult, CliError> {
    let points = grid.points();
    for p in &points {
        grid.apply(base, p).train_config_check()?;
    }
    prepare_dir(out, overwrite)?;
    let loaded;
    let (train, test) = match data {
        Some(d) => d,
        None => {
            loaded = base.load_data()?;
            (&loaded.0, &loaded.1)
        }
    };
    let jobs = grid
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::internal(e.to_string()))?;
    let outcomes: Vec<(GridPoint, Result<SweepRow, CliError>)> = pool.install(|| {
        points
            .par_iter()
            .map(|p| {
                let cfg = grid.apply(base, p);
                let dir: PathBuf = out.join(run_dir_name(p.index));
                let r = execute(&cfg, train, test, Some(&dir), false).map(|o| SweepRow::from_outcome(*p, &o));
                (*p, r)
            })
            .collect()
    });
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (p, r) in outcomes {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => failures.push((p.index, e.to_string())),
        }
    }
    write_results(&out.join(RESULTS_FILE), &rows)?;
    let mut w = csv::Writer::from_path(out.join(FAILURES_FILE)).map_err(|e| CliError::internal(e.to_string()))?;
    let csv_err = |e: csv::Error| CliError::internal(e.to_string());
    w.write_record(["index", "error"]).map_err(csv_err)?;
    for (i, e) in &failures {
        w.write_record([i.to_string(), e.clone()]).map_err(csv_err)?;
    }
    w.flush()?;
    let pca = if base.eval.include_pca {
        let k = base.eval.pca_k.unwrap_or(base.model.z_dim.unwrap_or(10));
        let b = pca_baseline(train, test, k, base.eval.l2)?;
        std::fs::write(
            out.join(PCA_FILE),
            format!("k,auc_prob,delta_dp_prob\n{},{},{}\n", b.k, b.auc, b.delta_dp),
        )?;
        Some(b)
    } else {
        None
    };
    Ok(SweepResult { rows, failures, pca })
}

pub fn write_results(path: &Path, rows: &[SweepRow]) -> Result<(), CliError> {
    let csv_err = |e: csv::Error| CliError::internal(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(RESULTS_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record(r.record()).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

impl RunConfig {
    /// Validate the parts of a configuration that do not need data.
    fn train_config_check(&self) -> Result<(), CliError> {
        self.validate()?;
        let spec = self.constraint_spec();
        spec.validate()?;
        if self.train.mode == Mode::Lmifr {
            spec.validate_for_dual()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_25_points_in_order() {
        let g = SweepGrid::default();
        let p = g.points();
        assert_eq!(p.len(), 25);
        assert_eq!((p[0].lambda1, p[0].lambda2), (Some(0.0), Some(0.1)));
        assert_eq!((p[1].lambda1, p[1].lambda2), (Some(0.0), Some(0.2)));
        assert_eq!((p[24].lambda1, p[24].lambda2), (Some(2.0), Some(5.0)));
        assert!(p.iter().enumerate().all(|(i, q)| q.index == i));
    }

    #[test]
    fn lmifr_grid_keeps_missing_axis() {
        let g = SweepGrid::from_toml("mode = \"lmifr\"\neps2 = [0.05, 0.1]\n").unwrap();
        let p = g.points();
        assert_eq!(p.len(), 2);
        assert_eq!(p[1].eps1, None);
        assert_eq!(p[1].eps2, Some(0.1));
    }
}
