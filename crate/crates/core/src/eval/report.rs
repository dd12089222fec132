use std::fmt::Write as _;

use super::{
    estimate_mi, fairness_metrics, hard_predictions, pca_features, posterior_means, run_downstream, FairnessMetrics,
    MiEstimates, DEFAULT_SUBSAMPLE,
};
use crate::data::TabularDataset;
use crate::error::{invalid, Result};
use crate::model::{Posterior, PriorPosterior};
use crate::objective::{BatchEstimates, ConstraintId};
use crate::trainer::{evaluate_constraints, TrainConfig, TrainState};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub seed: u64,
    /// Cap on mixture components per group in the MI estimators.
    pub subsample: usize,
    pub l2: f64,
    /// Also score a PCA baseline with the same downstream classifier.
    pub include_pca: bool,
    /// PCA width; `None` uses the representation width.
    pub pca_k: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            subsample: DEFAULT_SUBSAMPLE,
            l2: 1e-4,
            include_pca: false,
            pca_k: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DownstreamSummary {
    pub test_auc: f64,
    pub fairness: FairnessMetrics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mi: MiEstimates,
    /// Constraint estimates on the test set with the trained adversaries.
    pub constraints: BatchEstimates,
    /// `None` when the data carry no labels.
    pub downstream: Option<DownstreamSummary>,
    pub pca: Option<DownstreamSummary>,
    pub group_count: usize,
}

fn summarize(
    train_f: &crate::numcore::Tensor,
    test_f: &crate::numcore::Tensor,
    train: &TabularDataset,
    test: &TabularDataset,
    l2: f64,
) -> Result<Option<DownstreamSummary>> {
    let (Some(ty), Some(vy)) = (train.y(), test.y()) else {
        return Ok(None);
    };
    let res = run_downstream(train_f, ty, test_f, vy, l2)?;
    let pred = hard_predictions(&res.predictions);
    Ok(Some(DownstreamSummary {
        test_auc: res.test_auc,
        fairness: fairness_metrics(&pred, test.u(), vy, test.group_count())?,
    }))
}

pub fn evaluate_run(
    state: &TrainState,
    config: &TrainConfig,
    train: &TabularDataset,
    test: &TabularDataset,
    options: &EvalOptions,
) -> Result<EvalReport> {
    if train.x_dim() != test.x_dim() || train.group_count() != test.group_count() {
        return Err(invalid("train and test layouts differ"));
    }
    let prior = PriorPosterior {
        z_dim: config.model.z_dim,
    };
    let enc: &dyn Posterior = if config.pin_encoder_to_prior {
        &prior
    } else {
        &state.params.encoder
    };
    let mi = estimate_mi(enc, train, test, options.seed, options.subsample)?;
    let constraints = evaluate_constraints(state, config, test)?;
    let train_z = posterior_means(enc, train)?;
    let test_z = posterior_means(enc, test)?;
    let downstream = summarize(&train_z, &test_z, train, test, options.l2)?;
    let pca = if options.include_pca {
        let k = options.pca_k.unwrap_or(config.model.z_dim).min(train.x_dim());
        let p = pca_features(train.x(), k)?;
        summarize(&p.project(train.x())?, &p.project(test.x())?, train, test, options.l2)?
    } else {
        None
    };
    Ok(EvalReport {
        mi,
        constraints,
        downstream,
        pca,
        group_count: train.group_count(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

impl EvalReport {
    /// `key = value  # unit` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String, unit: &str| {
            let _ = writeln!(s, "{k} = {v}  # {unit}");
        };
        line("test_rows", self.mi.test_rows.to_string(), "rows");
        line("mixture_components", self.mi.mixture_components.to_string(), "per group, max");
        line("I_xz_given_u", self.mi.i_xz_given_u.value.to_string(), "nats");
        line("I_xz_given_u_se", self.mi.i_xz_given_u.std_error.to_string(), "nats");
        line("I_zu", self.mi.i_zu.value.to_string(), "nats");
        line("I_zu_se", self.mi.i_zu.std_error.to_string(), "nats");
        line("L_r", self.constraints.l_r.to_string(), "nats");
        for id in ConstraintId::ALL {
            line(id.name(), opt(self.constraints.c[id]), "nats");
        }
        for (prefix, d) in [("", &self.downstream), ("pca_", &self.pca)] {
            match d {
                Some(d) => {
                    line(&format!("{prefix}auc"), d.test_auc.to_string(), "probability");
                    line(&format!("{prefix}delta_dp"), d.fairness.delta_dp.to_string(), "rate gap");
                    line(&format!("{prefix}delta_eo"), d.fairness.delta_eo.to_string(), "rate gap");
                    line(&format!("{prefix}delta_eopp"), d.fairness.delta_eopp.to_string(), "rate gap");
                }
                None if prefix.is_empty() => line("auc", "NA".into(), "no labels"),
                None => {}
            }
        }
        s
    }
}
