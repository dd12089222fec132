//! Post-hoc evaluation of trained encoders.
//!
//! The mutual-information estimators approximate the aggregate posterior of
//! each group, `q(z|u)`, by the uniform mixture of encoder posteriors over
//! (a subsample of) that group's training rows:
//!
//! * `Î(x;z|u) = E[log q(z|x,u) − log q̂(z|u)]`
//! * `Î(z;u)   = E[log q̂(u|z) − log p̂(u)]`, where `q̂(u|z) ∝ q̂(z|u) p̂(u)`.
//!
//! Expectations run over test rows with one `z ~ q(z|x,u)` per row and come
//! with a standard error.

mod classify;
mod fairness;
mod feasibility;
mod pca;
mod report;

pub use classify::{auc, fit_logistic_regression, run_downstream, DownstreamResult, LogisticModel};
pub use fairness::{delta_dp, delta_eo, delta_eopp, fairness_metrics, hard_predictions, FairnessMetrics, FairnessValue};
pub use feasibility::{estimate_feasible_eps, FeasibleEps};
pub use pca::{pca_features, Pca};
pub use report::{evaluate_run, DownstreamSummary, EvalOptions, EvalReport};

use crate::data::TabularDataset;
use crate::dist::{fit_empirical, gaussian_log_prob_rows, sample, GaussianMixture};
use crate::error::{invalid, Error, Result};
use crate::model::Posterior;
use crate::numcore::{log_sum_exp, Purpose, RngStream, Tensor};

/// Default cap on mixture components per group.
pub const DEFAULT_SUBSAMPLE: usize = 5000;

/// A Monte Carlo mean with its standard error, in nats.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MiEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl MiEstimate {
    fn from_terms(terms: &[f64]) -> Result<Self> {
        let n = terms.len();
        if n == 0 {
            return Err(Error::Empty("MI estimate over no rows"));
        }
        let mean = terms.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        if !mean.is_finite() {
            return Err(Error::NonFinite("MI estimate".into()));
        }
        Ok(Self {
            value: mean,
            std_error: (var / n as f64).sqrt(),
            samples: n,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MiEstimates {
    pub i_xz_given_u: MiEstimate,
    pub i_zu: MiEstimate,
    pub test_rows: usize,
    /// Largest number of components in any group mixture.
    pub mixture_components: usize,
}

/// Posterior means for every row of `data`.
pub fn posterior_means(enc: &dyn Posterior, data: &TabularDataset) -> Result<Tensor> {
    Ok(enc.posterior(data.x(), data.u())?.mean)
}

struct GroupMixtures {
    mixtures: Vec<GaussianMixture>,
    log_p_u: Vec<f64>,
    largest: usize,
}

fn group_mixtures(enc: &dyn Posterior, train: &TabularDataset, seed: u64, subsample: usize) -> Result<GroupMixtures> {
    if subsample == 0 {
        return Err(invalid("mixture subsample must be at least 1"));
    }
    let g = train.group_count();
    let mut by_group: Vec<Vec<usize>> = vec![Vec::new(); g];
    for (i, &u) in train.u().iter().enumerate() {
        by_group[u].push(i);
    }
    let p_u = fit_empirical(train.u(), g)?;
    let mut mixtures = Vec::with_capacity(g);
    let mut largest = 0;
    for (k, rows) in by_group.iter().enumerate() {
        if rows.is_empty() {
            return Err(Error::Data(format!(
                "group {:?} has no training rows to build its mixture",
                train.group_names()[k]
            )));
        }
        let chosen: Vec<usize> = if rows.len() > subsample {
            let mut pick = RngStream::new(seed, Purpose::Subsample, k as u64).sample_indices(rows.len(), subsample);
            pick.sort_unstable();
            pick.into_iter().map(|j| rows[j]).collect()
        } else {
            rows.clone()
        };
        let x = train.x().select_rows(&chosen);
        let u: Vec<usize> = vec![k; chosen.len()];
        let post = enc.posterior(&x, &u)?;
        largest = largest.max(chosen.len());
        mixtures.push(GaussianMixture::from_rows(&post)?);
    }
    Ok(GroupMixtures {
        mixtures,
        log_p_u: (0..g).map(|k| p_u.log_prob(k)).collect(),
        largest,
    })
}

/// Both estimators from one set of test samples.
pub fn estimate_mi(
    enc: &dyn Posterior,
    train: &TabularDataset,
    test: &TabularDataset,
    seed: u64,
    subsample: usize,
) -> Result<MiEstimates> {
    if train.group_count() != test.group_count() {
        return Err(invalid("train and test disagree on the group count"));
    }
    if test.is_empty() {
        return Err(Error::Empty("test data"));
    }
    let gm = group_mixtures(enc, train, seed, subsample)?;
    let post = enc.posterior(test.x(), test.u())?;
    let mut rng = RngStream::new(seed, Purpose::EvalNoise, 1 << 40);
    let z = sample(&post, &mut rng);
    let own = gaussian_log_prob_rows(&post, &z)?;
    let g = gm.mixtures.len();
    let mut xz = Vec::with_capacity(test.len());
    let mut zu = Vec::with_capacity(test.len());
    let mut scratch = Vec::new();
    let mut joint = vec![0.0; g];
    for i in 0..test.len() {
        let zi = z.row(i);
        for k in 0..g {
            joint[k] = gm.mixtures[k].log_prob_with(zi, &mut scratch) + gm.log_p_u[k];
        }
        let u = test.u()[i];
        let log_q_z_given_u = joint[u] - gm.log_p_u[u];
        xz.push(own[i] - log_q_z_given_u);
        let log_q_u_given_z = joint[u] - log_sum_exp(&joint);
        zu.push(log_q_u_given_z - gm.log_p_u[u]);
    }
    Ok(MiEstimates {
        i_xz_given_u: MiEstimate::from_terms(&xz)?,
        i_zu: MiEstimate::from_terms(&zu)?,
        test_rows: test.len(),
        mixture_components: gm.largest,
    })
}

pub fn estimate_mi_xz_given_u(
    enc: &dyn Posterior,
    train: &TabularDataset,
    test: &TabularDataset,
    seed: u64,
    subsample: usize,
) -> Result<MiEstimate> {
    Ok(estimate_mi(enc, train, test, seed, subsample)?.i_xz_given_u)
}

pub fn estimate_mi_zu(
    enc: &dyn Posterior,
    train: &TabularDataset,
    test: &TabularDataset,
    seed: u64,
    subsample: usize,
) -> Result<MiEstimate> {
    Ok(estimate_mi(enc, train, test, seed, subsample)?.i_zu)
}

/// Plug-in mutual information (nats) of a table of non-negative counts.
pub fn discrete_mi_oracle(counts: &[Vec<f64>]) -> Result<f64> {
    let cols = counts.first().map_or(0, Vec::len);
    if counts.iter().any(|r| r.len() != cols) {
        return Err(invalid("count table rows differ in length"));
    }
    if counts.iter().flatten().any(|&c| !(c >= 0.0) || !c.is_finite()) {
        return Err(invalid("counts must be finite and non-negative"));
    }
    let total: f64 = counts.iter().flatten().sum();
    if !(total > 0.0) {
        return Err(invalid("count table is all zero"));
    }
    let row: Vec<f64> = counts.iter().map(|r| r.iter().sum::<f64>() / total).collect();
    let col: Vec<f64> = (0..cols).map(|j| counts.iter().map(|r| r[j]).sum::<f64>() / total).collect();
    let mut mi = 0.0;
    for (i, r) in counts.iter().enumerate() {
        for (j, &c) in r.iter().enumerate() {
            if c > 0.0 {
                let p = c / total;
                mi += p * (p / (row[i] * col[j])).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

#[cfg(test)]
mod tests;
