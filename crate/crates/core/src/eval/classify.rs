use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::numcore::{sigmoid, softplus, Tensor};

/// `p(y = 1 | f) = σ(f·w + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Newton iterations used.
    pub iterations: usize,
    pub grad_norm: f64,
}

impl LogisticModel {
    pub fn predict_proba(&self, features: &Tensor) -> Result<Vec<f64>> {
        if features.cols() != self.weights.len() {
            return Err(Error::ShapeMismatch {
                op: "logistic predict",
                left: vec![self.weights.len()],
                right: features.shape().to_vec(),
            });
        }
        Ok((0..features.rows())
            .map(|i| sigmoid(self.margin(features.row(i))))
            .collect())
    }

    fn margin(&self, row: &[f64]) -> f64 {
        self.bias + row.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>()
    }
}

fn check_labels(labels: &[u8]) -> Result<()> {
    if labels.iter().any(|&y| y > 1) {
        return Err(invalid("labels must be 0 or 1"));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(invalid("both classes must be present"));
    }
    Ok(())
}

/// Objective `mean log-loss + ½·l2·‖w‖²` (bias unpenalized).
fn objective(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, l2: f64) -> f64 {
    let m = x * beta;
    let n = y.len() as f64;
    let loss: f64 = m.iter().zip(y.iter()).map(|(&a, &t)| softplus(a) - t * a).sum::<f64>() / n;
    let d = beta.len() - 1;
    loss + 0.5 * l2 * beta.rows(0, d).norm_squared()
}

/// Newton's method with step halving on L2-regularized logistic loss, to a
/// gradient norm below `1e-6` or `iterations` steps.
pub fn fit_logistic_regression(features: &Tensor, labels: &[u8], l2: f64, iterations: usize) -> Result<LogisticModel> {
    let (n, d) = (features.rows(), features.cols());
    if labels.len() != n {
        return Err(invalid("one label per feature row is required"));
    }
    check_labels(labels)?;
    if !(l2 >= 0.0) {
        return Err(invalid("l2 strength must be non-negative"));
    }
    let mut x = DMatrix::from_element(n, d + 1, 1.0);
    for i in 0..n {
        for (j, v) in features.row(i).iter().enumerate() {
            x[(i, j)] = *v;
        }
    }
    let y = DVector::from_iterator(n, labels.iter().map(|&v| v as f64));
    let mut beta = DVector::zeros(d + 1);
    let nf = n as f64;
    let mut penalty = DVector::from_element(d + 1, l2);
    penalty[d] = 0.0;
    let mut grad_norm = f64::INFINITY;
    let mut used = 0;
    for it in 0..iterations {
        let m = &x * &beta;
        let p = m.map(sigmoid);
        let grad = x.transpose() * (&p - &y) / nf + penalty.component_mul(&beta);
        grad_norm = grad.norm();
        used = it;
        if grad_norm < 1e-6 {
            break;
        }
        let w = p.map(|v| (v * (1.0 - v)).max(1e-12) / nf);
        let mut xw = x.clone();
        for (i, mut row) in xw.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let mut h = x.transpose() * xw;
        for k in 0..=d {
            // A small ridge keeps separable or collinear problems solvable.
            h[(k, k)] += penalty[k] + 1e-10;
        }
        let step = h
            .clone()
            .cholesky()
            .map(|c| c.solve(&grad))
            .or_else(|| h.lu().solve(&grad))
            .ok_or_else(|| Error::NonFinite("singular Hessian in logistic regression".into()))?;
        let current = objective(&x, &y, &beta, l2);
        let mut t = 1.0;
        loop {
            let candidate = &beta - &step * t;
            if objective(&x, &y, &candidate, l2) <= current || t < 1e-10 {
                beta = candidate;
                break;
            }
            t *= 0.5;
        }
        used = it + 1;
    }
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logistic regression weights".into()));
    }
    Ok(LogisticModel {
        weights: beta.rows(0, d).iter().copied().collect(),
        bias: beta[d],
        iterations: used,
        grad_norm,
    })
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(invalid("one label per score is required"));
    }
    check_labels(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average ranks over tied runs.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    Ok((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DownstreamResult {
    pub model: LogisticModel,
    pub test_auc: f64,
    /// Test-set probabilities of `y = 1`.
    pub predictions: Vec<f64>,
}

/// Fit on training features and score the test features.
pub fn run_downstream(
    train_features: &Tensor,
    train_labels: &[u8],
    test_features: &Tensor,
    test_labels: &[u8],
    l2: f64,
) -> Result<DownstreamResult> {
    let model = fit_logistic_regression(train_features, train_labels, l2, 100)?;
    let predictions = model.predict_proba(test_features)?;
    let test_auc = auc(&predictions, test_labels)?;
    Ok(DownstreamResult {
        model,
        test_auc,
        predictions,
    })
}
