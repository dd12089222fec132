//! Numerically stable scalar activations.

use crate::numcore::Tensor;

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    let e = (-x.abs()).exp();
    // ln is several times cheaper than ln_1p; the series covers the range
    // where 1 + e would round.
    let tail = if e < 1e-5 { e - 0.5 * e * e } else { (1.0 + e).ln() };
    x.max(0.0) + tail
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln Σ e^{x_i}`; `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Softplus,
    Sigmoid,
    /// Row-wise log-sum-exp; the result has one column.
    LogSumExp,
}

pub fn stable_activations(x: &Tensor, kind: Activation) -> Tensor {
    match kind {
        Activation::Softplus => x.map(softplus),
        Activation::Sigmoid => x.map(sigmoid),
        Activation::LogSumExp => {
            let rows = x.rows();
            let data = (0..rows).map(|i| log_sum_exp(x.row(i))).collect();
            Tensor::from_parts(vec![rows, 1], data)
        }
    }
}
