use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetMeta, Standardizer, TabularDataset};
use crate::error::{invalid, Result};
use crate::numcore::{sigmoid, Purpose, RngStream, Tensor};

/// Logistic label rule `y ~ Bern(σ(latent_weight·(2a−1) + feature_weight·s + bias))`
/// where `s` is the mean of the other binary features mapped to ±1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRule {
    pub latent_weight: f64,
    pub feature_weight: f64,
    pub bias: f64,
}

/// Binary `u ~ Bern(1/2)` and a binary latent `a` in column 0 of `x` that
/// copies `u` with probability `rho` and is a fresh fair coin otherwise.
///
/// The remaining binary columns are independent fair coins; continuous
/// columns are `continuous_signal·(2a−1) + N(0,1)`, standardized. Since `x`
/// depends on `u` only through `a`, `I(x;u) = I(a;u) = ln 2 − H_b((1+rho)/2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub binary_dim: usize,
    pub continuous_dim: usize,
    pub rho: f64,
    pub continuous_signal: f64,
    pub label: Option<LabelRule>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 2000,
            binary_dim: 4,
            continuous_dim: 2,
            rho: 0.5,
            continuous_signal: 1.0,
            label: None,
        }
    }
}

/// Binary entropy in nats.
pub fn binary_entropy(p: f64) -> f64 {
    let h = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
    h(p) + h(1.0 - p)
}

impl SyntheticSpec {
    pub fn oracle_mi(&self) -> f64 {
        (LN_2 - binary_entropy((1.0 + self.rho) / 2.0)).max(0.0)
    }
}

pub fn synthetic_gen(spec: &SyntheticSpec, seed: u64) -> Result<TabularDataset> {
    if !(0.0..=1.0).contains(&spec.rho) {
        return Err(invalid(format!("rho must be in [0, 1], got {}", spec.rho)));
    }
    if spec.binary_dim == 0 || spec.n == 0 {
        return Err(invalid("synthetic data needs n >= 1 and binary_dim >= 1"));
    }
    let mut rng = RngStream::new(seed, Purpose::Synthetic, 0);
    let width = spec.binary_dim + spec.continuous_dim;
    let mut x = Vec::with_capacity(spec.n * width);
    let mut u = Vec::with_capacity(spec.n);
    let mut y = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let ui = usize::from(rng.bernoulli(0.5));
        let a = if rng.bernoulli(spec.rho) { ui } else { usize::from(rng.bernoulli(0.5)) };
        let sa = 2.0 * a as f64 - 1.0;
        x.push(a as f64);
        let mut s = 0.0;
        for _ in 1..spec.binary_dim {
            let b = f64::from(u8::from(rng.bernoulli(0.5)));
            s += 2.0 * b - 1.0;
            x.push(b);
        }
        for _ in 0..spec.continuous_dim {
            x.push(spec.continuous_signal * sa + rng.normal());
        }
        if let Some(rule) = &spec.label {
            let s = if spec.binary_dim > 1 { s / (spec.binary_dim - 1) as f64 } else { 0.0 };
            let p = sigmoid(rule.latent_weight * sa + rule.feature_weight * s + rule.bias);
            y.push(u8::from(rng.bernoulli(p)));
        }
        u.push(ui);
    }
    let mut x = Tensor::matrix(spec.n, width, x)?;
    let standardizer = Standardizer::fit(&x, (spec.binary_dim..width).collect());
    standardizer.apply(&mut x);
    let mut feature_names = vec!["a".to_string()];
    feature_names.extend((1..spec.binary_dim).map(|j| format!("b{j}")));
    feature_names.extend((0..spec.continuous_dim).map(|j| format!("c{j}")));
    let meta = DatasetMeta {
        feature_names,
        binary_mask: (0..width).map(|j| j < spec.binary_dim).collect(),
        one_hot_blocks: Vec::new(),
        group_names: vec!["u0".into(), "u1".into()],
        standardizer,
        provenance: format!("synthetic rho={} seed={seed}", spec.rho),
    };
    let labels = spec.label.is_some().then_some(y);
    TabularDataset::new(x, u, labels, (0..spec.n as u64).collect(), meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_endpoints() {
        let mut s = SyntheticSpec { rho: 0.0, ..Default::default() };
        assert!(s.oracle_mi().abs() < 1e-15);
        s.rho = 1.0;
        assert!((s.oracle_mi() - LN_2).abs() < 1e-15);
    }

    #[test]
    fn rho_one_copies_u() {
        let s = SyntheticSpec { rho: 1.0, n: 200, ..Default::default() };
        let d = synthetic_gen(&s, 4).unwrap();
        for i in 0..d.len() {
            assert_eq!(d.x().row(i)[0], d.u()[i] as f64);
        }
    }

    #[test]
    fn rejects_bad_rho() {
        let s = SyntheticSpec { rho: 1.5, ..Default::default() };
        assert!(synthetic_gen(&s, 0).is_err());
    }

    #[test]
    fn labels_follow_rule() {
        let rule = LabelRule { latent_weight: 20.0, feature_weight: 0.0, bias: 0.0 };
        let s = SyntheticSpec { n: 300, label: Some(rule), ..Default::default() };
        let d = synthetic_gen(&s, 9).unwrap();
        let y = d.y().unwrap();
        let agree = (0..d.len()).filter(|&i| y[i] as f64 == d.x().row(i)[0]).count();
        assert!(agree >= 299);
    }
}
