use super::*;
use crate::data::{synthetic_gen, SyntheticSpec};
use crate::dist::DiagGaussian;
use crate::model::PriorPosterior;

/// Near-deterministic embedding of the binary feature in column 0.
struct EmbedFirst {
    scale: f64,
}

impl Posterior for EmbedFirst {
    fn z_dim(&self) -> usize {
        1
    }

    fn posterior(&self, x: &Tensor, _u: &[usize]) -> Result<DiagGaussian> {
        let mean = Tensor::matrix(x.rows(), 1, (0..x.rows()).map(|i| self.scale * x.row(i)[0]).collect())?;
        DiagGaussian::new(mean, Tensor::full(&[x.rows(), 1], -4.0))
    }
}

fn counts(a: &[usize], b: &[usize]) -> Vec<Vec<f64>> {
    let mut t = vec![vec![0.0; 2]; 2];
    for (&i, &j) in a.iter().zip(b) {
        t[i][j] += 1.0;
    }
    t
}

fn first_bits(data: &TabularDataset) -> Vec<usize> {
    (0..data.len()).map(|i| usize::from(data.x().row(i)[0] > 0.5)).collect()
}

#[test]
fn discrete_oracle_known_table() {
    // ln 2 − H_b(3/4).
    let want = 2f64.ln() + 0.75 * 0.75f64.ln() + 0.25 * 0.25f64.ln();
    let got = discrete_mi_oracle(&[vec![3.0, 1.0], vec![1.0, 3.0]]).unwrap();
    assert!((got - want).abs() < 1e-12);
    assert!((got - 0.130812).abs() < 1e-6);
    assert_eq!(discrete_mi_oracle(&[vec![2.0, 2.0], vec![5.0, 5.0]]).unwrap(), 0.0);
    assert!(discrete_mi_oracle(&[vec![0.0, 0.0]]).is_err());
    assert!(discrete_mi_oracle(&[vec![1.0], vec![1.0, 2.0]]).is_err());
}

#[test]
fn prior_encoder_carries_nothing() {
    let spec = SyntheticSpec::default();
    let train = synthetic_gen(&spec, 1).unwrap();
    let test = synthetic_gen(&spec, 2).unwrap();
    let est = estimate_mi(&PriorPosterior { z_dim: 3 }, &train, &test, 0, 500).unwrap();
    assert!(est.i_xz_given_u.value.abs() < 1e-9);
    assert!(est.i_zu.value.abs() < 1e-9);
    assert_eq!(est.mixture_components, 500);
}

#[test]
fn embedding_of_correlated_bit_matches_discrete_oracle() {
    let spec = SyntheticSpec {
        n: 3000,
        rho: 0.6,
        ..SyntheticSpec::default()
    };
    let train = synthetic_gen(&spec, 3).unwrap();
    let test = synthetic_gen(&spec, 4).unwrap();
    let enc = EmbedFirst { scale: 6.0 };
    let est = estimate_mi(&enc, &train, &test, 0, DEFAULT_SUBSAMPLE).unwrap();

    let a_tr = first_bits(&train);
    let i_au = discrete_mi_oracle(&counts(&a_tr, train.u())).unwrap();
    assert!((est.i_zu.value - i_au).abs() < 0.02, "{:?} vs {i_au}", est.i_zu);

    // z recovers a exactly, so I(x;z|u) = H(a|u) = H(a) − I(a;u).
    let p1 = a_tr.iter().sum::<usize>() as f64 / a_tr.len() as f64;
    let h_a = -(p1 * p1.ln() + (1.0 - p1) * (1.0 - p1).ln());
    assert!((est.i_xz_given_u.value - (h_a - i_au)).abs() < 0.02, "{:?}", est.i_xz_given_u);
    assert!(est.i_zu.std_error > 0.0 && est.i_zu.std_error < 0.02);
}

#[test]
fn embedding_of_u_reaches_entropy() {
    let spec = SyntheticSpec {
        rho: 1.0,
        ..SyntheticSpec::default()
    };
    let train = synthetic_gen(&spec, 5).unwrap();
    let test = synthetic_gen(&spec, 6).unwrap();
    let est = estimate_mi_zu(&EmbedFirst { scale: 6.0 }, &train, &test, 0, DEFAULT_SUBSAMPLE).unwrap();
    let h_u = train.u_marginal().unwrap().entropy();
    assert!((est.value - h_u).abs() < 0.01, "{est:?} vs {h_u}");
}

#[test]
fn subsample_is_seeded() {
    let spec = SyntheticSpec::default();
    let train = synthetic_gen(&spec, 7).unwrap();
    let test = synthetic_gen(&spec, 8).unwrap();
    let enc = EmbedFirst { scale: 1.0 };
    let a = estimate_mi(&enc, &train, &test, 11, 100).unwrap();
    let b = estimate_mi(&enc, &train, &test, 11, 100).unwrap();
    assert_eq!(a, b);
    assert!(estimate_mi(&enc, &train, &test, 11, 0).is_err());
}

#[test]
fn logistic_fits_noisy_linear_labels() {
    let mut rng = RngStream::from_seed(9);
    let n = 4000;
    let mut x = Vec::with_capacity(n * 2);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let (a, b) = (rng.normal(), rng.normal());
        x.extend([a, b]);
        let p = crate::numcore::sigmoid(2.0 * a - b + 0.5);
        y.push(u8::from(rng.uniform() < p));
    }
    let x = Tensor::matrix(n, 2, x).unwrap();
    let m = fit_logistic_regression(&x, &y, 0.0, 100).unwrap();
    assert!(m.grad_norm < 1e-6);
    assert!((m.weights[0] - 2.0).abs() < 0.25 && (m.weights[1] + 1.0).abs() < 0.2 && (m.bias - 0.5).abs() < 0.2);
}

#[test]
fn logistic_separable_and_duplicated_columns_stay_finite() {
    let x = Tensor::from_rows(&[vec![-2.0, -2.0], vec![-1.0, -1.0], vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
    let y = [0, 0, 1, 1];
    let m = fit_logistic_regression(&x, &y, 1e-3, 100).unwrap();
    assert!(m.weights.iter().all(|w| w.is_finite() && *w > 0.0));
    assert!((m.weights[0] - m.weights[1]).abs() < 1e-6);
    let p = m.predict_proba(&x).unwrap();
    assert!(p[0] < 0.5 && p[3] > 0.5);
    assert!(fit_logistic_regression(&x, &[1, 1, 1, 1], 0.0, 10).is_err());
}

#[test]
fn auc_examples() {
    assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
    assert_eq!(auc(&[0.1, 0.2, 0.3, 0.4], &[0, 0, 1, 1]).unwrap(), 1.0);
    assert_eq!(auc(&[0.5; 4], &[0, 1, 0, 1]).unwrap(), 0.5);
    let s = [0.3, -1.0, 2.5, 0.7, 0.1];
    let y = [1, 0, 1, 0, 1];
    let warped: Vec<f64> = s.iter().map(|v: &f64| v.exp() * 3.0).collect();
    assert_eq!(auc(&s, &y).unwrap(), auc(&warped, &y).unwrap());
    assert!(auc(&[0.1, 0.2], &[1, 1]).is_err());
}

#[test]
fn auc_pairwise_example() {
    assert_eq!(auc(&[0.9, 0.7, 0.6, 0.2], &[1, 0, 1, 0]).unwrap(), 0.75);
}

#[test]
fn logistic_separable_training_accuracy() {
    let mut rng = RngStream::from_seed(12);
    let n = 200;
    let mut x = Vec::with_capacity(n * 2);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 2) as u8;
        let shift = if label == 1 { 2.0 } else { -2.0 };
        x.extend([shift + 0.5 * rng.normal(), rng.normal()]);
        y.push(label);
    }
    let x = Tensor::matrix(n, 2, x).unwrap();
    let m = fit_logistic_regression(&x, &y, 1e-6, 100).unwrap();
    let p = m.predict_proba(&x).unwrap();
    let correct = p.iter().zip(&y).filter(|(p, &t)| (**p >= 0.5) == (t == 1)).count();
    assert_eq!(correct, n);
}

#[test]
fn logistic_noise_features_score_chance() {
    let mut rng = RngStream::from_seed(13);
    let make = |rng: &mut RngStream, n: usize| {
        let x = Tensor::matrix(n, 3, (0..n * 3).map(|_| rng.normal()).collect()).unwrap();
        let y: Vec<u8> = (0..n).map(|_| u8::from(rng.bernoulli(0.5))).collect();
        (x, y)
    };
    let (xtr, ytr) = make(&mut rng, 2000);
    let (xte, yte) = make(&mut rng, 4000);
    let res = run_downstream(&xtr, &ytr, &xte, &yte, 1e-4).unwrap();
    assert!((res.test_auc - 0.5).abs() < 0.05, "{}", res.test_auc);
}

#[test]
fn duplicated_column_matches_single_column_at_half_penalty() {
    // Splitting w over two equal columns halves the penalty on the sum weight.
    let mut rng = RngStream::from_seed(14);
    let n = 300;
    let a: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let y: Vec<u8> = a.iter().map(|&v| u8::from(rng.uniform() < crate::numcore::sigmoid(1.5 * v))).collect();
    let single = Tensor::matrix(n, 1, a.clone()).unwrap();
    let double = Tensor::matrix(n, 2, a.iter().flat_map(|&v| [v, v]).collect()).unwrap();
    let l2 = 0.05;
    let m1 = fit_logistic_regression(&single, &y, l2 / 2.0, 100).unwrap();
    let m2 = fit_logistic_regression(&double, &y, l2, 100).unwrap();
    let p1 = m1.predict_proba(&single).unwrap();
    let p2 = m2.predict_proba(&double).unwrap();
    for (a, b) in p1.iter().zip(&p2) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn entropy_ceiling_examples() {
    let h = crate::dist::EmpiricalCategorical::from_probs(vec![0.75, 0.25]).unwrap().entropy();
    assert!((h - 0.562335).abs() < 1e-6);
    let h = crate::dist::EmpiricalCategorical::from_probs(vec![0.5, 0.5]).unwrap().entropy();
    assert!((h - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn estimates_stay_within_entropy_bound() {
    let spec = SyntheticSpec {
        rho: 0.9,
        ..SyntheticSpec::default()
    };
    let train = synthetic_gen(&spec, 15).unwrap();
    let test = synthetic_gen(&spec, 16).unwrap();
    let est = estimate_mi_zu(&EmbedFirst { scale: 20.0 }, &train, &test, 0, DEFAULT_SUBSAMPLE).unwrap();
    let h_u = train.u_marginal().unwrap().entropy();
    assert!(est.value <= h_u + 0.05 && est.value >= -0.05);
}
