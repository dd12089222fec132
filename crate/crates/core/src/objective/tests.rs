use super::*;
use crate::dist::fit_empirical;
use crate::model::{init_params, ModelConfig, ParamSet};
use crate::numcore::{adam_step, softplus, AdamConfig, AdamState, RngStream};

fn batch(x: Vec<Vec<f64>>, u: Vec<usize>, y: Option<Vec<u8>>, groups: usize) -> Batch {
    Batch {
        x: Tensor::from_rows(&x).unwrap(),
        u_onehot: Tensor::one_hot(&u, groups).unwrap(),
        u,
        y,
    }
}

fn config(x_dim: usize, z_dim: usize, binary: bool) -> ModelConfig {
    ModelConfig {
        x_dim,
        u_group_count: 2,
        z_dim,
        hidden_dim: 5,
        binary_feature_mask: vec![binary; x_dim],
        label_conditioned_adversaries: true,
    }
}

fn est(l_r: f64, c1: Option<f64>, c2: Option<f64>) -> BatchEstimates {
    BatchEstimates {
        l_r,
        c: PerConstraint { c1, c2, eo: None, eopp: None },
        batch_size: 1,
    }
}

fn lambdas(c1: f64, c2: f64) -> Multipliers {
    let mut m = Multipliers::splat(1.0);
    m.lambda.c1 = c1;
    m.lambda.c2 = c2;
    m
}

#[test]
fn mifr_loss_arithmetic() {
    let e = est(1.0, Some(2.0), Some(3.0));
    assert_eq!(mifr_loss(&e, &lambdas(1.0, 0.5)), 4.5);
    assert_eq!(mifr_loss(&e, &lambdas(0.0, 0.0)), 1.0);
}

#[test]
fn lmifr_loss_arithmetic() {
    let spec = ConstraintSpec::new().with(ConstraintId::C1, 1.0).with(ConstraintId::C2, 1.0);
    let e = est(1.0, Some(2.0), Some(3.0));
    assert_eq!(lmifr_loss(&e, &lambdas(1.0, 1.0), &spec), 4.0);
    let at_budget = est(1.0, Some(1.0), Some(1.0));
    assert_eq!(lmifr_loss(&at_budget, &lambdas(3.0, 7.0), &spec), 1.0);
    assert_eq!(lmifr_loss(&e, &lambdas(0.0, 0.0), &spec), 1.0);
    // d/dλ_i is C_i − ε_i
    let base = lmifr_loss(&e, &lambdas(1.0, 1.0), &spec);
    let bumped = lmifr_loss(&e, &lambdas(1.5, 1.0), &spec);
    assert!(((bumped - base) / 0.5 - 1.0).abs() < 1e-12);
}

#[test]
fn ascent_step_moves_and_clamps() {
    let spec = ConstraintSpec::new().with(ConstraintId::C2, 0.1);
    let e = est(0.0, None, Some(0.2));
    let next = lambda_ascent_step(&Multipliers::splat(1.0), &e, &spec, 0.01).unwrap();
    assert!((next.lambda.c2 - 1.001).abs() < 1e-12);
    assert_eq!(next.lambda.c1, 1.0);

    let violated = est(0.0, None, Some(1e6));
    let mut m = Multipliers::splat(1.0);
    for _ in 0..3 {
        m = lambda_ascent_step(&m, &violated, &spec, 0.01).unwrap();
    }
    assert_eq!(m.lambda.c2, LAMBDA_MAX);

    let satisfied = est(0.0, None, Some(0.0));
    let mut m = Multipliers::splat(1.0);
    let mut prev = m.lambda.c2;
    for _ in 0..2000 {
        m = lambda_ascent_step(&m, &satisfied, &spec, 0.01).unwrap();
        assert!(m.lambda.c2 <= prev);
        prev = m.lambda.c2;
    }
    assert_eq!(m.lambda.c2, LAMBDA_MIN);
    assert!(lambda_ascent_step(&m, &satisfied, &spec, 0.0).is_err());
}

#[test]
fn spec_budgets() {
    let spec = ConstraintSpec::new().with(ConstraintId::C2, 0.1).with_unbudgeted(ConstraintId::C1);
    assert_eq!(spec.budget(ConstraintId::C2), 0.1);
    assert_eq!(spec.budget(ConstraintId::C1), f64::INFINITY);
    assert_eq!(spec.budget(ConstraintId::Eo), f64::INFINITY);
    assert!(spec.validate_for_dual().is_err());
    assert!(ConstraintSpec::new().validate_for_dual().is_err());
    assert!(ConstraintSpec::new().with(ConstraintId::C1, 0.0).validate().is_err());
}

#[test]
fn c1_of_unit_shifted_posterior_is_half() {
    let cfg = config(2, 1, false);
    let mut params = init_params(&cfg, 0).unwrap();
    for t in params.encoder.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    params.encoder.mean_head.bias.data_mut()[0] = 1.0;
    let b = batch(vec![vec![0.3, -0.2]], vec![1], None, 2);
    assert!((c1_term(&b, &params.encoder).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn prior_source_has_zero_c1() {
    let b = batch(vec![vec![0.3, -0.2], vec![1.0, 2.0]], vec![1, 0], None, 2);
    let mut tape = Tape::new();
    let noise = Tensor::zeros(&[2, 3]);
    let e = encode_on_tape(&mut tape, EncoderSource::Prior { z_dim: 3 }, true, &b, &noise).unwrap();
    let c = c1_on_tape(&mut tape, e.post).unwrap();
    assert_eq!(tape.scalar(c).unwrap(), 0.0);
}

#[test]
fn zero_decoder_gives_d_ln2() {
    let cfg = config(3, 2, true);
    let mut params = init_params(&cfg, 1).unwrap();
    for t in params.decoder.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let b = batch(vec![vec![1.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]], vec![0, 1], None, 2);
    let noise = RngStream::from_seed(2).normal_tensor(&[2, 2]);
    let l = recon_loss(&b, &params.encoder, &params.decoder, &noise).unwrap();
    assert!((l - 3.0 * std::f64::consts::LN_2).abs() < 1e-12);
}

/// Row-vector forward pass written out with loops.
fn dense_by_hand(input: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (ins, outs) = (w.rows(), w.cols());
    (0..outs)
        .map(|j| b.data()[j] + (0..ins).map(|i| input[i] * w.data()[i * outs + j]).sum::<f64>())
        .collect()
}

fn mlp_by_hand(input: &[f64], hidden: &crate::model::Dense, output: &crate::model::Dense) -> Vec<f64> {
    let h: Vec<f64> = dense_by_hand(input, &hidden.weight, &hidden.bias).into_iter().map(softplus).collect();
    dense_by_hand(&h, &output.weight, &output.bias)
}

fn z_by_hand(enc: &EncoderParams, x: &[f64], u: usize, noise: &[f64]) -> Vec<f64> {
    let mut input = x.to_vec();
    input.extend((0..2).map(|g| f64::from(u8::from(g == u))));
    let h: Vec<f64> = dense_by_hand(&input, &enc.hidden.weight, &enc.hidden.bias).into_iter().map(softplus).collect();
    let mean = dense_by_hand(&h, &enc.mean_head.weight, &enc.mean_head.bias);
    let raw = dense_by_hand(&h, &enc.log_std_head.weight, &enc.log_std_head.bias);
    mean.iter()
        .zip(raw)
        .zip(noise)
        .map(|((m, r), e)| {
            let s = if r >= 0.0 { crate::model::LOG_STD_MAX } else { -crate::model::LOG_STD_MIN };
            let ls = s * (r / s).tanh();
            m + ls.exp() * e
        })
        .collect()
}

fn log_softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + v.iter().map(|a| (a - m).exp()).sum::<f64>().ln();
    v.iter().map(|a| a - lse).collect()
}

#[test]
fn recon_matches_enumeration_on_two_points() {
    let mut cfg = config(3, 2, true);
    cfg.binary_feature_mask = vec![true, false, true];
    let p = init_params(&cfg, 5).unwrap();
    let xs = vec![vec![1.0, 0.4, 0.0], vec![0.0, -1.3, 1.0]];
    let us = vec![0, 1];
    let noise = Tensor::matrix(2, 2, vec![0.5, -0.1, -1.2, 0.8]).unwrap();
    let b = batch(xs.clone(), us.clone(), None, 2);
    let got = recon_loss(&b, &p.encoder, &p.decoder, &noise).unwrap();
    let mut total = 0.0;
    for i in 0..2 {
        let mut zin = z_by_hand(&p.encoder, &xs[i], us[i], noise.row(i));
        zin.extend((0..2).map(|g| f64::from(u8::from(g == us[i]))));
        let out = mlp_by_hand(&zin, &p.decoder.hidden, &p.decoder.output);
        for j in 0..3 {
            total += if cfg.binary_feature_mask[j] {
                let pr = 1.0 / (1.0 + (-out[j]).exp());
                if xs[i][j] == 1.0 { pr.ln() } else { (1.0 - pr).ln() }
            } else {
                -0.5 * (xs[i][j] - out[j]).powi(2) - 0.5 * (2.0 * std::f64::consts::PI).ln()
            };
        }
    }
    assert!((got + total / 2.0).abs() < 1e-10, "{got} vs {}", -total / 2.0);
}

fn constant_adversary(cfg: &ModelConfig, logits: &[f64]) -> AdversaryParams {
    let mut a = AdversaryParams::zeros(cfg, false);
    a.output.bias.data_mut().copy_from_slice(logits);
    a
}

#[test]
fn c2_of_marginal_predictor_is_zero() {
    let cfg = config(2, 2, false);
    let p = init_params(&cfg, 3).unwrap();
    let u = vec![0, 0, 0, 1];
    let p_u = fit_empirical(&u, 2).unwrap();
    let adv = constant_adversary(&cfg, &[p_u.log_prob(0), p_u.log_prob(1)]);
    let b = batch(vec![vec![0.1, 0.2]; 4], u, None, 2);
    let noise = RngStream::from_seed(1).normal_tensor(&[4, 2]);
    assert!(c2_term(&b, &p.encoder, &adv, &p_u, &noise).unwrap().abs() < 1e-12);
    // Cross-entropy at the marginal is H(u) of a (0.75, 0.25) split.
    let h = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
    assert!((h - 0.562335).abs() < 1e-6);
    assert!((adversary_loss(&b, &p.encoder, &adv, &noise).unwrap() - h).abs() < 1e-12);
    let uniform = constant_adversary(&cfg, &[0.0, 0.0]);
    let l = adversary_loss(&b, &p.encoder, &uniform, &noise).unwrap();
    assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
}

fn adv_params(hidden_w: Vec<f64>, out_w: Vec<f64>, out_b: Vec<f64>, label: bool) -> AdversaryParams {
    let ins = hidden_w.len();
    AdversaryParams {
        hidden: crate::model::Dense {
            weight: Tensor::matrix(ins, 1, hidden_w).unwrap(),
            bias: Tensor::zeros(&[1]),
        },
        output: crate::model::Dense {
            weight: Tensor::matrix(1, 2, out_w).unwrap(),
            bias: Tensor::vector(out_b),
        },
        label_conditioned: label,
    }
}

fn c2_with_fixed_z(adv: &AdversaryParams, z: &Tensor, b: &Batch, p_u: &EmpiricalCategorical) -> f64 {
    let mut tape = Tape::new();
    let a = adv.bind(&mut tape, false);
    let zv = tape.constant(z.clone());
    let c = c2_on_tape(&mut tape, &a, zv, b, p_u).unwrap();
    tape.scalar(c).unwrap()
}

#[test]
fn perfect_adversary_reaches_ln2() {
    let u = vec![0, 1, 0, 1];
    let z = Tensor::matrix(4, 1, vec![-1.0, 1.0, -1.0, 1.0]).unwrap();
    let b = batch(vec![vec![0.0]; 4], u.clone(), None, 2);
    let p_u = fit_empirical(&u, 2).unwrap();
    let adv = adv_params(vec![40.0], vec![-1.0, 1.0], vec![20.0, -20.0], false);
    let c = c2_with_fixed_z(&adv, &z, &b, &p_u);
    assert!((c - std::f64::consts::LN_2).abs() < 1e-6, "{c}");
    assert!(c <= p_u.entropy() + 1e-9);
}

#[test]
fn c2_matches_direct_formula() {
    let u = vec![0, 1, 1, 0];
    let zs = [0.3, -0.7, 1.1, 2.0];
    let z = Tensor::matrix(4, 1, zs.to_vec()).unwrap();
    let b = batch(vec![vec![0.0]; 4], u.clone(), None, 2);
    let p_u = EmpiricalCategorical::from_probs(vec![0.6, 0.4]).unwrap();
    let adv = adv_params(vec![1.5], vec![0.8, -0.4], vec![0.1, 0.2], false);
    let mut want = 0.0;
    for i in 0..4 {
        let h = softplus(1.5 * zs[i]);
        let ls = log_softmax(&[0.8 * h + 0.1, -0.4 * h + 0.2]);
        want += ls[u[i]] - [0.6f64, 0.4][u[i]].ln();
    }
    want /= 4.0;
    assert!((c2_with_fixed_z(&adv, &z, &b, &p_u) - want).abs() < 1e-13);
}

fn label_term(adv: &AdversaryParams, z: &Tensor, b: &Batch, p_u: &EmpiricalCategorical, q: Option<f64>) -> f64 {
    let mut tape = Tape::new();
    let a = adv.bind(&mut tape, false);
    let zv = tape.constant(z.clone());
    let c = match q {
        Some(q) => ceo_on_tape(&mut tape, &a, zv, b, p_u, q).unwrap(),
        None => ceopp_on_tape(&mut tape, &a, zv, b, p_u).unwrap(),
    };
    tape.scalar(c).unwrap()
}

#[test]
fn label_terms_match_hand_computation() {
    let u = vec![0, 1, 1, 0, 1, 0];
    let y = vec![1, 1, 0, 0, 1, 0];
    let zs = [0.3, -0.7, 1.1, 2.0, -0.2, 0.9];
    let z = Tensor::matrix(6, 1, zs.to_vec()).unwrap();
    let b = batch(vec![vec![0.0]; 6], u.clone(), Some(y.clone()), 2);
    let p_u = EmpiricalCategorical::from_probs(vec![0.5, 0.5]).unwrap();
    // Inputs are (z, onehot(y)).
    let adv = adv_params(vec![1.5, 0.7, -0.9], vec![0.8, -0.4], vec![0.1, 0.2], true);
    let mut slice = [0.0; 2];
    let mut count = [0.0; 2];
    for i in 0..6 {
        let yv = y[i] as usize;
        let pre = 1.5 * zs[i] + if yv == 0 { 0.7 } else { -0.9 };
        let h = softplus(pre);
        let ls = log_softmax(&[0.8 * h + 0.1, -0.4 * h + 0.2]);
        slice[yv] += ls[u[i]] - 0.5f64.ln();
        count[yv] += 1.0;
    }
    let s0 = slice[0] / count[0];
    let s1 = slice[1] / count[1];
    let q1 = 0.3;
    let eo = label_term(&adv, &z, &b, &p_u, Some(q1));
    assert!((eo - (q1 * s1 + (1.0 - q1) * s0)).abs() < 1e-13);
    let eopp = label_term(&adv, &z, &b, &p_u, None);
    assert!((eopp - s1).abs() < 1e-13);
    // Convex combination of the slices.
    assert!(eo >= s0.min(s1) - 1e-12 && eo <= s0.max(s1) + 1e-12);
}

#[test]
fn all_positive_labels_make_eo_equal_eopp() {
    let u = vec![0, 1, 1, 0];
    let z = Tensor::matrix(4, 1, vec![0.3, -0.7, 1.1, 2.0]).unwrap();
    let b = batch(vec![vec![0.0]; 4], u, Some(vec![1; 4]), 2);
    let p_u = EmpiricalCategorical::from_probs(vec![0.5, 0.5]).unwrap();
    let adv = adv_params(vec![1.5, 0.7, -0.9], vec![0.8, -0.4], vec![0.1, 0.2], true);
    let eo = label_term(&adv, &z, &b, &p_u, Some(1.0));
    let eopp = label_term(&adv, &z, &b, &p_u, None);
    assert!((eo - eopp).abs() < 1e-14);
}

#[test]
fn label_terms_need_labels_and_label_adversary() {
    let cfg = config(2, 2, false);
    let p = init_params(&cfg, 3).unwrap();
    let p_u = EmpiricalCategorical::from_probs(vec![0.5, 0.5]).unwrap();
    let noise = Tensor::zeros(&[2, 2]);
    let unlabeled = batch(vec![vec![0.0, 0.0]; 2], vec![0, 1], None, 2);
    let adv_y = p.label_adversary.clone().unwrap();
    assert!(ceo_term(&unlabeled, &p.encoder, &adv_y, &p_u, 0.5, &noise).is_err());
    let labeled = batch(vec![vec![0.0, 0.0]; 2], vec![0, 1], Some(vec![0, 1]), 2);
    assert!(ceopp_term(&labeled, &p.encoder, &p.adversary, &p_u, &noise).is_err());
    assert!(ceopp_term(&labeled, &p.encoder, &adv_y, &p_u, &noise).is_ok());
}

#[test]
fn empty_batch_is_an_error() {
    let cfg = config(2, 2, false);
    let p = init_params(&cfg, 3).unwrap();
    let b = Batch {
        x: Tensor::zeros(&[0, 2]),
        u: vec![],
        u_onehot: Tensor::zeros(&[0, 2]),
        y: None,
    };
    assert!(c1_term(&b, &p.encoder).is_err());
    assert!(recon_loss(&b, &p.encoder, &p.decoder, &Tensor::zeros(&[0, 2])).is_err());
}

#[test]
fn one_adam_step_lowers_adversary_loss() {
    let cfg = ModelConfig { hidden_dim: 8, ..config(1, 1, false) };
    let p = init_params(&cfg, 11).unwrap();
    let mut rng = RngStream::from_seed(4);
    let u: Vec<usize> = (0..64).map(|i| i % 2).collect();
    let z = Tensor::matrix(64, 1, u.iter().map(|&g| 2.0 * g as f64 - 1.0 + 0.1 * rng.normal()).collect()).unwrap();
    let b = batch(vec![vec![0.0]; 64], u, None, 2);
    let mut adv = p.adversary.clone();
    let loss_at = |adv: &AdversaryParams| {
        let mut tape = Tape::new();
        let a = adv.bind(&mut tape, true);
        let zv = tape.constant(z.clone());
        let l = adversary_loss_on_tape(&mut tape, &a, false, zv, &b).unwrap();
        let grads = tape.backward(l).unwrap().wrt_all(&a.vars());
        (tape.scalar(l).unwrap(), grads)
    };
    let (before, grads) = loss_at(&adv);
    let mut state = AdamState::new(adv.tensors(), AdamConfig::default());
    adam_step(&mut adv.tensors_mut(), &grads, &mut state, 1e-2).unwrap();
    let (after, _) = loss_at(&adv);
    assert!(after < before, "{after} >= {before}");
}
