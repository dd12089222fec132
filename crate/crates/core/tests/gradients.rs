//! Reverse-mode gradients of the full training objectives against central
//! finite differences.

use mifr_core::data::{synthetic_gen, LabelRule, SyntheticSpec};
use mifr_core::model::{init_params, ModelParams, ParamSet};
use mifr_core::numcore::{RngStream, Tape, Tensor, Var};
use mifr_core::objective::{
    adversary_loss_on_tape, c1_on_tape, c2_on_tape, ceo_on_tape, ceopp_on_tape, encode_on_tape, recon_on_tape,
    EncoderSource,
};
use mifr_core::trainer::model_config_for;
use mifr_core::{Batch, TabularDataset};

struct Fixture {
    data: TabularDataset,
    batch: Batch,
    noise: Tensor,
    params: ModelParams,
}

fn fixture() -> Fixture {
    let spec = SyntheticSpec {
        n: 24,
        label: Some(LabelRule {
            latent_weight: 1.0,
            feature_weight: 0.5,
            bias: 0.0,
        }),
        ..SyntheticSpec::default()
    };
    let data = synthetic_gen(&spec, 3).unwrap();
    let config = model_config_for(&data, 3, 5, true);
    let params = init_params(&config, 7).unwrap();
    let batch = data.full_batch().unwrap();
    let noise = RngStream::from_seed(1).normal_tensor(&[data.len(), 3]);
    Fixture {
        data,
        batch,
        noise,
        params,
    }
}

#[derive(Clone, Copy)]
enum Net {
    Encoder,
    Decoder,
    Adversary,
    LabelAdversary,
}

fn tensors_mut(p: &mut ModelParams, net: Net) -> Vec<&mut Tensor> {
    match net {
        Net::Encoder => p.encoder.tensors_mut(),
        Net::Decoder => p.decoder.tensors_mut(),
        Net::Adversary => p.adversary.tensors_mut(),
        Net::LabelAdversary => p.label_adversary.as_mut().unwrap().tensors_mut(),
    }
}

/// Weighted sum of every term, returning the loss var and each net's vars.
fn build(tape: &mut Tape, f: &Fixture, p: &ModelParams) -> (Var, [Vec<Var>; 4]) {
    let p_u = f.data.u_marginal().unwrap();
    let q = f.data.positive_rate().unwrap();
    let enc = encode_on_tape(tape, EncoderSource::Params(&p.encoder), true, &f.batch, &f.noise).unwrap();
    let dec = p.decoder.bind(tape, true);
    let adv = p.adversary.bind(tape, true);
    let adv_y = p.label_adversary.as_ref().unwrap().bind(tape, true);
    let terms = [
        (recon_on_tape(tape, &dec, &f.data.binary_mask().to_vec(), enc.z, &f.batch).unwrap(), 1.0),
        (c1_on_tape(tape, enc.post).unwrap(), 0.7),
        (c2_on_tape(tape, &adv, enc.z, &f.batch, &p_u).unwrap(), 1.3),
        (ceo_on_tape(tape, &adv_y, enc.z, &f.batch, &p_u, q).unwrap(), 0.9),
        (ceopp_on_tape(tape, &adv_y, enc.z, &f.batch, &p_u).unwrap(), 0.4),
        (adversary_loss_on_tape(tape, &adv, false, enc.z, &f.batch).unwrap(), 0.3),
        (adversary_loss_on_tape(tape, &adv_y, true, enc.z, &f.batch).unwrap(), 0.2),
    ];
    let mut total = tape.scale(terms[0].0, terms[0].1);
    for &(v, w) in &terms[1..] {
        let s = tape.scale(v, w);
        total = tape.add(total, s).unwrap();
    }
    (
        total,
        [enc.vars.unwrap().vars(), dec.vars(), adv.vars(), adv_y.vars()],
    )
}

fn loss_at(f: &Fixture, p: &ModelParams) -> f64 {
    let mut tape = Tape::new();
    let (l, _) = build(&mut tape, f, p);
    tape.scalar(l).unwrap()
}

#[test]
fn full_objective_matches_finite_differences() {
    let f = fixture();
    let mut tape = Tape::new();
    let (loss, vars) = build(&mut tape, &f, &f.params);
    let grads = tape.backward(loss).unwrap();
    let nets = [Net::Encoder, Net::Decoder, Net::Adversary, Net::LabelAdversary];
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (ni, net) in nets.into_iter().enumerate() {
        let analytic = grads.wrt_all(&vars[ni]);
        for (ti, g) in analytic.iter().enumerate() {
            // A spread of entries per tensor keeps the check fast.
            for k in (0..g.len()).step_by(1 + g.len() / 7) {
                let mut plus = f.params.clone();
                tensors_mut(&mut plus, net)[ti].data_mut()[k] += h;
                let mut minus = f.params.clone();
                tensors_mut(&mut minus, net)[ti].data_mut()[k] -= h;
                let numeric = (loss_at(&f, &plus) - loss_at(&f, &minus)) / (2.0 * h);
                let err = (numeric - g.data()[k]).abs() / (1.0 + numeric.abs());
                worst = worst.max(err);
                assert!(err < 1e-6, "net {ni} tensor {ti} entry {k}: {numeric} vs {}", g.data()[k]);
            }
        }
    }
    assert!(worst.is_finite());
}

#[test]
fn encoder_gradient_is_zero_when_frozen() {
    let f = fixture();
    let mut tape = Tape::new();
    let enc = encode_on_tape(&mut tape, EncoderSource::Params(&f.params.encoder), false, &f.batch, &f.noise).unwrap();
    let c1 = c1_on_tape(&mut tape, enc.post).unwrap();
    let vars = enc.vars.unwrap().vars();
    assert!(vars.iter().all(|&v| !tape.is_param(v)));
    let grads = tape.backward(c1).unwrap();
    assert!(grads.params().is_empty());
}
