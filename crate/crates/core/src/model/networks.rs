use crate::dist::{DiagGaussian, FactoredBernoulli, HALF_LN_2PI};
use crate::error::{invalid, Error, Result};
use crate::model::{
    check_rows, AdversaryParams, DecoderParams, Dense, EncoderParams, LOG_STD_MAX, LOG_STD_MIN,
};
use crate::numcore::{softplus, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct DenseVars {
    pub weight: Var,
    pub bias: Var,
}

fn bind_dense(tape: &mut Tape, d: &Dense, trainable: bool) -> DenseVars {
    if trainable {
        DenseVars {
            weight: tape.param(&d.weight),
            bias: tape.param(&d.bias),
        }
    } else {
        DenseVars {
            weight: tape.constant(d.weight.clone()),
            bias: tape.constant(d.bias.clone()),
        }
    }
}

fn dense_forward(tape: &mut Tape, x: Var, d: DenseVars) -> Result<Var> {
    tape.affine(x, d.weight, d.bias)
}

fn input_width(tape: &Tape, d: DenseVars) -> usize {
    tape.value(d.weight).rows()
}

fn width_check(op: &'static str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::ShapeMismatch {
            op,
            left: vec![got],
            right: vec![want],
        });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    pub hidden: DenseVars,
    pub mean_head: DenseVars,
    pub log_std_head: DenseVars,
}

impl EncoderVars {
    /// Same order as [`ParamSet::tensors`](crate::model::ParamSet::tensors).
    pub fn vars(&self) -> Vec<Var> {
        vec![
            self.hidden.weight,
            self.hidden.bias,
            self.mean_head.weight,
            self.mean_head.bias,
            self.log_std_head.weight,
            self.log_std_head.bias,
        ]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TwoLayerVars {
    pub hidden: DenseVars,
    pub output: DenseVars,
}

impl TwoLayerVars {
    pub fn vars(&self) -> Vec<Var> {
        vec![
            self.hidden.weight,
            self.hidden.bias,
            self.output.weight,
            self.output.bias,
        ]
    }
}

impl EncoderParams {
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> EncoderVars {
        EncoderVars {
            hidden: bind_dense(tape, &self.hidden, trainable),
            mean_head: bind_dense(tape, &self.mean_head, trainable),
            log_std_head: bind_dense(tape, &self.log_std_head, trainable),
        }
    }
}

impl DecoderParams {
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> TwoLayerVars {
        TwoLayerVars {
            hidden: bind_dense(tape, &self.hidden, trainable),
            output: bind_dense(tape, &self.output, trainable),
        }
    }
}

impl AdversaryParams {
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> TwoLayerVars {
        TwoLayerVars {
            hidden: bind_dense(tape, &self.hidden, trainable),
            output: bind_dense(tape, &self.output, trainable),
        }
    }
}

/// Posterior parameters living on a tape.
#[derive(Clone, Copy, Debug)]
pub struct PosteriorVars {
    pub mean: Var,
    pub log_std: Var,
}

pub fn encoder_forward(
    tape: &mut Tape,
    enc: &EncoderVars,
    x: &Tensor,
    u_onehot: &Tensor,
) -> Result<PosteriorVars> {
    check_rows("encode", u_onehot, x.rows())?;
    width_check("encode", x.cols() + u_onehot.cols(), input_width(tape, enc.hidden))?;
    let input = tape.constant(x.concat_cols(u_onehot)?);
    let pre = dense_forward(tape, input, enc.hidden)?;
    let h = tape.softplus(pre);
    let mean = dense_forward(tape, h, enc.mean_head)?;
    let raw = dense_forward(tape, h, enc.log_std_head)?;
    let log_std = tape.soft_clamp(raw, LOG_STD_MIN, LOG_STD_MAX)?;
    Ok(PosteriorVars { mean, log_std })
}

/// `mean + exp(log_std) * noise`, differentiable in both parameters.
pub fn reparameterize_on_tape(tape: &mut Tape, post: PosteriorVars, noise: &Tensor) -> Result<Var> {
    let eps = tape.constant(noise.clone());
    let std = tape.exp(post.log_std);
    let scaled = tape.mul(std, eps)?;
    tape.add(post.mean, scaled)
}

/// Per-row `KL(q || N(0, I))`, shape `[n, 1]`.
pub fn kl_to_standard_normal_rows(tape: &mut Tape, post: PosteriorVars) -> Result<Var> {
    let mu2 = tape.square(post.mean);
    let two_ls = tape.scale(post.log_std, 2.0);
    let var = tape.exp(two_ls);
    let t = tape.add(mu2, var)?;
    let t = tape.sub(t, two_ls)?;
    let t = tape.offset(t, -1.0);
    let rows = tape.row_sum(t);
    Ok(tape.scale(rows, 0.5))
}

/// Raw decoder outputs `[n, x_dim]`: logits for binary features, means otherwise.
pub fn decoder_forward(tape: &mut Tape, dec: &TwoLayerVars, z: Var, u_onehot: &Tensor) -> Result<Var> {
    check_rows("decode", u_onehot, tape.value(z).rows())?;
    width_check(
        "decode",
        tape.value(z).cols() + u_onehot.cols(),
        input_width(tape, dec.hidden),
    )?;
    let u = tape.constant(u_onehot.clone());
    let input = tape.concat_cols(z, u)?;
    let pre = dense_forward(tape, input, dec.hidden)?;
    let h = tape.softplus(pre);
    dense_forward(tape, h, dec.output)
}

fn mask_matrix(rows: usize, mask: &[bool], on: bool) -> Tensor {
    let row: Vec<f64> = mask.iter().map(|&b| if b == on { 1.0 } else { 0.0 }).collect();
    let mut data = Vec::with_capacity(rows * mask.len());
    for _ in 0..rows {
        data.extend_from_slice(&row);
    }
    Tensor::from_parts(vec![rows, mask.len()], data)
}

/// Per-row `log p(x | z, u)`, shape `[n, 1]`. Binary features use Bernoulli
/// logits; the rest unit-variance Gaussians.
pub fn decoder_log_lik_rows(tape: &mut Tape, out: Var, x: &Tensor, mask: &[bool]) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    if x.shape() != shape.as_slice() || mask.len() != x.cols() {
        return Err(Error::ShapeMismatch {
            op: "decoder_log_lik",
            left: shape,
            right: x.shape().to_vec(),
        });
    }
    let rows = x.rows();
    let any_binary = mask.iter().any(|&b| b);
    let any_continuous = mask.iter().any(|&b| !b);
    let xc = tape.constant(x.clone());

    let mut total: Option<Var> = None;
    if any_binary {
        let xl = tape.mul(xc, out)?;
        let sp = tape.softplus(out);
        let ll = tape.sub(xl, sp)?;
        let ll = if any_continuous {
            let m = tape.constant(mask_matrix(rows, mask, true));
            tape.mul(ll, m)?
        } else {
            ll
        };
        total = Some(ll);
    }
    if any_continuous {
        let d = tape.sub(out, xc)?;
        let sq = tape.square(d);
        let ll = tape.scale(sq, -0.5);
        let ll = tape.offset(ll, -HALF_LN_2PI);
        let ll = if any_binary {
            let m = tape.constant(mask_matrix(rows, mask, false));
            tape.mul(ll, m)?
        } else {
            ll
        };
        total = Some(match total {
            Some(t) => tape.add(t, ll)?,
            None => ll,
        });
    }
    let total = total.ok_or(Error::Empty("decoder with no features"))?;
    Ok(tape.row_sum(total))
}

pub(crate) fn label_onehot(y: &[u8]) -> Result<Tensor> {
    let ids: Vec<usize> = y
        .iter()
        .map(|&v| match v {
            0 | 1 => Ok(v as usize),
            other => Err(invalid(format!("labels must be binary, got {other}"))),
        })
        .collect::<Result<_>>()?;
    Tensor::one_hot(&ids, 2)
}

/// Group logits `[n, groups]`. `y` must be given exactly when the adversary is
/// label-conditioned.
pub fn adversary_forward(
    tape: &mut Tape,
    adv: &TwoLayerVars,
    label_conditioned: bool,
    z: Var,
    y: Option<&[u8]>,
) -> Result<Var> {
    let input = match (label_conditioned, y) {
        (false, None) => z,
        (true, Some(y)) => {
            let rows = tape.value(z).rows();
            if y.len() != rows {
                return Err(Error::ShapeMismatch {
                    op: "adversary labels",
                    left: vec![rows],
                    right: vec![y.len()],
                });
            }
            let yc = tape.constant(label_onehot(y)?);
            tape.concat_cols(z, yc)?
        }
        (true, None) => return Err(invalid("label-conditioned adversary needs labels")),
        (false, Some(_)) => return Err(invalid("labels given to a label-blind adversary")),
    };
    width_check("adversary", tape.value(input).cols(), input_width(tape, adv.hidden))?;
    let pre = dense_forward(tape, input, adv.hidden)?;
    let h = tape.softplus(pre);
    dense_forward(tape, h, adv.output)
}

/// Per-row `log p(u_i | ...)` from logits, shape `[n, 1]`.
pub fn log_lik_of_groups(tape: &mut Tape, logits: Var, u: &[usize]) -> Result<Var> {
    let groups = tape.value(logits).cols();
    check_rows("group log-likelihood", tape.value(logits), u.len())?;
    let ls = tape.log_softmax_rows(logits);
    let oh = tape.constant(Tensor::one_hot(u, groups)?);
    let picked = tape.mul(ls, oh)?;
    Ok(tape.row_sum(picked))
}

/// Posterior of the encoder at the given rows.
pub fn encode(enc: &EncoderParams, x: &Tensor, u_onehot: &Tensor) -> Result<DiagGaussian> {
    let mut tape = Tape::new();
    let vars = enc.bind(&mut tape, false);
    let post = encoder_forward(&mut tape, &vars, x, u_onehot)?;
    Ok(DiagGaussian {
        mean: tape.value(post.mean).clone(),
        log_std: tape.value(post.log_std).clone(),
    })
}

/// Per-feature decoder distribution for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderOutput {
    /// Logits for binary features and Gaussian means for the others.
    pub raw: Tensor,
    pub mask: Vec<bool>,
}

impl DecoderOutput {
    fn columns(&self, binary: bool) -> Tensor {
        let cols: Vec<usize> = (0..self.mask.len()).filter(|&j| self.mask[j] == binary).collect();
        let rows = self.raw.rows();
        let mut data = Vec::with_capacity(rows * cols.len());
        for i in 0..rows {
            let r = self.raw.row(i);
            data.extend(cols.iter().map(|&j| r[j]));
        }
        Tensor::from_parts(vec![rows, cols.len()], data)
    }

    pub fn bernoulli(&self) -> FactoredBernoulli {
        FactoredBernoulli {
            logits: self.columns(true),
        }
    }

    /// Means of the unit-variance Gaussian heads.
    pub fn gaussian_means(&self) -> Tensor {
        self.columns(false)
    }

    pub fn gaussian_head_count(&self) -> usize {
        self.mask.iter().filter(|&&b| !b).count()
    }

    pub fn log_likelihood_rows(&self, x: &Tensor) -> Result<Vec<f64>> {
        if x.shape() != self.raw.shape() {
            return Err(Error::ShapeMismatch {
                op: "decoder log-likelihood",
                left: self.raw.shape().to_vec(),
                right: x.shape().to_vec(),
            });
        }
        let d = self.mask.len();
        Ok((0..x.rows())
            .map(|i| {
                let (xr, pr) = (x.row(i), self.raw.row(i));
                (0..d)
                    .map(|j| {
                        if self.mask[j] {
                            xr[j] * pr[j] - softplus(pr[j])
                        } else {
                            let t = xr[j] - pr[j];
                            -0.5 * t * t - HALF_LN_2PI
                        }
                    })
                    .sum()
            })
            .collect())
    }

    /// Mean per-row log-likelihood of a batch.
    pub fn log_likelihood(&self, x: &Tensor) -> Result<f64> {
        let rows = self.log_likelihood_rows(x)?;
        if rows.is_empty() {
            return Err(Error::Empty("decoder log-likelihood of an empty batch"));
        }
        Ok(rows.iter().sum::<f64>() / rows.len() as f64)
    }
}

pub fn decode(dec: &DecoderParams, z: &Tensor, u_onehot: &Tensor) -> Result<DecoderOutput> {
    let mut tape = Tape::new();
    let vars = dec.bind(&mut tape, false);
    let zv = tape.constant(z.clone());
    let out = decoder_forward(&mut tape, &vars, zv, u_onehot)?;
    Ok(DecoderOutput {
        raw: tape.value(out).clone(),
        mask: dec.binary_feature_mask.clone(),
    })
}

pub fn adversary_logits(adv: &AdversaryParams, z: &Tensor, y: Option<&[u8]>) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = adv.bind(&mut tape, false);
    let zv = tape.constant(z.clone());
    let logits = adversary_forward(&mut tape, &vars, adv.label_conditioned, zv, y)?;
    Ok(tape.value(logits).clone())
}
