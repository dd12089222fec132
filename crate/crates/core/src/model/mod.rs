//! Encoder `q(z|x,u)`, decoder `p(x|z,u)` and adversaries `p(u|z[,y])`.
//!
//! Each network has one softplus hidden layer. Conditioning inputs are
//! concatenated at the input layer, with `u` (and `y`) one-hot encoded.

mod networks;

pub use networks::*;

use serde::{Deserialize, Serialize};

use crate::dist::DiagGaussian;
use crate::error::{invalid, Error, Result};
use crate::numcore::{RngStream, Tensor};

/// Bounds of the smooth clamp applied to the encoder's log standard deviation.
pub const LOG_STD_MIN: f64 = -6.0;
pub const LOG_STD_MAX: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub x_dim: usize,
    pub u_group_count: usize,
    pub z_dim: usize,
    pub hidden_dim: usize,
    /// `true` where the feature gets a Bernoulli decoder head.
    pub binary_feature_mask: Vec<bool>,
    pub label_conditioned_adversaries: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.z_dim == 0 || self.hidden_dim == 0 || self.x_dim == 0 {
            return Err(invalid("x_dim, z_dim and hidden_dim must be at least 1"));
        }
        if self.u_group_count < 2 {
            return Err(invalid("u_group_count must be at least 2"));
        }
        if self.binary_feature_mask.len() != self.x_dim {
            return Err(invalid(format!(
                "binary_feature_mask has {} entries for x_dim {}",
                self.binary_feature_mask.len(),
                self.x_dim
            )));
        }
        Ok(())
    }
}

/// An affine layer `x W + b` with `W: [in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[inputs, outputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    /// Weights from `N(0, 1/fan_in)`, zero bias.
    pub fn init(inputs: usize, outputs: usize, rng: &mut RngStream) -> Self {
        let scale = 1.0 / (inputs as f64).sqrt();
        let weight = rng.normal_tensor(&[inputs, outputs]).map(|w| w * scale);
        Self {
            weight,
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }
}

/// A fixed collection of parameter tensors with stable names and order.
pub trait ParamSet {
    fn named(&self) -> Vec<(&'static str, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn tensors(&self) -> Vec<&Tensor> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub hidden: Dense,
    pub mean_head: Dense,
    pub log_std_head: Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    pub hidden: Dense,
    pub output: Dense,
    pub binary_feature_mask: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdversaryParams {
    pub hidden: Dense,
    pub output: Dense,
    pub label_conditioned: bool,
}

macro_rules! two_layer_params {
    ($ty:ty, $prefix:literal, $a:ident, $b:ident) => {
        impl ParamSet for $ty {
            fn named(&self) -> Vec<(&'static str, &Tensor)> {
                vec![
                    (concat!($prefix, ".", stringify!($a), ".weight"), &self.$a.weight),
                    (concat!($prefix, ".", stringify!($a), ".bias"), &self.$a.bias),
                    (concat!($prefix, ".", stringify!($b), ".weight"), &self.$b.weight),
                    (concat!($prefix, ".", stringify!($b), ".bias"), &self.$b.bias),
                ]
            }

            fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
                vec![
                    &mut self.$a.weight,
                    &mut self.$a.bias,
                    &mut self.$b.weight,
                    &mut self.$b.bias,
                ]
            }
        }
    };
}

two_layer_params!(DecoderParams, "decoder", hidden, output);
two_layer_params!(AdversaryParams, "adversary", hidden, output);

impl ParamSet for EncoderParams {
    fn named(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("encoder.hidden.weight", &self.hidden.weight),
            ("encoder.hidden.bias", &self.hidden.bias),
            ("encoder.mean_head.weight", &self.mean_head.weight),
            ("encoder.mean_head.bias", &self.mean_head.bias),
            ("encoder.log_std_head.weight", &self.log_std_head.weight),
            ("encoder.log_std_head.bias", &self.log_std_head.bias),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.hidden.weight,
            &mut self.hidden.bias,
            &mut self.mean_head.weight,
            &mut self.mean_head.bias,
            &mut self.log_std_head.weight,
            &mut self.log_std_head.bias,
        ]
    }
}

impl EncoderParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        let inputs = config.x_dim + config.u_group_count;
        Self {
            hidden: Dense::zeros(inputs, config.hidden_dim),
            mean_head: Dense::zeros(config.hidden_dim, config.z_dim),
            log_std_head: Dense::zeros(config.hidden_dim, config.z_dim),
        }
    }

    pub fn z_dim(&self) -> usize {
        self.mean_head.outputs()
    }
}

impl DecoderParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            hidden: Dense::zeros(config.z_dim + config.u_group_count, config.hidden_dim),
            output: Dense::zeros(config.hidden_dim, config.x_dim),
            binary_feature_mask: config.binary_feature_mask.clone(),
        }
    }

    pub fn x_dim(&self) -> usize {
        self.output.outputs()
    }
}

impl AdversaryParams {
    pub fn zeros(config: &ModelConfig, label_conditioned: bool) -> Self {
        let inputs = config.z_dim + if label_conditioned { 2 } else { 0 };
        Self {
            hidden: Dense::zeros(inputs, config.hidden_dim),
            output: Dense::zeros(config.hidden_dim, config.u_group_count),
            label_conditioned,
        }
    }

    pub fn group_count(&self) -> usize {
        self.output.outputs()
    }
}

/// All trainable networks of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
    /// `p(u|z)`, used by the demographic-parity bound.
    pub adversary: AdversaryParams,
    /// `p(u|z,y)`, present when label-conditioned adversaries are enabled.
    pub label_adversary: Option<AdversaryParams>,
}

pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = RngStream::new(seed, crate::numcore::Purpose::Init, 0);
    let (h, z, g) = (config.hidden_dim, config.z_dim, config.u_group_count);
    let encoder = EncoderParams {
        hidden: Dense::init(config.x_dim + g, h, &mut rng),
        mean_head: Dense::init(h, z, &mut rng),
        log_std_head: Dense::init(h, z, &mut rng),
    };
    let decoder = DecoderParams {
        hidden: Dense::init(z + g, h, &mut rng),
        output: Dense::init(h, config.x_dim, &mut rng),
        binary_feature_mask: config.binary_feature_mask.clone(),
    };
    let adversary = AdversaryParams {
        hidden: Dense::init(z, h, &mut rng),
        output: Dense::init(h, g, &mut rng),
        label_conditioned: false,
    };
    let label_adversary = config.label_conditioned_adversaries.then(|| AdversaryParams {
        hidden: Dense::init(z + 2, h, &mut rng),
        output: Dense::init(h, g, &mut rng),
        label_conditioned: true,
    });
    Ok(ModelParams {
        encoder,
        decoder,
        adversary,
        label_adversary,
    })
}

/// Anything that maps `(x, u)` rows to diagonal-Gaussian posteriors over `z`.
pub trait Posterior {
    fn z_dim(&self) -> usize;
    fn posterior(&self, x: &Tensor, u: &[usize]) -> Result<DiagGaussian>;
}

impl Posterior for EncoderParams {
    fn z_dim(&self) -> usize {
        EncoderParams::z_dim(self)
    }

    fn posterior(&self, x: &Tensor, u: &[usize]) -> Result<DiagGaussian> {
        let groups = self
            .hidden
            .inputs()
            .checked_sub(x.cols())
            .ok_or_else(|| invalid("x has more columns than the encoder accepts"))?;
        let u_onehot = Tensor::one_hot(u, groups)?;
        encode(self, x, &u_onehot)
    }
}

/// The fixed prior `N(0, I)` regardless of input: the encoder that carries no
/// information about `x` or `u`.
#[derive(Clone, Copy, Debug)]
pub struct PriorPosterior {
    pub z_dim: usize,
}

impl Posterior for PriorPosterior {
    fn z_dim(&self) -> usize {
        self.z_dim
    }

    fn posterior(&self, x: &Tensor, _u: &[usize]) -> Result<DiagGaussian> {
        Ok(DiagGaussian::standard(x.rows(), self.z_dim))
    }
}

pub(crate) fn check_rows(op: &'static str, x: &Tensor, rows: usize) -> Result<()> {
    if x.rows() != rows {
        return Err(Error::ShapeMismatch {
            op,
            left: x.shape().to_vec(),
            right: vec![rows],
        });
    }
    Ok(())
}
