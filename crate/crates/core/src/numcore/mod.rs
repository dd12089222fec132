//! Dense tensor math, a reverse-mode tape, Adam and the learning-rate schedule.
//!
//! Everything is `f64`. Tensors are at most rank 2 in practice: batches are
//! `[rows, cols]` matrices and bias vectors broadcast across rows.

mod activations;
mod adam;
mod gemm;
mod rng;
mod schedule;
mod tape;
mod tensor;

pub use activations::{log_sum_exp, sigmoid, softplus, stable_activations, Activation};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use rng::{Purpose, RngStream};
pub use schedule::{lr_at, LrSchedule};
pub use tape::{backward, Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use gemm::gemm;
