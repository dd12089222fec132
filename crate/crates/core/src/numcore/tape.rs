//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Tape`] is rebuilt for every minibatch. Nodes are appended in
//! evaluation order, so inputs always precede their consumers and the
//! backward sweep is a single reverse pass.

use crate::error::{contract, Error, Result};
use crate::numcore::activations::{sigmoid, softplus};
use crate::numcore::{gemm, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Param,
    Constant,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Softplus(Var),
    Sigmoid(Var),
    Exp(Var),
    Square(Var),
    SoftClamp { input: Var, lo: f64, hi: f64 },
    ConcatCols(Var, Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    LogSoftmaxRows(Var),
    LogSumExpRows(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_flag(&self, inputs: &[Var]) -> bool {
        inputs.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A trainable leaf; `backward` reports a gradient for it.
    pub fn param(&mut self, value: &Tensor) -> Var {
        self.push(Op::Param, value.clone(), true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        self.value(v).item()
    }

    pub fn is_param(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Param)
    }

    /// Matrix product `[m, k] x [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k) = va.dims2();
        let (k2, n) = vb.dims2();
        if k != k2 {
            return Err(mismatch("matmul", va, vb));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, va.data(), false, vb.data(), false, &mut out, false);
        let flag = self.grad_flag(&[a, b]);
        Ok(self.push(
            Op::MatMul(a, b),
            Tensor::from_parts(vec![m, n], out),
            flag,
        ))
    }

    /// Adds a length-`n` bias to every row of an `[m, n]` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(bias));
        let (m, n) = va.dims2();
        if vb.len() != n {
            return Err(mismatch("add_row", va, vb));
        }
        let mut out = va.data().to_vec();
        let b = vb.data();
        for row in out.chunks_mut(n.max(1)).take(m) {
            for (o, &bj) in row.iter_mut().zip(b) {
                *o += bj;
            }
        }
        let flag = self.grad_flag(&[a, bias]);
        Ok(self.push(
            Op::AddRow(a, bias),
            Tensor::from_parts(vec![m, n], out),
            flag,
        ))
    }

    /// `x W + b` for a `[m, in]` input, `[in, out]` weight and `[out]` bias.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(mismatch(name, va, vb));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::from_parts(va.shape().to_vec(), data);
        let flag = self.grad_flag(&[a, b]);
        Ok(self.push(op, value, flag))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let flag = self.grad_flag(&[a]);
        self.push(op, value, flag)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Offset(a), |x| x + c)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// Smoothly squashes into `(lo, hi)` with `lo < 0 < hi`: identity to
    /// second order at zero, `s * tanh(x / s)` with `s = hi` above zero and
    /// `s = lo` below.
    pub fn soft_clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if !(lo < 0.0 && hi > 0.0) {
            return Err(contract(format!(
                "soft_clamp needs lo < 0 < hi, got ({lo}, {hi})"
            )));
        }
        Ok(self.unary(a, Op::SoftClamp { input: a, lo, hi }, move |x| {
            soft_clamp_value(x, lo, hi)
        }))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).concat_cols(self.value(b))?;
        let flag = self.grad_flag(&[a, b]);
        Ok(self.push(Op::ConcatCols(a, b), value, flag))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let flag = self.grad_flag(&[a]);
        self.push(Op::Sum(a), Tensor::scalar(s), flag)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(Error::Empty("mean of empty tensor"));
        }
        let m = v.data().iter().sum::<f64>() / v.len() as f64;
        let flag = self.grad_flag(&[a]);
        Ok(self.push(Op::Mean(a), Tensor::scalar(m), flag))
    }

    /// Sums each row of `[m, n]` into `[m, 1]`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let (m, _) = v.dims2();
        let data = (0..m).map(|i| v.row(i).iter().sum()).collect();
        let flag = self.grad_flag(&[a]);
        self.push(Op::RowSum(a), Tensor::from_parts(vec![m, 1], data), flag)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let (m, n) = v.dims2();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = v.row(i);
            let lse = crate::numcore::log_sum_exp(row);
            data.extend(row.iter().map(|x| x - lse));
        }
        let flag = self.grad_flag(&[a]);
        self.push(
            Op::LogSoftmaxRows(a),
            Tensor::from_parts(vec![m, n], data),
            flag,
        )
    }

    pub fn log_sum_exp_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let (m, _) = v.dims2();
        let data = (0..m)
            .map(|i| crate::numcore::log_sum_exp(v.row(i)))
            .collect();
        let flag = self.grad_flag(&[a]);
        self.push(
            Op::LogSumExpRows(a),
            Tensor::from_parts(vec![m, 1], data),
            flag,
        )
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<'_>> {
        backward(self, loss)
    }
}

fn soft_clamp_value(x: f64, lo: f64, hi: f64) -> f64 {
    let s = if x >= 0.0 { hi } else { lo };
    s * (x / s).tanh()
}

/// Gradients of one loss with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients<'t> {
    tape: &'t Tape,
    grads: Vec<Option<Tensor>>,
}

impl Gradients<'_> {
    /// Gradient for `v`; all zeros when the loss does not depend on `v`.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.tape.value(v).shape()),
        }
    }

    pub fn wrt_all(&self, vars: &[Var]) -> Vec<Tensor> {
        vars.iter().map(|&v| self.wrt(v)).collect()
    }

    /// `(param, gradient)` for every trainable leaf on the tape.
    pub fn params(&self) -> Vec<(Var, Tensor)> {
        (0..self.tape.nodes.len())
            .map(Var)
            .filter(|&v| self.tape.is_param(v))
            .map(|v| (v, self.wrt(v)))
            .collect()
    }
}

fn accumulate(grads: &mut [Option<Tensor>], tape: &Tape, v: Var, g: Tensor) {
    if !tape.nodes[v.0].needs_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

/// Populates a gradient for every node the scalar `loss` depends on.
pub fn backward(tape: &Tape, loss: Var) -> Result<Gradients<'_>> {
    let lv = tape.value(loss);
    if lv.len() != 1 {
        return Err(contract(format!(
            "backward needs a scalar loss, got shape {:?}",
            lv.shape()
        )));
    }
    let mut grads: Vec<Option<Tensor>> = vec![None; tape.nodes.len()];
    grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

    for idx in (0..=loss.0).rev() {
        let node = &tape.nodes[idx];
        if !node.needs_grad {
            continue;
        }
        let Some(g) = grads[idx].take() else { continue };
        let out = &node.value;
        match node.op {
            Op::Param | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (tape.value(a), tape.value(b));
                let (m, k) = va.dims2();
                let n = vb.cols();
                if tape.nodes[a.0].needs_grad {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, vb.data(), true, &mut ga, false);
                    accumulate(&mut grads, tape, a, Tensor::from_parts(va.shape().to_vec(), ga));
                }
                if tape.nodes[b.0].needs_grad {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, va.data(), true, g.data(), false, &mut gb, false);
                    accumulate(&mut grads, tape, b, Tensor::from_parts(vb.shape().to_vec(), gb));
                }
            }
            Op::AddRow(a, bias) => {
                if tape.nodes[bias.0].needs_grad {
                    let n = g.cols();
                    let mut gb = vec![0.0; n];
                    for i in 0..g.rows() {
                        for (acc, x) in gb.iter_mut().zip(g.row(i)) {
                            *acc += x;
                        }
                    }
                    let shape = tape.value(bias).shape().to_vec();
                    accumulate(&mut grads, tape, bias, Tensor::from_parts(shape, gb));
                }
                accumulate(&mut grads, tape, a, g.clone());
            }
            Op::Add(a, b) => {
                accumulate(&mut grads, tape, a, g.clone());
                accumulate(&mut grads, tape, b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(&mut grads, tape, b, g.map(|x| -x));
                accumulate(&mut grads, tape, a, g.clone());
            }
            Op::Mul(a, b) => {
                let gb = zip_map(&g, tape.value(a), |x, y| x * y);
                let ga = zip_map(&g, tape.value(b), |x, y| x * y);
                accumulate(&mut grads, tape, a, ga);
                accumulate(&mut grads, tape, b, gb);
            }
            Op::Scale(a, c) => accumulate(&mut grads, tape, a, g.map(|x| c * x)),
            Op::Offset(a) => accumulate(&mut grads, tape, a, g.clone()),
            Op::Softplus(a) => {
                let ga = zip_map(&g, tape.value(a), |x, y| x * sigmoid(y));
                accumulate(&mut grads, tape, a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = zip_map(&g, out, |x, s| x * s * (1.0 - s));
                accumulate(&mut grads, tape, a, ga);
            }
            Op::Exp(a) => accumulate(&mut grads, tape, a, zip_map(&g, out, |x, e| x * e)),
            Op::Square(a) => {
                let ga = zip_map(&g, tape.value(a), |x, y| 2.0 * x * y);
                accumulate(&mut grads, tape, a, ga);
            }
            Op::SoftClamp { input, lo, hi } => {
                let ga = zip_map(&g, tape.value(input), |x, y| {
                    let s = if y >= 0.0 { hi } else { lo };
                    let t = (y / s).tanh();
                    x * (1.0 - t * t)
                });
                accumulate(&mut grads, tape, input, ga);
            }
            Op::ConcatCols(a, b) => {
                let (m, ca) = tape.value(a).dims2();
                let cb = tape.value(b).cols();
                let mut ga = Vec::with_capacity(m * ca);
                let mut gb = Vec::with_capacity(m * cb);
                for i in 0..m {
                    let row = g.row(i);
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                let sa = tape.value(a).shape().to_vec();
                let sb = tape.value(b).shape().to_vec();
                accumulate(&mut grads, tape, a, Tensor::from_parts(sa, ga));
                accumulate(&mut grads, tape, b, Tensor::from_parts(sb, gb));
            }
            Op::Sum(a) => {
                let s = g.data()[0];
                accumulate(&mut grads, tape, a, Tensor::full(tape.value(a).shape(), s));
            }
            Op::Mean(a) => {
                let va = tape.value(a);
                let s = g.data()[0] / va.len() as f64;
                accumulate(&mut grads, tape, a, Tensor::full(va.shape(), s));
            }
            Op::RowSum(a) => {
                let va = tape.value(a);
                let (m, n) = va.dims2();
                let mut ga = Vec::with_capacity(m * n);
                for i in 0..m {
                    ga.extend(std::iter::repeat(g.data()[i]).take(n));
                }
                accumulate(&mut grads, tape, a, Tensor::from_parts(va.shape().to_vec(), ga));
            }
            Op::LogSoftmaxRows(a) => {
                let (m, n) = out.dims2();
                let mut ga = Vec::with_capacity(m * n);
                for i in 0..m {
                    let gs: f64 = g.row(i).iter().sum();
                    for (gx, y) in g.row(i).iter().zip(out.row(i)) {
                        ga.push(gx - y.exp() * gs);
                    }
                }
                let shape = tape.value(a).shape().to_vec();
                accumulate(&mut grads, tape, a, Tensor::from_parts(shape, ga));
            }
            Op::LogSumExpRows(a) => {
                let va = tape.value(a);
                let (m, n) = va.dims2();
                let mut ga = Vec::with_capacity(m * n);
                for i in 0..m {
                    let lse = out.data()[i];
                    let gi = g.data()[i];
                    ga.extend(va.row(i).iter().map(|x| gi * (x - lse).exp()));
                }
                accumulate(&mut grads, tape, a, Tensor::from_parts(va.shape().to_vec(), ga));
            }
        }
        grads[idx] = Some(g);
    }

    Ok(Gradients { tape, grads })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let w = t.param(&Tensor::scalar(3.0));
        let l = t.square(w);
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(w).item().unwrap(), 6.0);
    }

    #[test]
    fn unreached_leaf_gets_zeros() {
        let mut t = Tape::new();
        let w = t.param(&Tensor::scalar(3.0));
        let p = t.param(&Tensor::vector(vec![1.0, 2.0]));
        let l = t.square(w);
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(p).data(), &[0.0, 0.0]);
        assert_eq!(g.params().len(), 2);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let p = t.param(&Tensor::vector(vec![1.0, 2.0]));
        let sq = t.square(p);
        assert!(matches!(t.backward(sq), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_errors_surface() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        assert!(t.matmul(a, b).is_err());
        let c = t.constant(Tensor::zeros(&[3]));
        assert!(t.add(a, c).is_err());
        assert!(t.add_row(a, c).is_ok());
    }

    #[test]
    fn soft_clamp_is_identity_at_zero_and_bounded() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![0.0, 1e-4, -1e-4, 1e3, -1e3]));
        let y = t.soft_clamp(x, -6.0, 4.0).unwrap();
        let v = t.value(y).data();
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 1e-4).abs() < 1e-12);
        assert!((v[2] + 1e-4).abs() < 1e-12);
        assert!(v[3] <= 4.0 && v[3] > 3.99);
        assert!(v[4] >= -6.0 && v[4] < -5.99);
    }
}
