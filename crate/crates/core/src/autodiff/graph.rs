//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node in construction order, so the
//! node list is already topologically sorted. [`Graph::backward`] walks it in
//! reverse and accumulates vector-Jacobian products into every node that
//! depends on a trainable leaf. Graphs are meant to be built fresh for each
//! update step and dropped afterwards.

use std::f64::consts::PI;

use super::tensor::Tensor;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3; // ln(2π)

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    AffineCols(Var, Vec<f64>),
    Relu(Var),
    Tanh(Var),
    Atanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    GaussianLogDensity { x: Var, mu: Var, log_var: Var },
    Reparameterize { mu: Var, log_var: Var, noise: Vec<f64> },
    Min(Var, Var),
    Clip { input: Var, lo: Vec<f64>, hi: Vec<f64> },
    ConcatCols(Vec<Var>),
    SliceCols { input: Var, start: usize },
    RepeatRows { input: Var, times: usize },
    LogMeanExpRows { input: Var, group: usize },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Operation record for one forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

/// `true` when `rhs` can be combined elementwise with `lhs`: identical shapes,
/// or `rhs` is a single row broadcast over the rows of `lhs`.
fn broadcastable(lhs: &[usize], rhs: &[usize]) -> bool {
    if lhs == rhs {
        return true;
    }
    lhs.len() == 2 && rhs.len() == 2 && rhs[0] == 1 && rhs[1] == lhs[1]
}

/// `C (+)= op(A) · op(B)` with `op(A)` of shape `[m, k]` and `op(B)` of shape `[k, n]`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above guarantee every index reachable through the
    // given strides lies inside the three slices, and `c` does not alias them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool, name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.push(Op::Leaf, value, true, "param leaf")
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(Op::Leaf, value, false, "constant leaf")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        let rg = self.any_grad(&[a, b]);
        self.push(Op::MatMul(a, b), Tensor::new(vec![m, n], out)?, rg, "matmul")
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b));
        if !broadcastable(&sa, sb) {
            return Err(Error::shape(name, &sa, sb));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let period = bv.len();
        let data = av
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bv[i % period]))
            .collect();
        let rg = self.any_grad(&[a, b]);
        self.push(op, Tensor::new(sa, data)?, rg, name)
    }

    /// Elementwise sum; `b` may be a `[1, n]` row broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product with the same broadcasting rule as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("min", self.shape(a), self.shape(b)));
        }
        self.binary(a, b, "min", f64::min, Op::Min(a, b))
    }

    fn unary(&mut self, a: Var, name: &'static str, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let value = self.value(a).map(f);
        let rg = self.any_grad(&[a]);
        self.push(op, value, rg, name)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, "scale", |x| c * x, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, "offset", |x| x + c, Op::Offset(a))
    }

    /// `out[i, j] = a[i, j] * scale[j] + offset[j]`.
    pub fn affine_cols(&mut self, a: Var, scale: &[f64], offset: &[f64]) -> Result<Var> {
        let cols = self.value(a).cols();
        if scale.len() != cols || offset.len() != cols {
            return Err(Error::shape("affine_cols", self.shape(a), &[scale.len()]));
        }
        let src = self.value(a);
        let data = src
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * scale[i % cols] + offset[i % cols])
            .collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a]);
        self.push(Op::AffineCols(a, scale.to_vec()), value, rg, "affine_cols")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "relu", |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "tanh", f64::tanh, Op::Tanh(a))
    }

    pub fn atanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "atanh", f64::atanh, Op::Atanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "exp", f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "log", f64::ln, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "square", |x| x * x, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let rg = self.any_grad(&[a]);
        self.push(Op::Sum(a), Tensor::scalar(s), rg, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::shape("mean", t.shape(), &[]));
        }
        let m = t.mean();
        let rg = self.any_grad(&[a]);
        self.push(Op::Mean(a), Tensor::scalar(m), rg, "mean")
    }

    /// Row sums: `[rows, cols] -> [rows, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let rows = t.rows();
        let data = (0..rows).map(|r| t.row_slice(r).iter().sum()).collect();
        let value = Tensor::new(vec![rows, 1], data)?;
        let rg = self.any_grad(&[a]);
        self.push(Op::SumCols(a), value, rg, "sum_cols")
    }

    /// Elementwise `log N(x; mu, exp(log_var))`. `mu` and `log_var` may be
    /// single rows broadcast over `x`.
    pub fn gaussian_log_density(&mut self, x: Var, mu: Var, log_var: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        for other in [mu, log_var] {
            if !broadcastable(&sx, self.shape(other)) {
                return Err(Error::shape("gaussian_log_density", &sx, self.shape(other)));
            }
        }
        let (xv, mv, lv) = (
            self.value(x).data(),
            self.value(mu).data(),
            self.value(log_var).data(),
        );
        if lv.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gaussian_log_density log_var".into()));
        }
        let (pm, pl) = (mv.len(), lv.len());
        let data = xv
            .iter()
            .enumerate()
            .map(|(i, &xi)| {
                let d = xi - mv[i % pm];
                let l = lv[i % pl];
                -0.5 * (LN_2PI + l + d * d * (-l).exp())
            })
            .collect();
        let rg = self.any_grad(&[x, mu, log_var]);
        self.push(
            Op::GaussianLogDensity { x, mu, log_var },
            Tensor::new(sx, data)?,
            rg,
            "gaussian_log_density",
        )
    }

    /// `mu + exp(0.5 * log_var) * noise` with externally supplied standard
    /// normal `noise`; zero noise returns `mu` exactly.
    pub fn reparameterize(&mut self, mu: Var, log_var: Var, noise: &Tensor) -> Result<Var> {
        let sm = self.shape(mu).to_vec();
        if self.shape(log_var) != sm.as_slice() || noise.shape() != sm.as_slice() {
            return Err(Error::shape("reparameterize", &sm, noise.shape()));
        }
        let (mv, lv, nv) = (self.value(mu).data(), self.value(log_var).data(), noise.data());
        let data = (0..mv.len())
            .map(|i| mv[i] + (0.5 * lv[i]).exp() * nv[i])
            .collect();
        let rg = self.any_grad(&[mu, log_var]);
        self.push(
            Op::Reparameterize {
                mu,
                log_var,
                noise: nv.to_vec(),
            },
            Tensor::new(sm, data)?,
            rg,
            "reparameterize",
        )
    }

    /// Per-column clip to `[lo[j], hi[j]]`.
    pub fn clip(&mut self, a: Var, lo: &[f64], hi: &[f64]) -> Result<Var> {
        let cols = self.value(a).cols();
        if lo.len() != cols || hi.len() != cols {
            return Err(Error::shape("clip", self.shape(a), &[lo.len(), hi.len()]));
        }
        let src = self.value(a);
        let data = src
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x.clamp(lo[i % cols], hi[i % cols]))
            .collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a]);
        self.push(
            Op::Clip {
                input: a,
                lo: lo.to_vec(),
                hi: hi.to_vec(),
            },
            value,
            rg,
            "clip",
        )
    }

    /// Clips every element to `[lo, hi]`.
    pub fn clip_all(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let cols = self.value(a).cols();
        self.clip(a, &vec![lo; cols], &vec![hi; cols])
    }

    /// Horizontal concatenation of rank-2 tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut width = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return Err(Error::shape("concat_cols", self.shape(parts[0]), s));
            }
            width += s[1];
        }
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let rg = self.any_grad(parts);
        self.push(
            Op::ConcatCols(parts.to_vec()),
            Tensor::new(vec![rows, width], data)?,
            rg,
            "concat_cols",
        )
    }

    /// Columns `start..end` of a rank-2 tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 || start >= end || end > t.cols() {
            return Err(Error::shape("slice_cols", t.shape(), &[start, end]));
        }
        let rows = t.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&t.row_slice(r)[start..end]);
        }
        let rg = self.any_grad(&[a]);
        self.push(
            Op::SliceCols { input: a, start },
            Tensor::new(vec![rows, end - start], data)?,
            rg,
            "slice_cols",
        )
    }

    /// Repeats each row `times` times consecutively: `[r, c] -> [r * times, c]`.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 || times == 0 {
            return Err(Error::shape("repeat_rows", t.shape(), &[times]));
        }
        let (rows, cols) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(rows * times * cols);
        for r in 0..rows {
            for _ in 0..times {
                data.extend_from_slice(t.row_slice(r));
            }
        }
        let rg = self.any_grad(&[a]);
        self.push(
            Op::RepeatRows { input: a, times },
            Tensor::new(vec![rows * times, cols], data)?,
            rg,
            "repeat_rows",
        )
    }

    /// `[r * group, 1] -> [r, 1]`, each output being `log(mean(exp(x)))` over
    /// its group of consecutive rows, computed stably.
    pub fn log_mean_exp_rows(&mut self, a: Var, group: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 || t.cols() != 1 || group == 0 || t.rows() % group != 0 {
            return Err(Error::shape("log_mean_exp_rows", t.shape(), &[group]));
        }
        let ln_group = (group as f64).ln();
        let data = t
            .data()
            .chunks(group)
            .map(|c| log_sum_exp(c) - ln_group)
            .collect();
        let rows = t.rows() / group;
        let rg = self.any_grad(&[a]);
        self.push(
            Op::LogMeanExpRows { input: a, group },
            Tensor::new(vec![rows, 1], data)?,
            rg,
            "log_mean_exp_rows",
        )
    }

    /// Gradient of the last backward pass with respect to `v`; zeros when `v`
    /// was not reached.
    pub fn grad(&self, v: Var) -> Tensor {
        let shape = self.shape(v).to_vec();
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    /// Populates gradients of the scalar `loss` with respect to every node
    /// that depends on a trainable leaf. May be called once per graph.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract("backward called twice on the same graph".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(gout) = self.grads[i].take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                self.propagate(i, &gout);
            }
            self.grads[i] = Some(gout);
        }
        Ok(())
    }

    fn grad_buf(&mut self, v: Var) -> Option<&mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(self.grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    /// Adds `g` into the gradient of `v`, summing over rows when `v` was
    /// broadcast.
    fn accumulate(&mut self, v: Var, g: &[f64]) {
        let Some(buf) = self.grad_buf(v) else { return };
        let period = buf.len();
        if period == g.len() {
            for (b, x) in buf.iter_mut().zip(g) {
                *b += x;
            }
        } else {
            for (i, x) in g.iter().enumerate() {
                buf[i % period] += x;
            }
        }
    }

    fn accumulate_with(&mut self, v: Var, g: &[f64], f: impl Fn(usize, f64) -> f64) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let contrib: Vec<f64> = g.iter().enumerate().map(|(i, &x)| f(i, x)).collect();
        self.accumulate(v, &contrib);
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.nodes[a.0].requires_grad {
                    let bv = self.nodes[b.0].value.data().to_vec();
                    let buf = self.grad_buf(a).expect("requires grad");
                    gemm(m, n, k, g, false, &bv, true, buf, true);
                }
                if self.nodes[b.0].requires_grad {
                    let av = self.nodes[a.0].value.data().to_vec();
                    let buf = self.grad_buf(b).expect("requires grad");
                    gemm(k, m, n, &av, true, g, false, buf, true);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(a, g);
                self.accumulate(b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(a, g);
                self.accumulate_with(b, g, |_, x| -x);
            }
            Op::Mul(a, b) => {
                let av = self.value(a).data().to_vec();
                let bv = self.value(b).data().to_vec();
                let pb = bv.len();
                self.accumulate_with(a, g, |j, x| x * bv[j % pb]);
                self.accumulate_with(b, g, |j, x| x * av[j]);
            }
            Op::Min(a, b) => {
                let av = self.value(a).data().to_vec();
                let bv = self.value(b).data().to_vec();
                self.accumulate_with(a, g, |j, x| if av[j] <= bv[j] { x } else { 0.0 });
                self.accumulate_with(b, g, |j, x| if av[j] <= bv[j] { 0.0 } else { x });
            }
            Op::Scale(a, c) => self.accumulate_with(a, g, |_, x| c * x),
            Op::Offset(a) => self.accumulate(a, g),
            Op::AffineCols(a, scale) => {
                let cols = scale.len();
                self.accumulate_with(a, g, |j, x| x * scale[j % cols]);
            }
            Op::Relu(a) => {
                let av = self.value(a).data().to_vec();
                self.accumulate_with(a, g, |j, x| if av[j] > 0.0 { x } else { 0.0 });
            }
            Op::Tanh(a) => {
                let y = self.nodes[i].value.data().to_vec();
                self.accumulate_with(a, g, |j, x| x * (1.0 - y[j] * y[j]));
            }
            Op::Atanh(a) => {
                let av = self.value(a).data().to_vec();
                self.accumulate_with(a, g, |j, x| x / (1.0 - av[j] * av[j]));
            }
            Op::Exp(a) => {
                let y = self.nodes[i].value.data().to_vec();
                self.accumulate_with(a, g, |j, x| x * y[j]);
            }
            Op::Log(a) => {
                let av = self.value(a).data().to_vec();
                self.accumulate_with(a, g, |j, x| x / av[j]);
            }
            Op::Square(a) => {
                let av = self.value(a).data().to_vec();
                self.accumulate_with(a, g, |j, x| 2.0 * av[j] * x);
            }
            Op::Sum(a) => {
                let n = self.value(a).len();
                self.accumulate(a, &vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(a).len();
                self.accumulate(a, &vec![g[0] / n as f64; n]);
            }
            Op::SumCols(a) => {
                let cols = self.value(a).cols();
                let n = self.value(a).len();
                let expanded: Vec<f64> = (0..n).map(|j| g[j / cols]).collect();
                self.accumulate(a, &expanded);
            }
            Op::GaussianLogDensity { x, mu, log_var } => {
                let xv = self.value(x).data().to_vec();
                let mv = self.value(mu).data().to_vec();
                let lv = self.value(log_var).data().to_vec();
                let (pm, pl) = (mv.len(), lv.len());
                // z = (x - mu) * exp(-log_var)
                let z: Vec<f64> = (0..xv.len())
                    .map(|j| (xv[j] - mv[j % pm]) * (-lv[j % pl]).exp())
                    .collect();
                self.accumulate_with(x, g, |j, v| -v * z[j]);
                self.accumulate_with(mu, g, |j, v| v * z[j]);
                self.accumulate_with(log_var, g, |j, v| {
                    let d = xv[j] - mv[j % pm];
                    v * (0.5 * d * z[j] - 0.5)
                });
            }
            Op::Reparameterize { mu, log_var, noise } => {
                let lv = self.value(log_var).data().to_vec();
                self.accumulate(mu, g);
                self.accumulate_with(log_var, g, |j, v| v * 0.5 * (0.5 * lv[j]).exp() * noise[j]);
            }
            Op::Clip { input, lo, hi } => {
                let av = self.value(input).data().to_vec();
                let cols = lo.len();
                self.accumulate_with(input, g, |j, v| {
                    let c = j % cols;
                    if av[j] >= lo[c] && av[j] <= hi[c] {
                        v
                    } else {
                        0.0
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let rows = self.nodes[i].value.rows();
                let width = self.nodes[i].value.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(p).cols();
                    if self.nodes[p.0].requires_grad {
                        let mut part = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            part.extend_from_slice(&g[r * width + offset..r * width + offset + w]);
                        }
                        self.accumulate(p, &part);
                    }
                    offset += w;
                }
            }
            Op::SliceCols { input, start } => {
                let (rows, cols) = (self.value(input).rows(), self.value(input).cols());
                let w = self.nodes[i].value.cols();
                let mut full = vec![0.0; rows * cols];
                for r in 0..rows {
                    full[r * cols + start..r * cols + start + w]
                        .copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                self.accumulate(input, &full);
            }
            Op::RepeatRows { input, times } => {
                let (rows, cols) = (self.value(input).rows(), self.value(input).cols());
                let mut folded = vec![0.0; rows * cols];
                for r in 0..rows {
                    for t in 0..times {
                        let src = &g[(r * times + t) * cols..(r * times + t + 1) * cols];
                        for (d, s) in folded[r * cols..(r + 1) * cols].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                self.accumulate(input, &folded);
            }
            Op::LogMeanExpRows { input, group } => {
                let av = self.value(input).data().to_vec();
                let y = self.nodes[i].value.data().to_vec();
                let ln_group = (group as f64).ln();
                let contrib: Vec<f64> = (0..av.len())
                    .map(|j| g[j / group] * (av[j] - y[j / group] - ln_group).exp())
                    .collect();
                self.accumulate(input, &contrib);
            }
        }
    }
}

/// Stable `log(sum(exp(xs)))`; `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log N(x; mu, exp(log_var))` for scalars, outside any graph.
pub fn gaussian_log_pdf(x: f64, mu: f64, log_var: f64) -> f64 {
    let d = x - mu;
    -0.5 * ((2.0 * PI).ln() + log_var + d * d * (-log_var).exp())
}
