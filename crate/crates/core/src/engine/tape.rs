//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every forward pass records into a fresh [`Tape`]. Nodes are appended in
//! evaluation order, so walking the tape backwards is a valid topological
//! order for the chain rule.

use crate::engine::kernels::{self, ConvGeometry, PadMode};
use crate::engine::{ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeometry,
        cols: Vec<f64>,
    },
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Relu(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Log(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var, Option<usize>),
    Mean(Var, Option<usize>),
    Max(Var, Vec<usize>),
    Reshape(Var),
    Transpose(Var),
    AvgPool2(Var),
    ChannelBias(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

/// Splits a shape around `axis` into (outer, len, inner) extents.
fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Axis {
            axis,
            rank: shape.len(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn reduced_shape(shape: &[usize], axis: Option<usize>) -> Vec<usize> {
    match axis {
        None => vec![1],
        Some(a) => {
            let mut s = shape.to_vec();
            s.remove(a);
            if s.is_empty() {
                vec![1]
            } else {
                s
            }
        }
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Records a free input that does receive a gradient.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        self.push(params.value(id).clone(), Op::Param(id), true)
    }

    /// Binds every parameter of the set, in order.
    pub fn bind(&mut self, params: &ParamSet) -> Vec<Var> {
        params.ids().map(|id| self.param(params, id)).collect()
    }

    /// Binds every parameter as a constant, for inference-only passes.
    pub fn bind_frozen(&mut self, params: &ParamSet) -> Vec<Var> {
        params
            .iter()
            .map(|p| self.constant(p.value().clone()))
            .collect()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Cross-correlation of a `C_in×H×W` input with `C_out×C_in×k×k` kernels.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        self.conv2d_padded(input, kernel, stride, padding, PadMode::Zero)
    }

    pub fn conv2d_padded(
        &mut self,
        input: Var,
        kernel: Var,
        stride: usize,
        padding: usize,
        mode: PadMode,
    ) -> Result<Var> {
        let (is, ks) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        if is.len() != 3 || ks.len() != 4 || ks[1] != is[0] || ks[2] != ks[3] {
            return Err(Error::shape("conv2d", &is, &ks));
        }
        let geom =
            ConvGeometry::new(is[0], is[1], is[2], ks[2], stride, padding)?.with_pad_mode(mode);
        let cols = kernels::im2col(self.value(input).data(), &geom);
        let c_out = ks[0];
        let mut out = vec![0.0; c_out * geom.col_cols()];
        kernels::gemm(
            c_out,
            geom.col_rows(),
            geom.col_cols(),
            self.value(kernel).data(),
            false,
            &cols,
            false,
            &mut out,
            0.0,
        );
        let value = Tensor::new(&[c_out, geom.out_height, geom.out_width], out)?;
        let rg = self.rg(input) || self.rg(kernel);
        let cols = if rg { cols } else { Vec::new() };
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                geom,
                cols,
            },
            rg,
        ))
    }

    fn check_rows(&self, x: Var, op: &'static str) -> Result<usize> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::shape(op, s, &[2]));
        }
        if !self.value(x).all_finite() {
            return Err(Error::NonFinite(op.into()));
        }
        Ok(s[1])
    }

    /// Softmax over the last axis of a matrix; each row sums to one.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let cols = self.check_rows(x, "softmax_rows")?;
        let v = self.value(x);
        let out = Tensor::new(v.shape(), kernels::softmax_rows(v.data(), cols))?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SoftmaxRows(x), rg))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let cols = self.check_rows(x, "log_softmax_rows")?;
        let v = self.value(x);
        let out = Tensor::new(v.shape(), kernels::log_softmax_rows(v.data(), cols))?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::LogSoftmaxRows(x), rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(out, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, kernels::sigmoid, Op::Sigmoid(x))
    }

    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, kernels::log_sigmoid, Op::LogSigmoid(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(name, va.shape(), vb.shape()));
        }
        let out = va.zip_map(vb, f)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn reduce_with(
        &self,
        x: Var,
        axis: Option<usize>,
        init: f64,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let v = self.value(x);
        match axis {
            None => Ok(Tensor::scalar(v.data().iter().fold(init, |a, &b| f(a, b)))),
            Some(a) => {
                let (outer, len, inner) = axis_split(v.shape(), a)?;
                let mut out = vec![init; outer * inner];
                for o in 0..outer {
                    for l in 0..len {
                        let src = &v.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                        for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *d = f(*d, s);
                        }
                    }
                }
                Tensor::new(&reduced_shape(v.shape(), axis), out)
            }
        }
    }

    /// Sum over one axis, or over everything when `axis` is `None`.
    pub fn sum(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        let out = self.reduce_with(x, axis, 0.0, |a, b| a + b)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Sum(x, axis), rg))
    }

    pub fn mean(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        let n = match axis {
            None => self.value(x).numel(),
            Some(a) => axis_split(self.shape(x), a)?.1,
        } as f64;
        let out = self.reduce_with(x, axis, 0.0, |a, b| a + b)?.map(|v| v / n);
        let rg = self.rg(x);
        Ok(self.push(out, Op::Mean(x, axis), rg))
    }

    /// Maximum over an axis; the first maximal element wins and carries the gradient.
    pub fn max(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        let v = self.value(x);
        let shape = v.shape().to_vec();
        let (outer, len, inner) = match axis {
            None => (1, v.numel(), 1),
            Some(a) => axis_split(&shape, a)?,
        };
        let mut vals = vec![f64::NEG_INFINITY; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    let src = (o * len + l) * inner + i;
                    let dst = o * inner + i;
                    if l == 0 || v.data()[src] > vals[dst] {
                        vals[dst] = v.data()[src];
                        arg[dst] = src;
                    }
                }
            }
        }
        let out = Tensor::new(&reduced_shape(&shape, axis), vals)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Max(x, arg), rg))
    }

    /// Flat indices into the input selected by a `max` node.
    pub fn argmax_indices(&self, v: Var) -> Option<&[usize]> {
        match &self.nodes[v.0].op {
            Op::Max(_, arg) => Some(arg),
            _ => None,
        }
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Non-overlapping 2×2 mean pooling of a `C×H×W` tensor with even `H`, `W`.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || !s[1].is_multiple_of(2) || !s[2].is_multiple_of(2) {
            return Err(Error::Config(format!(
                "avg_pool2 needs C×H×W with even H, W; got {s:?}"
            )));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (ho, wo) = (h / 2, w / 2);
        let v = self.value(x).data();
        let mut out = vec![0.0; c * ho * wo];
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let base = ch * h * w + 2 * oy * w + 2 * ox;
                    out[(ch * ho + oy) * wo + ox] =
                        0.25 * (v[base] + v[base + 1] + v[base + w] + v[base + w + 1]);
                }
            }
        }
        let value = Tensor::new(&[c, ho, wo], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::AvgPool2(x), rg))
    }

    /// Adds `b[c]` to every entry of channel `c` of a `C×…` tensor.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xs, bs) = (self.shape(x).to_vec(), self.shape(b).to_vec());
        if xs.is_empty() || bs != [xs[0]] {
            return Err(Error::shape("add_channel_bias", &xs, &bs));
        }
        let per = self.value(x).numel() / xs[0];
        let bv = self.value(b).data();
        let out: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bv[i / per])
            .collect();
        let value = Tensor::new(&xs, out)?;
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(value, Op::ChannelBias(x, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose()?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Transpose(x), rg))
    }

    /// Runs the chain rule from `loss` and returns per-node gradients.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(lv.shape()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Backward pass that accumulates into the bound parameters' gradient buffers.
    ///
    /// Parameters not reachable from `loss` are left untouched.
    pub fn backward(&self, loss: Var, params: &mut ParamSet) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                if let Some(g) = &grads.grads[idx] {
                    params.get_mut(id).accumulate_grad(g)?;
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let mut acc = |v: Var, t: Tensor| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        let gd = g.data();
        match &node.op {
            Op::Constant | Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (p, q, r) = kernels::matmul_dims(va.shape(), vb.shape())?;
                if self.rg(*a) {
                    let mut da = vec![0.0; p * q];
                    kernels::gemm(p, r, q, gd, false, vb.data(), true, &mut da, 0.0);
                    acc(*a, Tensor::new(&[p, q], da)?);
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; q * r];
                    kernels::gemm(q, p, r, va.data(), true, gd, false, &mut db, 0.0);
                    acc(*b, Tensor::new(&[q, r], db)?);
                }
            }
            Op::Conv2d {
                input,
                kernel,
                geom,
                cols,
            } => {
                let vk = self.value(*kernel);
                let c_out = vk.shape()[0];
                let (rows, n) = (geom.col_rows(), geom.col_cols());
                if self.rg(*kernel) {
                    let mut dk = vec![0.0; c_out * rows];
                    kernels::gemm(c_out, n, rows, gd, false, cols, true, &mut dk, 0.0);
                    acc(*kernel, Tensor::new(vk.shape(), dk)?);
                }
                if self.rg(*input) {
                    let mut dcols = vec![0.0; rows * n];
                    kernels::gemm(rows, c_out, n, vk.data(), true, gd, false, &mut dcols, 0.0);
                    let mut dx = vec![0.0; geom.channels * geom.height * geom.width];
                    kernels::col2im(&dcols, geom, &mut dx);
                    acc(*input, Tensor::new(self.shape(*input), dx)?);
                }
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let cols = y.shape()[1];
                let mut dx = vec![0.0; y.numel()];
                for ((yr, gr), dr) in y
                    .data()
                    .chunks(cols)
                    .zip(gd.chunks(cols))
                    .zip(dx.chunks_mut(cols))
                {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = yv * (gv - dot);
                    }
                }
                acc(*x, Tensor::new(y.shape(), dx)?);
            }
            Op::LogSoftmaxRows(x) => {
                let y = &node.value;
                let cols = y.shape()[1];
                let mut dx = vec![0.0; y.numel()];
                for ((yr, gr), dr) in y
                    .data()
                    .chunks(cols)
                    .zip(gd.chunks(cols))
                    .zip(dx.chunks_mut(cols))
                {
                    let total: f64 = gr.iter().sum();
                    for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = gv - yv.exp() * total;
                    }
                }
                acc(*x, Tensor::new(y.shape(), dx)?);
            }
            Op::Relu(x) => {
                let dx = self
                    .value(*x)
                    .zip_map(g, |v, gv| if v > 0.0 { gv } else { 0.0 })?;
                acc(*x, dx);
            }
            Op::Sigmoid(x) => {
                acc(*x, node.value.zip_map(g, |y, gv| gv * y * (1.0 - y))?);
            }
            Op::LogSigmoid(x) => {
                let dx = self
                    .value(*x)
                    .zip_map(g, |v, gv| gv * kernels::sigmoid(-v))?;
                acc(*x, dx);
            }
            Op::Log(x) => {
                acc(*x, self.value(*x).zip_map(g, |v, gv| gv / v)?);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(self.value(*b), |gv, bv| gv * bv)?);
                acc(*b, g.zip_map(self.value(*a), |gv, av| gv * av)?);
            }
            Op::Scale(x, c) => acc(*x, g.map(|v| v * c)),
            Op::Sum(x, axis) | Op::Mean(x, axis) => {
                let shape = self.shape(*x).to_vec();
                let (outer, len, inner) = match axis {
                    None => (1, shape.iter().product(), 1),
                    Some(a) => axis_split(&shape, *a)?,
                };
                let factor = match node.op {
                    Op::Mean(..) => 1.0 / len as f64,
                    _ => 1.0,
                };
                let mut dx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner {
                            dx[(o * len + l) * inner + i] = gd[o * inner + i] * factor;
                        }
                    }
                }
                acc(*x, Tensor::new(&shape, dx)?);
            }
            Op::Max(x, arg) => {
                let mut dx = Tensor::zeros(self.shape(*x));
                for (&src, &gv) in arg.iter().zip(gd) {
                    dx.data_mut()[src] += gv;
                }
                acc(*x, dx);
            }
            Op::Reshape(x) => acc(*x, g.reshape(self.shape(*x))?),
            Op::Transpose(x) => acc(*x, g.transpose()?),
            Op::AvgPool2(x) => {
                let s = self.shape(*x).to_vec();
                let (c, h, w) = (s[0], s[1], s[2]);
                let (ho, wo) = (h / 2, w / 2);
                let mut dx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..h {
                        for xx in 0..w {
                            dx[(ch * h + y) * w + xx] = 0.25 * gd[(ch * ho + y / 2) * wo + xx / 2];
                        }
                    }
                }
                acc(*x, Tensor::new(&s, dx)?);
            }
            Op::ChannelBias(x, b) => {
                if self.rg(*x) {
                    acc(*x, g.clone());
                }
                if self.rg(*b) {
                    let c = self.shape(*b)[0];
                    let per = gd.len() / c;
                    let db: Vec<f64> = gd.chunks(per).map(|ch| ch.iter().sum()).collect();
                    acc(*b, Tensor::vector(db));
                }
            }
        }
        Ok(())
    }
}
