//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value and the indices of
//! its parents. Parents always precede their children, so replaying the node
//! list backwards is a valid topological order and visits each node once.

use std::rc::Rc;

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Gelu(Var),
    Relu(Var),
    Powf(Var, f64),
    Log(Var),
    Exp(Var),
    Matmul(Var, Var),
    Bmm {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Reshape(Var),
    Gather {
        src: Var,
        index: Rc<[usize]>,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SumAll(Var),
    MeanAll(Var),
    SumLast(Var),
    DivRows(Var, Var),
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | AddRow(a, b) | Matmul(a, b) => {
                vec![*a, *b]
            }
            DivRows(a, b) => vec![*a, *b],
            Bmm { a, b, .. } => vec![*a, *b],
            Scale(x, _)
            | AddScalar(x)
            | Tanh(x)
            | Gelu(x)
            | Relu(x)
            | Powf(x, _)
            | Log(x)
            | Exp(x)
            | Reshape(x)
            | LogSoftmax(x)
            | SumAll(x)
            | MeanAll(x)
            | SumLast(x) => {
                vec![*x]
            }
            Gather { src, .. } => vec![*src],
            Softmax { x, .. } => vec![*x],
            LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Single-writer recording of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of `v`, or `None` when `v` does not require a gradient or is
    /// unreachable from the loss.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_parts(self.shapes[v.0].clone(), g.clone()))
    }

    /// Gradient of `v` with absent gradients materialised as zeros.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v)
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    pub(crate) fn raw(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    const A: f64 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    let value = 0.5 * x * (1.0 + t);
    let deriv = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x);
    (value, deriv)
}

/// (outer, axis length, inner) strides for reducing along `axis`.
fn axis_strides(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Stop-gradient: a constant copy of `v`'s current value.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::from_parts(va.shape().to_vec(), data)
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let v = self.value(x);
        Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|&e| f(e)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div", a, b)?;
        let out = self.zip_map(a, b, |x, y| x / y);
        Ok(self.push(out, Op::Div(a, b)))
    }

    /// `x[..., n] + row[n]`, broadcasting `row` over leading dimensions.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let n = self.value(x).last_dim();
        if self.shape(row) != [n] {
            return Err(Error::shape("add_row", self.shape(x), self.shape(row)));
        }
        let r = self.value(row).data();
        let vx = self.value(x);
        let data = vx
            .data()
            .chunks(n)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(a, b)| a + b))
            .collect();
        let out = Tensor::from_parts(vx.shape().to_vec(), data);
        Ok(self.push(out, Op::AddRow(x, row)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.map(x, |e| e * c);
        self.push(out, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.map(x, |e| e + c);
        self.push(out, Op::AddScalar(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.map(x, f64::tanh);
        self.push(out, Op::Tanh(x))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.map(x, |e| gelu_parts(e).0);
        self.push(out, Op::Gelu(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.map(x, |e| e.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn powf(&mut self, x: Var, exponent: f64) -> Var {
        let out = self.map(x, |e| e.powf(exponent));
        self.push(out, Op::Powf(x, exponent))
    }

    pub fn log(&mut self, x: Var) -> Var {
        let out = self.map(x, f64::ln);
        self.push(out, Op::Log(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.map(x, f64::exp);
        self.push(out, Op::Exp(x))
    }

    /// Plain 2-D product `[m×k] · [k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_nn(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::Matmul(a, b)))
    }

    /// Batched product over the leading dimension: `[B×m×k] · [B×k×n]`, or
    /// `[B×m×k] · [B×n×k]ᵀ` when `trans_b` is set.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ok = sa.len() == 3
            && sb.len() == 3
            && sa[0] == sb[0]
            && if trans_b {
                sa[2] == sb[2]
            } else {
                sa[2] == sb[1]
            };
        if !ok {
            return Err(Error::shape("bmm", sa, sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b { sb[1] } else { sb[2] };
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            let ai = &da[i * m * k..(i + 1) * m * k];
            let bi = &db[i * k * n..(i + 1) * k * n];
            let oi = &mut out[i * m * n..(i + 1) * m * n];
            if trans_b {
                gemm_nt(ai, bi, oi, m, k, n);
            } else {
                gemm_nn(ai, bi, oi, m, k, n);
            }
        }
        let value = Tensor::from_parts(vec![batch, m, n], out);
        Ok(self.push(value, Op::Bmm { a, b, trans_b }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// `out[i] = src[index[i]]` over flat storage, producing `shape`.
    ///
    /// Covers row selection, embedding lookup and axis permutations; the
    /// backward pass scatter-adds, so repeated indices accumulate.
    pub fn gather(&mut self, src: Var, index: Rc<[usize]>, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != index.len() {
            return Err(Error::Contract(format!(
                "gather shape {shape:?} needs {numel} indices, got {}",
                index.len()
            )));
        }
        let data_src = self.value(src).data();
        let size = data_src.len();
        let mut out = Vec::with_capacity(index.len());
        for &i in index.iter() {
            out.push(*data_src.get(i).ok_or(Error::Index { index: i, size })?);
        }
        let value = Tensor::from_parts(shape.to_vec(), out);
        Ok(self.push(value, Op::Gather { src, index }))
    }

    /// Softmax along `axis`, stabilised by subtracting the maximum.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Contract(format!(
                "softmax axis {axis} out of range for {shape:?}"
            )));
        }
        let input = self.value(x);
        if !input.all_finite() {
            return Err(Error::Numeric("softmax input is not finite".into()));
        }
        let (outer, n, inner) = axis_strides(&shape, axis);
        let src = input.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let max = (0..n)
                    .map(|j| src[base + j * inner])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..n {
                    let e = (src[base + j * inner] - max).exp();
                    out[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..n {
                    out[base + j * inner] /= sum;
                }
            }
        }
        Ok(self.push(Tensor::from_parts(shape, out), Op::Softmax { x, axis }))
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let input = self.value(x);
        if !input.all_finite() {
            return Err(Error::Numeric("log_softmax input is not finite".into()));
        }
        let n = input.last_dim();
        let mut out = Vec::with_capacity(input.numel());
        for row in input.rows() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|v| v - lse));
        }
        debug_assert_eq!(out.len() % n, 0);
        let value = Tensor::from_parts(input.shape().to_vec(), out);
        Ok(self.push(value, Op::LogSoftmax(x)))
    }

    /// Normalises each trailing-dimension row to zero mean and unit variance,
    /// then applies `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Config(format!(
                "layer_norm eps must be positive, got {eps}"
            )));
        }
        let d = self.value(x).last_dim();
        if self.shape(gain) != [d] {
            return Err(Error::shape(
                "layer_norm gain",
                self.shape(x),
                self.shape(gain),
            ));
        }
        if self.shape(bias) != [d] {
            return Err(Error::shape(
                "layer_norm bias",
                self.shape(x),
                self.shape(bias),
            ));
        }
        let input = self.value(x);
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = input.numel() / d;
        let mut xhat = Vec::with_capacity(input.numel());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(input.numel());
        for row in input.rows() {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mean) * inv;
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        let value = Tensor::from_parts(input.shape().to_vec(), out);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.data().iter().sum::<f64>() / v.numel() as f64;
        self.push(Tensor::scalar(m), Op::MeanAll(x))
    }

    /// Sums the trailing dimension away: `[..., n] -> [...]`.
    pub fn sum_last(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.rows().map(|r| r.iter().sum()).collect();
        let shape = v.shape()[..v.shape().len().saturating_sub(1)].to_vec();
        self.push(Tensor::from_parts(shape, data), Op::SumLast(x))
    }

    /// `x[..., n] / s[...]`, one divisor per trailing row.
    pub fn div_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let sx = self.shape(x);
        if sx.is_empty() || self.shape(s) != &sx[..sx.len() - 1] {
            return Err(Error::shape("div_rows", sx, self.shape(s)));
        }
        let divisors = self.value(s).data();
        let v = self.value(x);
        let data = v
            .rows()
            .zip(divisors)
            .flat_map(|(row, d)| row.iter().map(move |e| e / d))
            .collect();
        let value = Tensor::from_parts(v.shape().to_vec(), data);
        Ok(self.push(value, Op::DivRows(x, s)))
    }

    /// Inverted dropout with an explicit keep mask drawn from `rng`.
    pub fn dropout<R: rand::Rng>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!(
                "dropout probability {p} not in [0, 1)"
            )));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let shape = self.shape(x).to_vec();
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let m = self.constant(Tensor::from_parts(shape, mask));
        self.mul(x, m)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if root.requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, wants(*a), || g.to_vec());
                accumulate(grads, *b, wants(*b), || g.to_vec());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, wants(*a), || g.to_vec());
                accumulate(grads, *b, wants(*b), || g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                accumulate(grads, *a, wants(*a), || {
                    g.iter().zip(vb).map(|(g, y)| g * y).collect()
                });
                accumulate(grads, *b, wants(*b), || {
                    g.iter().zip(va).map(|(g, x)| g * x).collect()
                });
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                accumulate(grads, *a, wants(*a), || {
                    g.iter().zip(vb).map(|(g, y)| g / y).collect()
                });
                accumulate(grads, *b, wants(*b), || {
                    g.iter()
                        .zip(va.iter().zip(vb))
                        .map(|(g, (x, y))| -g * x / (y * y))
                        .collect()
                });
            }
            Op::AddRow(x, row) => {
                accumulate(grads, *x, wants(*x), || g.to_vec());
                let n = val(*row).len();
                accumulate(grads, *row, wants(*row), || {
                    let mut acc = vec![0.0; n];
                    for chunk in g.chunks(n) {
                        for (a, v) in acc.iter_mut().zip(chunk) {
                            *a += v;
                        }
                    }
                    acc
                });
            }
            Op::Scale(x, c) => {
                accumulate(grads, *x, wants(*x), || g.iter().map(|v| v * c).collect());
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                accumulate(grads, *x, wants(*x), || g.to_vec());
            }
            Op::Tanh(x) => accumulate(grads, *x, wants(*x), || {
                g.iter().zip(out).map(|(g, t)| g * (1.0 - t * t)).collect()
            }),
            Op::Gelu(x) => accumulate(grads, *x, wants(*x), || {
                g.iter()
                    .zip(val(*x))
                    .map(|(g, &v)| g * gelu_parts(v).1)
                    .collect()
            }),
            Op::Relu(x) => accumulate(grads, *x, wants(*x), || {
                g.iter()
                    .zip(val(*x))
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect()
            }),
            Op::Powf(x, e) => accumulate(grads, *x, wants(*x), || {
                g.iter()
                    .zip(val(*x))
                    .map(|(g, &v)| {
                        if v == 0.0 && *e < 1.0 {
                            0.0
                        } else {
                            g * e * v.powf(e - 1.0)
                        }
                    })
                    .collect()
            }),
            Op::Log(x) => accumulate(grads, *x, wants(*x), || {
                g.iter().zip(val(*x)).map(|(g, v)| g / v).collect()
            }),
            Op::Exp(x) => accumulate(grads, *x, wants(*x), || {
                g.iter().zip(out).map(|(g, e)| g * e).collect()
            }),
            Op::Matmul(a, b) => {
                let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (val(*a), val(*b));
                accumulate(grads, *a, wants(*a), || {
                    let mut da = vec![0.0; m * k];
                    gemm_nt(g, vb, &mut da, m, n, k);
                    da
                });
                accumulate(grads, *b, wants(*b), || {
                    let mut db = vec![0.0; k * n];
                    gemm_tn(va, g, &mut db, k, m, n);
                    db
                });
            }
            Op::Bmm { a, b, trans_b } => {
                let sa = self.nodes[a.0].value.shape();
                let sb = self.nodes[b.0].value.shape();
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = if *trans_b { sb[1] } else { sb[2] };
                let (va, vb) = (val(*a), val(*b));
                accumulate(grads, *a, wants(*a), || {
                    let mut da = vec![0.0; batch * m * k];
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let bi = &vb[i * k * n..(i + 1) * k * n];
                        let di = &mut da[i * m * k..(i + 1) * m * k];
                        if *trans_b {
                            // C = A Bᵀ with B: [n×k] -> dA = dC · B
                            gemm_nn(gi, bi, di, m, n, k);
                        } else {
                            gemm_nt(gi, bi, di, m, n, k);
                        }
                    }
                    da
                });
                accumulate(grads, *b, wants(*b), || {
                    let mut db = vec![0.0; batch * k * n];
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let ai = &va[i * m * k..(i + 1) * m * k];
                        let di = &mut db[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            // dB = dCᵀ · A : [n×m]·[m×k]
                            gemm_tn(gi, ai, di, n, m, k);
                        } else {
                            gemm_tn(ai, gi, di, k, m, n);
                        }
                    }
                    db
                });
            }
            Op::Gather { src, index } => {
                let size = val(*src).len();
                accumulate(grads, *src, wants(*src), || {
                    let mut acc = vec![0.0; size];
                    for (gv, &i) in g.iter().zip(index.iter()) {
                        acc[i] += gv;
                    }
                    acc
                });
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = axis_strides(node.value.shape(), *axis);
                accumulate(grads, *x, wants(*x), || {
                    let mut dx = vec![0.0; out.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * n * inner + i;
                            let dot: f64 = (0..n)
                                .map(|j| g[base + j * inner] * out[base + j * inner])
                                .sum();
                            for j in 0..n {
                                let at = base + j * inner;
                                dx[at] = out[at] * (g[at] - dot);
                            }
                        }
                    }
                    dx
                });
            }
            Op::LogSoftmax(x) => {
                let n = node.value.last_dim();
                accumulate(grads, *x, wants(*x), || {
                    let mut dx = Vec::with_capacity(out.len());
                    for (grow, orow) in g.chunks(n).zip(out.chunks(n)) {
                        let total: f64 = grow.iter().sum();
                        dx.extend(grow.iter().zip(orow).map(|(g, lp)| g - lp.exp() * total));
                    }
                    dx
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = node.value.last_dim();
                let gv = val(*gain);
                accumulate(grads, *x, wants(*x), || {
                    let mut dx = Vec::with_capacity(out.len());
                    for (r, inv) in inv_std.iter().enumerate() {
                        let grow = &g[r * d..(r + 1) * d];
                        let hrow = &xhat[r * d..(r + 1) * d];
                        let dh: Vec<f64> = grow.iter().zip(gv).map(|(g, w)| g * w).collect();
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h: f64 = dh.iter().zip(hrow).map(|(a, b)| a * b).sum();
                        let scale = inv / d as f64;
                        dx.extend(
                            dh.iter()
                                .zip(hrow)
                                .map(|(dh, h)| scale * (d as f64 * dh - sum_dh - h * sum_dh_h)),
                        );
                    }
                    dx
                });
                accumulate(grads, *gain, wants(*gain), || {
                    let mut acc = vec![0.0; d];
                    for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            acc[j] += grow[j] * hrow[j];
                        }
                    }
                    acc
                });
                accumulate(grads, *bias, wants(*bias), || {
                    let mut acc = vec![0.0; d];
                    for grow in g.chunks(d) {
                        for (a, v) in acc.iter_mut().zip(grow) {
                            *a += v;
                        }
                    }
                    acc
                });
            }
            Op::SumAll(x) => {
                let n = val(*x).len();
                accumulate(grads, *x, wants(*x), || vec![g[0]; n]);
            }
            Op::MeanAll(x) => {
                let n = val(*x).len();
                accumulate(grads, *x, wants(*x), || vec![g[0] / n as f64; n]);
            }
            Op::SumLast(x) => {
                let n = self.nodes[x.0].value.last_dim();
                accumulate(grads, *x, wants(*x), || {
                    g.iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect()
                });
            }
            Op::DivRows(x, s) => {
                let n = self.nodes[x.0].value.last_dim();
                let (vx, vs) = (val(*x), val(*s));
                accumulate(grads, *x, wants(*x), || {
                    g.chunks(n)
                        .zip(vs)
                        .flat_map(|(row, d)| row.iter().map(move |v| v / d))
                        .collect()
                });
                accumulate(grads, *s, wants(*s), || {
                    g.chunks(n)
                        .zip(vx.chunks(n))
                        .zip(vs)
                        .map(|((grow, xrow), d)| {
                            -grow.iter().zip(xrow).map(|(g, x)| g * x).sum::<f64>() / (d * d)
                        })
                        .collect()
                });
            }
        }
    }
}

fn accumulate(
    grads: &mut [Option<Vec<f64>>],
    target: Var,
    wanted: bool,
    contribution: impl FnOnce() -> Vec<f64>,
) {
    if !wanted {
        return;
    }
    let c = contribution();
    match &mut grads[target.0] {
        Some(existing) => {
            for (e, v) in existing.iter_mut().zip(c) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(c),
    }
}
