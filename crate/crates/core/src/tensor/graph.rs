use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, Conv2dGeometry, ConvDims};
use super::{DType, Tensor};
use crate::error::{shape_err, Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

/// Elementwise primitives. Binary kinds take a second operand that is either
/// the same shape or a single-element scalar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Tanh,
    Sigmoid,
    /// `clip(0.2·x + 0.5, 0, 1)`
    HardSigmoid,
    Relu,
    Exp,
    Log,
    Clip { min: f64, max: f64 },
}

impl ElementwiseOp {
    fn is_binary(self) -> bool {
        matches!(self, ElementwiseOp::Add | ElementwiseOp::Sub | ElementwiseOp::Mul)
    }

    fn name(self) -> &'static str {
        match self {
            ElementwiseOp::Add => "add",
            ElementwiseOp::Sub => "sub",
            ElementwiseOp::Mul => "mul",
            ElementwiseOp::Tanh => "tanh",
            ElementwiseOp::Sigmoid => "sigmoid",
            ElementwiseOp::HardSigmoid => "hard_sigmoid",
            ElementwiseOp::Relu => "relu",
            ElementwiseOp::Exp => "exp",
            ElementwiseOp::Log => "log",
            ElementwiseOp::Clip { .. } => "clip",
        }
    }
}

pub fn hard_sigmoid(x: f64) -> f64 {
    (0.2 * x + 0.5).clamp(0.0, 1.0)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

enum Op {
    Leaf,
    Binary {
        kind: ElementwiseOp,
        a: usize,
        b: usize,
        b_scalar: bool,
    },
    Unary {
        kind: ElementwiseOp,
        a: usize,
    },
    Scale {
        a: usize,
        factor: f64,
    },
    Offset {
        a: usize,
    },
    Conv2d {
        x: usize,
        k: usize,
        b: usize,
        geom: Conv2dGeometry,
    },
    Dense {
        x: usize,
        w: usize,
        b: usize,
    },
    Softmax {
        x: usize,
    },
    Sum {
        x: usize,
    },
    Reshape {
        x: usize,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Slice {
        x: usize,
        axis: usize,
        start: usize,
    },
    ScaleChannels {
        x: usize,
        s: usize,
    },
    ScaleSpatial {
        x: usize,
        s: usize,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ChannelAffine {
        x: usize,
        scale: Vec<f64>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Binary { a, b, .. } => vec![*a, *b],
            Op::Unary { a, .. } | Op::Scale { a, .. } | Op::Offset { a } => vec![*a],
            Op::Conv2d { x, k, b, .. } => vec![*x, *k, *b],
            Op::Dense { x, w, b } => vec![*x, *w, *b],
            Op::Softmax { x } | Op::Sum { x } | Op::Reshape { x } | Op::Slice { x, .. } => vec![*x],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::ScaleChannels { x, s } | Op::ScaleSpatial { x, s } => vec![*x, *s],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::ChannelAffine { x, .. } => vec![*x],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    is_param: bool,
}

/// An explicit, scoped reverse-mode tape.
///
/// Every op evaluates eagerly. A recording graph keeps the backward rule of
/// each op; a [`Graph::no_grad`] graph keeps only values. Nodes are appended
/// in evaluation order, so the node list is already topologically sorted.
pub struct Graph {
    id: u64,
    record: bool,
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            record: true,
            nodes: Vec::new(),
        }
    }

    /// A graph for inference: values only, no backward rules.
    pub fn no_grad() -> Self {
        Graph {
            record: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        let rg = self.record;
        self.push_node(value, Op::Leaf, rg, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, false, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.check(v).expect("variable from this graph");
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::Graph("variable is not recorded on this graph".into()));
        }
        Ok(v.index)
    }

    fn push_node(&mut self, value: Tensor, op: Op, requires_grad: bool, is_param: bool) -> Var {
        let op = if self.record { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad: requires_grad && self.record,
            is_param,
        });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let rg = op.inputs().iter().any(|&i| self.nodes[i].requires_grad);
        self.push_node(value, op, rg, false)
    }

    fn dtype_of(&self, vars: &[usize]) -> DType {
        vars.iter()
            .map(|&i| self.nodes[i].value.dtype())
            .fold(DType::F32, DType::promote)
    }

    // ---- elementwise -------------------------------------------------------

    pub fn elementwise(&mut self, kind: ElementwiseOp, a: Var, b: Option<Var>) -> Result<Var> {
        let ai = self.check(a)?;
        if kind.is_binary() {
            let b = b.ok_or_else(|| Error::Shape(format!("{} needs two operands", kind.name())))?;
            let bi = self.check(b)?;
            let (av, bv) = (&self.nodes[ai].value, &self.nodes[bi].value);
            let b_scalar = bv.len() == 1 && av.len() != 1;
            if !b_scalar && av.shape() != bv.shape() {
                return shape_err(format!("{}: {:?} vs {:?}", kind.name(), av.shape(), bv.shape()));
            }
            let f: fn(f64, f64) -> f64 = match kind {
                ElementwiseOp::Add => |x, y| x + y,
                ElementwiseOp::Sub => |x, y| x - y,
                _ => |x, y| x * y,
            };
            let data: Vec<f64> = if b_scalar {
                let s = bv.data()[0];
                av.data().iter().map(|&x| f(x, s)).collect()
            } else {
                av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect()
            };
            let out = Tensor::from_op(av.shape().to_vec(), data, self.dtype_of(&[ai, bi]), kind.name())?;
            return Ok(self.push(out, Op::Binary { kind, a: ai, b: bi, b_scalar }));
        }
        if b.is_some() {
            return shape_err(format!("{} takes one operand", kind.name()));
        }
        let av = &self.nodes[ai].value;
        let f: Box<dyn Fn(f64) -> f64> = match kind {
            ElementwiseOp::Tanh => Box::new(f64::tanh),
            ElementwiseOp::Sigmoid => Box::new(sigmoid),
            ElementwiseOp::HardSigmoid => Box::new(hard_sigmoid),
            ElementwiseOp::Relu => Box::new(|x: f64| x.max(0.0)),
            ElementwiseOp::Exp => Box::new(f64::exp),
            ElementwiseOp::Log => {
                if let Some(bad) = av.data().iter().find(|&&x| x <= 0.0) {
                    return Err(Error::Domain(format!("log of non-positive value {bad}")));
                }
                Box::new(f64::ln)
            }
            ElementwiseOp::Clip { min, max } => Box::new(move |x: f64| x.clamp(min, max)),
            _ => unreachable!(),
        };
        let data = av.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::from_op(av.shape().to_vec(), data, av.dtype(), kind.name())?;
        Ok(self.push(out, Op::Unary { kind, a: ai }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Add, a, Some(b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Sub, a, Some(b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Mul, a, Some(b))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Tanh, a, None)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Sigmoid, a, None)
    }

    pub fn hard_sigmoid(&mut self, a: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::HardSigmoid, a, None)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Relu, a, None)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Exp, a, None)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Log, a, None)
    }

    pub fn clip(&mut self, a: Var, min: f64, max: f64) -> Result<Var> {
        self.elementwise(ElementwiseOp::Clip { min, max }, a, None)
    }

    /// `a · factor`
    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let ai = self.check(a)?;
        let av = &self.nodes[ai].value;
        let out = Tensor::from_op(
            av.shape().to_vec(),
            av.data().iter().map(|&x| x * factor).collect(),
            av.dtype(),
            "scale",
        )?;
        Ok(self.push(out, Op::Scale { a: ai, factor }))
    }

    /// `a + offset`
    pub fn offset(&mut self, a: Var, offset: f64) -> Result<Var> {
        let ai = self.check(a)?;
        let av = &self.nodes[ai].value;
        let out = Tensor::from_op(
            av.shape().to_vec(),
            av.data().iter().map(|&x| x + offset).collect(),
            av.dtype(),
            "offset",
        )?;
        Ok(self.push(out, Op::Offset { a: ai }))
    }

    // ---- layers ------------------------------------------------------------

    /// Zero-padded cross-correlation. `x` is `H×W×Cin` or `N×H×W×Cin`,
    /// `kernels` is `K×K×Cin×F`, `bias` is `F`.
    pub fn conv2d(&mut self, x: Var, kernels: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        self.conv2d_geom(x, kernels, bias, Conv2dGeometry::symmetric(stride, pad))
    }

    pub fn conv2d_geom(&mut self, x: Var, kernels: Var, bias: Var, geom: Conv2dGeometry) -> Result<Var> {
        let (xi, ki, bi) = (self.check(x)?, self.check(kernels)?, self.check(bias)?);
        let dims = self.conv_dims(xi, ki, bi, &geom)?;
        let xv = &self.nodes[xi].value;
        let data = kernels::conv2d_forward(
            xv.data(),
            self.nodes[ki].value.data(),
            self.nodes[bi].value.data(),
            &dims,
            &geom,
        );
        let shape = if xv.rank() == 3 {
            vec![dims.oh, dims.ow, dims.f]
        } else {
            vec![dims.n, dims.oh, dims.ow, dims.f]
        };
        let out = Tensor::from_op(shape, data, self.dtype_of(&[xi, ki, bi]), "conv2d")?;
        Ok(self.push(
            out,
            Op::Conv2d {
                x: xi,
                k: ki,
                b: bi,
                geom,
            },
        ))
    }

    fn conv_dims(&self, xi: usize, ki: usize, bi: usize, geom: &Conv2dGeometry) -> Result<ConvDims> {
        let xs = self.nodes[xi].value.shape();
        let ks = self.nodes[ki].value.shape();
        let bs = self.nodes[bi].value.shape();
        let (n, h, w, c) = match *xs {
            [h, w, c] => (1, h, w, c),
            [n, h, w, c] => (n, h, w, c),
            _ => return shape_err(format!("conv2d input must be rank 3 or 4, got {xs:?}")),
        };
        let [kh, kw, kc, f] = *ks else {
            return shape_err(format!("conv2d kernels must be K×K×Cin×F, got {ks:?}"));
        };
        if kc != c {
            return shape_err(format!("conv2d: input has {c} channels, kernels expect {kc}"));
        }
        if bs != [f] {
            return shape_err(format!("conv2d: bias {bs:?} for {f} filters"));
        }
        if geom.stride == 0 {
            return shape_err("conv2d: stride must be at least 1");
        }
        let (oh, ow) = geom.output_size(h, w, kh, kw).ok_or_else(|| {
            Error::Shape(format!("conv2d: kernel {kh}×{kw} larger than padded input {h}×{w} ({geom:?})"))
        })?;
        Ok(ConvDims {
            n,
            h,
            w,
            c,
            kh,
            kw,
            f,
            oh,
            ow,
        })
    }

    /// Affine map `x·W + b`; `x` is `N` or `B×N`, `W` is `N×U`.
    pub fn dense(&mut self, x: Var, weights: Var, bias: Var) -> Result<Var> {
        let (xi, wi, bi) = (self.check(x)?, self.check(weights)?, self.check(bias)?);
        let (rows, n, u) = self.dense_dims(xi, wi, bi)?;
        let xv = &self.nodes[xi].value;
        let data = kernels::dense_forward(
            xv.data(),
            self.nodes[wi].value.data(),
            self.nodes[bi].value.data(),
            rows,
            n,
            u,
        );
        let shape = if xv.rank() == 1 { vec![u] } else { vec![rows, u] };
        let out = Tensor::from_op(shape, data, self.dtype_of(&[xi, wi, bi]), "dense")?;
        Ok(self.push(out, Op::Dense { x: xi, w: wi, b: bi }))
    }

    fn dense_dims(&self, xi: usize, wi: usize, bi: usize) -> Result<(usize, usize, usize)> {
        let xs = self.nodes[xi].value.shape();
        let ws = self.nodes[wi].value.shape();
        let bs = self.nodes[bi].value.shape();
        let (rows, n) = match *xs {
            [n] => (1, n),
            [r, n] => (r, n),
            _ => return shape_err(format!("dense input must be rank 1 or 2, got {xs:?}")),
        };
        let [wn, u] = *ws else {
            return shape_err(format!("dense weights must be N×U, got {ws:?}"));
        };
        if wn != n || bs != [u] {
            return shape_err(format!("dense: input {xs:?}, weights {ws:?}, bias {bs:?}"));
        }
        Ok((rows, n, u))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xi = self.check(x)?;
        let xv = &self.nodes[xi].value;
        let n = *xv.shape().last().unwrap_or(&1);
        let data = kernels::softmax_rows(xv.data(), n);
        let out = Tensor::from_op(xv.shape().to_vec(), data, xv.dtype(), "softmax")?;
        Ok(self.push(out, Op::Softmax { x: xi }))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xi = self.check(x)?;
        let xv = &self.nodes[xi].value;
        let out = Tensor::from_op(vec![], vec![xv.sum()], xv.dtype(), "sum")?;
        Ok(self.push(out, Op::Sum { x: xi }))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xi = self.check(x)?;
        let out = self.nodes[xi].value.reshape(shape)?;
        Ok(self.push(out, Op::Reshape { x: xi }))
    }

    /// Keeps the leading axis and flattens the rest.
    pub fn flatten_rows(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let rows = s.first().copied().unwrap_or(1);
        let rest: usize = s.iter().skip(1).product();
        self.reshape(x, &[rows, rest])
    }

    /// Concatenates along `axis`; all other axes must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let idx: Vec<usize> = inputs.iter().map(|&v| self.check(v)).collect::<Result<_>>()?;
        let first = idx
            .first()
            .map(|&i| self.nodes[i].value.shape().to_vec())
            .ok_or_else(|| Error::Shape("concat of zero inputs".into()))?;
        if axis >= first.len() {
            return shape_err(format!("concat axis {axis} for rank {}", first.len()));
        }
        let mut total = 0;
        for &i in &idx {
            let s = self.nodes[i].value.shape();
            if s.len() != first.len()
                || s.iter().zip(&first).enumerate().any(|(ax, (a, b))| ax != axis && a != b)
            {
                return shape_err(format!("concat: {s:?} vs {first:?} on axis {axis}"));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &i in &idx {
                let v = &self.nodes[i].value;
                let block = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let out = Tensor::from_op(shape, data, self.dtype_of(&idx), "concat")?;
        Ok(self.push(out, Op::Concat { inputs: idx, axis }))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xi = self.check(x)?;
        let xv = &self.nodes[xi].value;
        let s = xv.shape();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return shape_err(format!("slice [{start}, {}) of axis {axis} in {s:?}", start + len));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * s[axis] + start) * inner;
            data.extend_from_slice(&xv.data()[base..base + len * inner]);
        }
        let mut shape = s.to_vec();
        shape[axis] = len;
        let out = Tensor::from_op(shape, data, xv.dtype(), "slice")?;
        Ok(self.push(out, Op::Slice { x: xi, axis, start }))
    }

    /// `x[b, …, c] · s[b, c]` for `x` of shape `B×…×C` and `s` of shape `B×C`.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xi, si) = (self.check(x)?, self.check(s)?);
        let (xv, sv) = (&self.nodes[xi].value, &self.nodes[si].value);
        let xs = xv.shape();
        let c = *xs.last().unwrap_or(&0);
        if xs.len() < 2 || sv.shape() != [xs[0], c] {
            return shape_err(format!("scale_channels: x {xs:?}, s {:?}", sv.shape()));
        }
        let per_b = xv.len() / xs[0];
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * sv.data()[(i / per_b) * c + i % c])
            .collect();
        let out = Tensor::from_op(xs.to_vec(), data, self.dtype_of(&[xi, si]), "scale_channels")?;
        Ok(self.push(out, Op::ScaleChannels { x: xi, s: si }))
    }

    /// `x[…, c] · s[…]`: `s` has the shape of `x` without its last axis.
    pub fn scale_spatial(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xi, si) = (self.check(x)?, self.check(s)?);
        let (xv, sv) = (&self.nodes[xi].value, &self.nodes[si].value);
        let xs = xv.shape();
        if xs.is_empty() || sv.shape() != &xs[..xs.len() - 1] {
            return shape_err(format!("scale_spatial: x {xs:?}, s {:?}", sv.shape()));
        }
        let c = xs[xs.len() - 1];
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * sv.data()[i / c])
            .collect();
        let out = Tensor::from_op(xs.to_vec(), data, self.dtype_of(&[xi, si]), "scale_spatial")?;
        Ok(self.push(out, Op::ScaleSpatial { x: xi, s: si }))
    }

    /// Training-mode batch normalization over every axis but the last.
    /// Returns the output plus the batch mean and (biased) variance per channel.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let (xi, gi, bi) = (self.check(x)?, self.check(gamma)?, self.check(beta)?);
        let xv = &self.nodes[xi].value;
        let c = *xv.shape().last().unwrap_or(&0);
        if xv.rank() < 2 || self.nodes[gi].value.shape() != [c] || self.nodes[bi].value.shape() != [c] {
            return shape_err(format!("batch_norm: x {:?} with {c} channels", xv.shape()));
        }
        let (mean, var) = kernels::channel_moments(xv.data(), c);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.nodes[gi].value.data();
        let b = self.nodes[bi].value.data();
        let mut xhat = Vec::with_capacity(xv.len());
        let mut data = Vec::with_capacity(xv.len());
        for (i, &v) in xv.data().iter().enumerate() {
            let ch = i % c;
            let h = (v - mean[ch]) * inv_std[ch];
            xhat.push(h);
            data.push(g[ch] * h + b[ch]);
        }
        let out = Tensor::from_op(xv.shape().to_vec(), data, self.dtype_of(&[xi, gi, bi]), "batch_norm")?;
        let op = Op::BatchNorm {
            x: xi,
            gamma: gi,
            beta: bi,
            xhat,
            inv_std,
        };
        Ok((self.push(out, op), mean, var))
    }

    /// `x[…, c] · scale[c] + shift[c]` with constant coefficients.
    pub fn channel_affine(&mut self, x: Var, scale: &[f64], shift: &[f64]) -> Result<Var> {
        let xi = self.check(x)?;
        let xv = &self.nodes[xi].value;
        let c = *xv.shape().last().unwrap_or(&0);
        if scale.len() != c || shift.len() != c {
            return shape_err(format!("channel_affine: {c} channels, {} coefficients", scale.len()));
        }
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * scale[i % c] + shift[i % c])
            .collect();
        let out = Tensor::from_op(xv.shape().to_vec(), data, xv.dtype(), "channel_affine")?;
        Ok(self.push(
            out,
            Op::ChannelAffine {
                x: xi,
                scale: scale.to_vec(),
            },
        ))
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let li = self.check(loss)?;
        if !self.record {
            return Err(Error::Graph("backward on a no-grad graph".into()));
        }
        if self.nodes[li].value.len() != 1 {
            return Err(Error::Graph(format!(
                "loss must be a scalar, got shape {:?}",
                self.nodes[li].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; li + 1];
        grads[li] = Some(vec![1.0]);
        for i in (0..=li).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.backward_node(i, &g, &mut grads)?;
        }
        let mut out = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.is_param {
                out.push(None);
                continue;
            }
            let data = grads
                .get_mut(i)
                .and_then(Option::take)
                .unwrap_or_else(|| vec![0.0; node.value.len()]);
            out.push(Some(Tensor::from_op(
                node.value.shape().to_vec(),
                data,
                node.value.dtype(),
                "backward",
            )?));
        }
        Ok(Gradients { graph: self.id, grads: out })
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[i];
        let val = |j: usize| self.nodes[j].value.data();
        let wants = |j: usize| self.nodes[j].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Binary { kind, a, b, b_scalar } => {
                let (a, b) = (*a, *b);
                let (av, bv) = (val(a), val(b));
                let bval = |k: usize| if *b_scalar { bv[0] } else { bv[k] };
                if wants(a) {
                    let da: Vec<f64> = match kind {
                        ElementwiseOp::Mul => g.iter().enumerate().map(|(k, &gv)| gv * bval(k)).collect(),
                        _ => g.to_vec(),
                    };
                    accumulate(grads, a, &da);
                }
                if wants(b) {
                    let db: Vec<f64> = match kind {
                        ElementwiseOp::Add => g.to_vec(),
                        ElementwiseOp::Sub => g.iter().map(|v| -v).collect(),
                        _ => g.iter().zip(av).map(|(gv, x)| gv * x).collect(),
                    };
                    if *b_scalar {
                        accumulate(grads, b, &[db.iter().sum()]);
                    } else {
                        accumulate(grads, b, &db);
                    }
                }
            }
            Op::Unary { kind, a } => {
                let a = *a;
                if !wants(a) {
                    return Ok(());
                }
                let x = val(a);
                let y = node.value.data();
                let d: Vec<f64> = (0..g.len())
                    .map(|k| {
                        let local = match kind {
                            ElementwiseOp::Tanh => 1.0 - y[k] * y[k],
                            ElementwiseOp::Sigmoid => y[k] * (1.0 - y[k]),
                            ElementwiseOp::HardSigmoid => {
                                if x[k] > -2.5 && x[k] < 2.5 {
                                    0.2
                                } else {
                                    0.0
                                }
                            }
                            ElementwiseOp::Relu => {
                                if x[k] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            ElementwiseOp::Exp => y[k],
                            ElementwiseOp::Log => 1.0 / x[k],
                            ElementwiseOp::Clip { min, max } => {
                                if x[k] >= *min && x[k] <= *max {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            _ => unreachable!(),
                        };
                        g[k] * local
                    })
                    .collect();
                accumulate(grads, a, &d);
            }
            Op::Scale { a, factor } => {
                if wants(*a) {
                    let d: Vec<f64> = g.iter().map(|v| v * factor).collect();
                    accumulate(grads, *a, &d);
                }
            }
            Op::Offset { a } | Op::Reshape { x: a } => {
                if wants(*a) {
                    accumulate(grads, *a, g);
                }
            }
            Op::Conv2d { x, k, b, geom } => {
                let dims = self.conv_dims(*x, *k, *b, geom)?;
                let (dx, dk, db) = kernels::conv2d_backward(val(*x), val(*k), g, &dims, geom, wants(*x), wants(*k));
                if wants(*x) {
                    accumulate(grads, *x, &dx);
                }
                if wants(*k) {
                    accumulate(grads, *k, &dk);
                }
                if wants(*b) {
                    accumulate(grads, *b, &db);
                }
            }
            Op::Dense { x, w, b } => {
                let (rows, n, u) = self.dense_dims(*x, *w, *b)?;
                let (dx, dw, db) = kernels::dense_backward(val(*x), val(*w), g, rows, n, u);
                if wants(*x) {
                    accumulate(grads, *x, &dx);
                }
                if wants(*w) {
                    accumulate(grads, *w, &dw);
                }
                if wants(*b) {
                    accumulate(grads, *b, &db);
                }
            }
            Op::Softmax { x } => {
                if wants(*x) {
                    let n = *node.value.shape().last().unwrap_or(&1);
                    let dx = kernels::softmax_rows_backward(node.value.data(), g, n);
                    accumulate(grads, *x, &dx);
                }
            }
            Op::Sum { x } => {
                if wants(*x) {
                    let d = vec![g[0]; self.nodes[*x].value.len()];
                    accumulate(grads, *x, &d);
                }
            }
            Op::Concat { inputs, axis } => {
                let s = node.value.shape();
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let total = s[*axis] * inner;
                let mut offset = 0;
                for &inp in inputs {
                    let block = self.nodes[inp].value.shape()[*axis] * inner;
                    if wants(inp) {
                        let mut d = Vec::with_capacity(outer * block);
                        for o in 0..outer {
                            d.extend_from_slice(&g[o * total + offset..o * total + offset + block]);
                        }
                        accumulate(grads, inp, &d);
                    }
                    offset += block;
                }
            }
            Op::Slice { x, axis, start } => {
                if wants(*x) {
                    let xs = self.nodes[*x].value.shape();
                    let len = node.value.shape()[*axis];
                    let outer: usize = xs[..*axis].iter().product();
                    let inner: usize = xs[axis + 1..].iter().product();
                    let mut d = vec![0.0; self.nodes[*x].value.len()];
                    for o in 0..outer {
                        let base = (o * xs[*axis] + start) * inner;
                        d[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                    }
                    accumulate(grads, *x, &d);
                }
            }
            Op::ScaleChannels { x, s } => {
                let xs = self.nodes[*x].value.shape();
                let c = xs[xs.len() - 1];
                let per_b = self.nodes[*x].value.len() / xs[0];
                let (xv, sv) = (val(*x), val(*s));
                if wants(*x) {
                    let d: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(i, gv)| gv * sv[(i / per_b) * c + i % c])
                        .collect();
                    accumulate(grads, *x, &d);
                }
                if wants(*s) {
                    let mut d = vec![0.0; sv.len()];
                    for (i, gv) in g.iter().enumerate() {
                        d[(i / per_b) * c + i % c] += gv * xv[i];
                    }
                    accumulate(grads, *s, &d);
                }
            }
            Op::ScaleSpatial { x, s } => {
                let xs = self.nodes[*x].value.shape();
                let c = xs[xs.len() - 1];
                let (xv, sv) = (val(*x), val(*s));
                if wants(*x) {
                    let d: Vec<f64> = g.iter().enumerate().map(|(i, gv)| gv * sv[i / c]).collect();
                    accumulate(grads, *x, &d);
                }
                if wants(*s) {
                    let mut d = vec![0.0; sv.len()];
                    for (i, gv) in g.iter().enumerate() {
                        d[i / c] += gv * xv[i];
                    }
                    accumulate(grads, *s, &d);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = inv_std.len();
                let m = (xhat.len() / c) as f64;
                let gv = val(*gamma);
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for (i, gi) in g.iter().enumerate() {
                    dgamma[i % c] += gi * xhat[i];
                    dbeta[i % c] += gi;
                }
                if wants(*x) {
                    // dxhat = g·γ; dx = inv_std/m · (m·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
                    let d: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(i, gi)| {
                            let ch = i % c;
                            let dxhat = gi * gv[ch];
                            inv_std[ch] / m * (m * dxhat - dbeta[ch] * gv[ch] - xhat[i] * dgamma[ch] * gv[ch])
                        })
                        .collect();
                    accumulate(grads, *x, &d);
                }
                if wants(*gamma) {
                    accumulate(grads, *gamma, &dgamma);
                }
                if wants(*beta) {
                    accumulate(grads, *beta, &dbeta);
                }
            }
            Op::ChannelAffine { x, scale } => {
                if wants(*x) {
                    let c = scale.len();
                    let d: Vec<f64> = g.iter().enumerate().map(|(i, gv)| gv * scale[i % c]).collect();
                    accumulate(grads, *x, &d);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], idx: usize, d: &[f64]) {
    match &mut grads[idx] {
        Some(acc) => acc.iter_mut().zip(d).for_each(|(a, v)| *a += v),
        slot => *slot = Some(d.to_vec()),
    }
}

/// Gradients of a scalar loss with respect to every trainable leaf.
#[derive(Debug)]
pub struct Gradients {
    graph: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a parameter leaf; zeros if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Result<&Tensor> {
        if v.graph != self.graph {
            return Err(Error::Graph("variable is not recorded on this graph".into()));
        }
        self.grads
            .get(v.index)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::Graph("gradient requested for a non-parameter value".into()))
    }
}
