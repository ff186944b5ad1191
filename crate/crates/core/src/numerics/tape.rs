//! Reverse-mode differentiation over a linear tape.
//!
//! Every op appends one node whose inputs already live on the tape, so node
//! order is a topological order and the backward sweep is a single reverse
//! pass. Only leaves registered with [`Tape::param`] can receive gradients;
//! [`Tape::backward`] additionally prunes every node that does not lie on a
//! path from a requested parameter to the loss.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::conv::{self, ConvGeometry, Padding};
use super::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    /// Leaky ReLU with the given negative slope.
    LeakyRelu(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiffAxis {
    /// Differences between horizontally adjacent pixels (last axis).
    Horizontal,
    /// Differences between vertically adjacent pixels (second-to-last axis).
    Vertical,
}

enum Op<T> {
    Leaf { param: bool },
    Conv2d { input: Var, kernel: Var, geom: ConvGeometry, batch: usize, out_ch: usize },
    AddBias { input: Var, bias: Var, axis: usize },
    Dense { input: Var, weights: Var, bias: Var },
    Act { input: Var, kind: Activation },
    SoftmaxSites { input: Var },
    DynamicFilter { frame: Var, filters: Var, k: usize },
    Concat { inputs: Vec<Var>, axis: usize },
    Reshape { input: Var },
    Upsample2 { input: Var },
    GlobalAvgPool { input: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { input: Var, scale: T },
    Ln { input: Var },
    Abs { input: Var },
    Powf { input: Var, exponent: T },
    Square { input: Var },
    Clamp { input: Var, lo: T, hi: T },
    Sum { input: Var },
    Mean { input: Var },
    SpatialDiff { input: Var, axis: DiffAxis },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf { .. } => vec![],
            Conv2d { input, kernel, .. } => vec![*input, *kernel],
            AddBias { input, bias, .. } => vec![*input, *bias],
            Dense { input, weights, bias } => vec![*input, *weights, *bias],
            DynamicFilter { frame, filters, .. } => vec![*frame, *filters],
            Concat { inputs, .. } => inputs.clone(),
            Add(a, b) | Sub(a, b) | Mul(a, b) => vec![*a, *b],
            Act { input, .. }
            | SoftmaxSites { input }
            | Reshape { input }
            | Upsample2 { input }
            | GlobalAvgPool { input }
            | Affine { input, .. }
            | Ln { input }
            | Abs { input }
            | Powf { input, .. }
            | Square { input }
            | Clamp { input, .. }
            | Sum { input }
            | Mean { input }
            | SpatialDiff { input, .. } => vec![*input],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Splits a rank-3 `[C,H,W]` or rank-4 `[B,C,H,W]` shape.
fn spatial(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((1, c, h, w)),
        [b, c, h, w] => Ok((b, c, h, w)),
        _ => Err(Error::contract(op, format!("expected [C,H,W] or [B,C,H,W], got {shape:?}"))),
    }
}

fn with_spatial(rank: usize, b: usize, c: usize, h: usize, w: usize) -> Vec<usize> {
    if rank == 3 {
        vec![c, h, w]
    } else {
        vec![b, c, h, w]
    }
}

/// Axis that per-channel biases broadcast over.
fn channel_axis(rank: usize) -> usize {
    match rank {
        0 | 1 => 0,
        2 => 1,
        r => r - 3,
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::contract(op, format!("shape {a:?} does not match {b:?}")))
    }
}

/// Recording of a forward computation, differentiable in reverse.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> std::fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// True for leaves created by [`Tape::constant`] or [`Tape::detach`].
    pub fn is_constant(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Leaf { param: false })
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Trainable leaf; eligible as a `wrt` target of [`Tape::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf { param: true } });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf { param: false } });
        Var(self.nodes.len() - 1)
    }

    /// Copies `v`'s current value into a fresh constant, cutting the
    /// gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn zeros(&mut self, shape: impl Into<Vec<usize>>) -> Var {
        self.constant(Tensor::zeros(shape))
    }

    /// 2-D convolution (cross-correlation, no bias) of `[C,H,W]` or
    /// `[B,C,H,W]` input with a `[C_out, C_in, k, k]` kernel.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: Padding) -> Result<Var> {
        const OP: &str = "conv2d";
        let in_shape = self.shape(input).to_vec();
        let rank = in_shape.len();
        let (b, c, h, w) = spatial(&in_shape, OP)?;
        let (out_ch, k) = match *self.shape(kernel) {
            [co, ci, kh, kw] if ci == c && kh == kw => (co, kh),
            ref ks => {
                return Err(Error::contract(
                    OP,
                    format!("kernel {ks:?} incompatible with input channels {c} (input {in_shape:?})"),
                ))
            }
        };
        if (k % 2 == 0 && padding != Padding::Valid) || stride == 0 {
            return Err(Error::contract(OP, format!("need odd kernel for same padding and stride >= 1, got k={k}, stride={stride}")));
        }
        let (Some(out_h), Some(out_w)) =
            (padding.output_len(h, k, stride), padding.output_len(w, k, stride))
        else {
            return Err(Error::contract(OP, format!("kernel {k} larger than input {h}x{w} with valid padding")));
        };
        let geom = ConvGeometry { channels: c, height: h, width: w, k, stride, padding, out_h, out_w };

        let x = self.value(input).data();
        let kern = self.value(kernel).data();
        let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
        let mut out = vec![T::zero(); b * out_ch * cols_n];
        let mut cols = if geom.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * cols_n] };
        for n in 0..b {
            let xb = &x[n * c * h * w..(n + 1) * c * h * w];
            let src: &[T] = if geom.is_pointwise() {
                xb
            } else {
                conv::im2col(&geom, xb, &mut cols);
                &cols
            };
            let ob = &mut out[n * out_ch * cols_n..(n + 1) * out_ch * cols_n];
            T::gemm(out_ch, rows, cols_n, T::one(), kern, (rows as isize, 1), src, (cols_n as isize, 1), T::zero(), ob, cols_n as isize);
        }
        let value = Tensor::from_parts(with_spatial(rank, b, out_ch, out_h, out_w), out);
        self.push(OP, value, Op::Conv2d { input, kernel, geom, batch: b, out_ch })
    }

    /// Adds a rank-1 bias along the channel axis (axis `rank-3` for spatial
    /// tensors, the last axis for vectors and matrices).
    pub fn add_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        const OP: &str = "add_bias";
        let shape = self.shape(input).to_vec();
        let axis = channel_axis(shape.len());
        let ch = shape.get(axis).copied().unwrap_or(1);
        if self.shape(bias) != [ch] {
            return Err(Error::contract(OP, format!("bias {:?} does not match channel axis of {shape:?}", self.shape(bias))));
        }
        let inner: usize = shape.iter().skip(axis + 1).product();
        let bvals = self.value(bias).data().to_vec();
        let mut out = self.value(input).data().to_vec();
        if inner > 0 {
            for (i, block) in out.chunks_exact_mut(inner).enumerate() {
                let b = bvals[i % ch];
                block.iter_mut().for_each(|v| *v = *v + b);
            }
        }
        self.push(OP, Tensor::from_parts(shape, out), Op::AddBias { input, bias, axis })
    }

    /// Fully connected layer: `weights · input + bias` for `[n]` or `[B, n]`
    /// input.
    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        const OP: &str = "dense";
        let in_shape = self.shape(input).to_vec();
        let (b, n) = match *in_shape {
            [n] => (1, n),
            [b, n] => (b, n),
            _ => return Err(Error::contract(OP, format!("input must be [n] or [B,n], got {in_shape:?}"))),
        };
        let m = match *self.shape(weights) {
            [m, wn] if wn == n => m,
            ref ws => return Err(Error::contract(OP, format!("weights {ws:?} incompatible with input {in_shape:?}"))),
        };
        if self.shape(bias) != [m] {
            return Err(Error::contract(OP, format!("bias {:?} incompatible with {m} outputs", self.shape(bias))));
        }
        let mut out = Vec::with_capacity(b * m);
        for _ in 0..b {
            out.extend_from_slice(self.value(bias).data());
        }
        T::gemm(b, n, m, T::one(), self.value(input).data(), (n as isize, 1), self.value(weights).data(), (1, n as isize), T::one(), &mut out, m as isize);
        let shape = if in_shape.len() == 1 { vec![m] } else { vec![b, m] };
        self.push(OP, Tensor::from_parts(shape, out), Op::Dense { input, weights, bias })
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Result<Var> {
        let x = self.value(input);
        let out = match kind {
            Activation::Sigmoid => x.map(|v| T::one() / (T::one() + (-v).exp())),
            Activation::Tanh => x.map(|v| v.tanh()),
            Activation::Relu => x.map(|v| if v > T::zero() { v } else { T::zero() }),
            Activation::LeakyRelu(slope) => {
                let s = T::from_f64(slope);
                x.map(|v| if v > T::zero() { v } else { s * v })
            }
        };
        self.push("activation", out, Op::Act { input, kind })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Tanh)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    /// Softmax across the channel axis at every spatial site of a `[K,H,W]`
    /// or `[B,K,H,W]` tensor.
    pub fn softmax_sites(&mut self, input: Var) -> Result<Var> {
        const OP: &str = "softmax_sites";
        let shape = self.shape(input).to_vec();
        let (b, k, h, w) = spatial(&shape, OP)?;
        if k == 0 {
            return Err(Error::contract(OP, "need at least one channel"));
        }
        let plane = h * w;
        let x = self.value(input).data();
        let mut out = vec![T::zero(); x.len()];
        for n in 0..b {
            let base = n * k * plane;
            for s in 0..plane {
                let mut max = T::neg_infinity();
                for q in 0..k {
                    max = max.max(x[base + q * plane + s]);
                }
                let mut total = T::zero();
                for q in 0..k {
                    let e = (x[base + q * plane + s] - max).exp();
                    out[base + q * plane + s] = e;
                    total = total + e;
                }
                for q in 0..k {
                    let idx = base + q * plane + s;
                    out[idx] = out[idx] / total;
                }
            }
        }
        self.push(OP, Tensor::from_parts(shape, out), Op::SoftmaxSites { input })
    }

    /// Per-pixel local filtering: `out(i,j) = Σ w_ij(u,v) · frame(i+u, j+v)`
    /// over a K×K neighbourhood with replicate borders. `filters` holds the
    /// K² weights per pixel as channels, ordered row-major over `(u, v)`.
    ///
    /// Weights are expected to be convex (softmax over sites). Each output is
    /// clamped to the range of its neighbourhood, which only removes rounding
    /// error; the backward pass ignores the clamp.
    pub fn dynamic_filter(&mut self, frame: Var, filters: Var) -> Result<Var> {
        const OP: &str = "dynamic_filter";
        let fshape = self.shape(frame).to_vec();
        let (b, c, h, w) = spatial(&fshape, OP)?;
        let wshape = self.shape(filters).to_vec();
        let (wb, kk, wh, ww) = spatial(&wshape, OP)?;
        let k = (kk as f64).sqrt().round() as usize;
        if wb != b || wh != h || ww != w || k * k != kk || k.is_multiple_of(2) || wshape.len() != fshape.len() {
            return Err(Error::contract(OP, format!("filters {wshape:?} incompatible with frame {fshape:?} (need odd K with K² channels)")));
        }
        let x = self.value(frame).data();
        let f = self.value(filters).data();
        let mut out = vec![T::zero(); x.len()];
        for n in 0..b {
            conv::dynamic_filter_forward(
                &x[n * c * h * w..(n + 1) * c * h * w],
                &f[n * kk * h * w..(n + 1) * kk * h * w],
                c,
                h,
                w,
                k,
                &mut out[n * c * h * w..(n + 1) * c * h * w],
            );
        }
        self.push(OP, Tensor::from_parts(fshape, out), Op::DynamicFilter { frame, filters, k })
    }

    /// Concatenates tensors that agree on every axis but `axis`.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        const OP: &str = "concat";
        let first = parts.first().ok_or_else(|| Error::contract(OP, "nothing to concatenate"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::contract(OP, format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::contract(OP, format!("shape {s:?} does not match {base:?} off axis {axis}")));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let len = self.shape(*p)[axis] * inner;
                out.extend_from_slice(&self.value(*p).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(OP, Tensor::from_parts(shape, out), Op::Concat { inputs: parts.to_vec(), axis })
    }

    /// Concatenation along the channel axis of spatial tensors.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let rank = parts.first().map(|p| self.shape(*p).len()).unwrap_or(3);
        self.concat(parts, channel_axis(rank))
    }

    pub fn reshape(&mut self, input: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        self.push("reshape", value, Op::Reshape { input })
    }

    /// Nearest-neighbour ×2 upsampling of the two spatial axes.
    pub fn upsample2(&mut self, input: Var) -> Result<Var> {
        const OP: &str = "upsample2";
        let shape = self.shape(input).to_vec();
        let (b, c, h, w) = spatial(&shape, OP)?;
        let x = self.value(input).data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); b * c * oh * ow];
        for p in 0..b * c {
            let src = &x[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for i in 0..oh {
                for j in 0..ow {
                    dst[i * ow + j] = src[(i / 2) * w + j / 2];
                }
            }
        }
        self.push(OP, Tensor::from_parts(with_spatial(shape.len(), b, c, oh, ow), out), Op::Upsample2 { input })
    }

    /// Mean over the spatial axes: `[B,C,H,W] -> [B,C]`, `[C,H,W] -> [C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        const OP: &str = "global_avg_pool";
        let shape = self.shape(input).to_vec();
        let (b, c, h, w) = spatial(&shape, OP)?;
        let plane = h * w;
        let inv = T::one() / T::from_f64(plane as f64);
        let out: Vec<T> = self
            .value(input)
            .data()
            .chunks(plane)
            .map(|p| p.iter().fold(T::zero(), |a, &v| a + v) * inv)
            .collect();
        let out_shape = if shape.len() == 3 { vec![c] } else { vec![b, c] };
        self.push(OP, Tensor::from_parts(out_shape, out), Op::GlobalAvgPool { input })
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        same_shape(op, self.shape(a), self.shape(b))?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_parts(self.shape(a).to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("add", a, b, |x, y| x + y)?;
        self.push("add", v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("sub", a, b, |x, y| x - y)?;
        self.push("sub", v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("mul", a, b, |x, y| x * y)?;
        self.push("mul", v, Op::Mul(a, b))
    }

    /// `scale · x + shift`, elementwise.
    pub fn affine(&mut self, input: Var, scale: f64, shift: f64) -> Result<Var> {
        let (s, t) = (T::from_f64(scale), T::from_f64(shift));
        let v = self.value(input).map(|x| s * x + t);
        self.push("affine", v, Op::Affine { input, scale: s })
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        self.affine(input, factor, 0.0)
    }

    pub fn ln(&mut self, input: Var) -> Result<Var> {
        let v = self.value(input).map(|x| x.ln());
        self.push("ln", v, Op::Ln { input })
    }

    pub fn abs(&mut self, input: Var) -> Result<Var> {
        let v = self.value(input).map(|x| x.abs());
        self.push("abs", v, Op::Abs { input })
    }

    /// `x^p` for non-negative `x`.
    pub fn powf(&mut self, input: Var, exponent: f64) -> Result<Var> {
        let p = T::from_f64(exponent);
        let v = self.value(input).map(|x| x.powf(p));
        self.push("powf", v, Op::Powf { input, exponent: p })
    }

    pub fn square(&mut self, input: Var) -> Result<Var> {
        let v = self.value(input).map(|x| x * x);
        self.push("square", v, Op::Square { input })
    }

    /// Clamps into `[lo, hi]`; the gradient is passed through inside the
    /// interval (bounds included) and blocked outside.
    pub fn clamp(&mut self, input: Var, lo: f64, hi: f64) -> Result<Var> {
        let (l, h) = (T::from_f64(lo), T::from_f64(hi));
        let v = self.value(input).map(|x| x.max(l).min(h));
        self.push("clamp", v, Op::Clamp { input, lo: l, hi: h })
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(input).sum());
        self.push("sum", v, Op::Sum { input })
    }

    pub fn mean(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        if x.numel() == 0 {
            return Err(Error::contract("mean", "mean of an empty tensor"));
        }
        let v = Tensor::scalar(x.sum() / T::from_f64(x.numel() as f64));
        self.push("mean", v, Op::Mean { input })
    }

    /// Forward differences between neighbouring pixels along one of the two
    /// trailing axes.
    pub fn spatial_diff(&mut self, input: Var, axis: DiffAxis) -> Result<Var> {
        const OP: &str = "spatial_diff";
        let shape = self.shape(input).to_vec();
        if shape.len() < 2 {
            return Err(Error::contract(OP, format!("need at least 2 axes, got {shape:?}")));
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let planes: usize = shape[..shape.len() - 2].iter().product();
        let x = self.value(input).data();
        let (oh, ow) = match axis {
            DiffAxis::Horizontal => (h, w.saturating_sub(1)),
            DiffAxis::Vertical => (h.saturating_sub(1), w),
        };
        let mut out = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let src = &x[p * h * w..(p + 1) * h * w];
            for i in 0..oh {
                for j in 0..ow {
                    let v = match axis {
                        DiffAxis::Horizontal => src[i * w + j + 1] - src[i * w + j],
                        DiffAxis::Vertical => src[(i + 1) * w + j] - src[i * w + j],
                    };
                    out.push(v);
                }
            }
        }
        let mut out_shape = shape;
        let n = out_shape.len();
        out_shape[n - 2] = oh;
        out_shape[n - 1] = ow;
        self.push(OP, Tensor::from_parts(out_shape, out), Op::SpatialDiff { input, axis })
    }

    /// Reverse sweep from the scalar `loss`.
    ///
    /// Returns one gradient per `wrt` parameter (zeros when the loss does not
    /// depend on it). No other parameter is visited.
    pub fn backward(&self, loss: Var, wrt: &[Var]) -> Result<Gradients<T>> {
        const OP: &str = "backward";
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(OP, format!("loss must be scalar, got shape {:?}", self.shape(loss))));
        }
        let mut needs = vec![false; loss.0 + 1];
        for v in wrt {
            match self.nodes.get(v.0).map(|n| &n.op) {
                Some(Op::Leaf { param: true }) => {
                    if v.0 <= loss.0 {
                        needs[v.0] = true;
                    }
                }
                _ => return Err(Error::contract(OP, format!("{v:?} is not a parameter leaf"))),
            }
        }
        for i in 0..=loss.0 {
            if !needs[i] && self.nodes[i].op.inputs().iter().any(|p| needs[p.0]) {
                needs[i] = true;
            }
        }

        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        if needs[loss.0] {
            grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), T::one()));
        }
        let mut result = BTreeMap::new();
        for i in (0..=loss.0).rev() {
            if !needs[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf { .. } = self.nodes[i].op {
                result.insert(Var(i), g);
                continue;
            }
            self.backward_node(i, g, &needs, &mut grads)?;
        }
        let mut out = Gradients { grads: BTreeMap::new() };
        for v in wrt {
            let g = result.remove(v).unwrap_or_else(|| Tensor::zeros(self.shape(*v).to_vec()));
            out.grads.insert(*v, g);
        }
        Ok(out)
    }

    fn backward_node(&self, i: usize, g: Tensor<T>, needs: &[bool], grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = &node.value;
        let want = |v: &Var| needs[v.0];
        let mut acc = |v: Var, t: Tensor<T>| accumulate(grads, v, t);
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Conv2d { input, kernel, geom, batch, out_ch } => {
                let (rows, n) = (geom.col_rows(), geom.col_cols());
                let x = self.value(*input).data();
                let kern = self.value(*kernel).data();
                let plane_in = geom.channels * geom.height * geom.width;
                let gy = g.data();
                let mut gk = want(kernel).then(|| vec![T::zero(); out_ch * rows]);
                let mut gx = want(input).then(|| vec![T::zero(); batch * plane_in]);
                let mut cols = if geom.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * n] };
                for b in 0..*batch {
                    let gyb = &gy[b * out_ch * n..(b + 1) * out_ch * n];
                    if let Some(gk) = gk.as_mut() {
                        let xb = &x[b * plane_in..(b + 1) * plane_in];
                        let src: &[T] = if geom.is_pointwise() {
                            xb
                        } else {
                            conv::im2col(geom, xb, &mut cols);
                            &cols
                        };
                        T::gemm(*out_ch, n, rows, T::one(), gyb, (n as isize, 1), src, (1, n as isize), T::one(), gk, rows as isize);
                    }
                    if let Some(gx) = gx.as_mut() {
                        let gxb = &mut gx[b * plane_in..(b + 1) * plane_in];
                        if geom.is_pointwise() {
                            T::gemm(rows, *out_ch, n, T::one(), kern, (1, rows as isize), gyb, (n as isize, 1), T::one(), gxb, n as isize);
                        } else {
                            T::gemm(rows, *out_ch, n, T::one(), kern, (1, rows as isize), gyb, (n as isize, 1), T::zero(), &mut cols, n as isize);
                            conv::col2im(geom, &cols, gxb);
                        }
                    }
                }
                if let Some(gk) = gk {
                    acc(*kernel, Tensor::from_parts(self.shape(*kernel).to_vec(), gk));
                }
                if let Some(gx) = gx {
                    acc(*input, Tensor::from_parts(self.shape(*input).to_vec(), gx));
                }
            }
            Op::AddBias { input, bias, axis } => {
                if want(bias) {
                    let shape = y.shape();
                    let ch = shape.get(*axis).copied().unwrap_or(1);
                    let inner: usize = shape.iter().skip(axis + 1).product();
                    let mut gb = vec![T::zero(); ch];
                    for (idx, &v) in g.data().iter().enumerate() {
                        let c = (idx / inner) % ch;
                        gb[c] = gb[c] + v;
                    }
                    acc(*bias, Tensor::from_parts(vec![ch], gb));
                }
                if want(input) {
                    acc(*input, g);
                }
            }
            Op::Dense { input, weights, bias } => {
                let xs = self.value(*input);
                let ws = self.value(*weights);
                let (m, n) = (ws.shape()[0], ws.shape()[1]);
                let b = xs.numel() / n;
                if want(bias) {
                    let mut gb = vec![T::zero(); m];
                    for row in g.data().chunks(m) {
                        for (a, &v) in gb.iter_mut().zip(row) {
                            *a = *a + v;
                        }
                    }
                    acc(*bias, Tensor::from_parts(vec![m], gb));
                }
                if want(weights) {
                    let mut gw = vec![T::zero(); m * n];
                    T::gemm(m, b, n, T::one(), g.data(), (1, m as isize), xs.data(), (n as isize, 1), T::zero(), &mut gw, n as isize);
                    acc(*weights, Tensor::from_parts(vec![m, n], gw));
                }
                if want(input) {
                    let mut gx = vec![T::zero(); b * n];
                    T::gemm(b, m, n, T::one(), g.data(), (m as isize, 1), ws.data(), (n as isize, 1), T::zero(), &mut gx, n as isize);
                    acc(*input, Tensor::from_parts(xs.shape().to_vec(), gx));
                }
            }
            Op::Act { input, kind } => {
                let x = self.value(*input).data();
                let yd = y.data();
                let gd = g.data();
                let out: Vec<T> = match kind {
                    Activation::Sigmoid => gd.iter().zip(yd).map(|(&g, &s)| g * s * (T::one() - s)).collect(),
                    Activation::Tanh => gd.iter().zip(yd).map(|(&g, &t)| g * (T::one() - t * t)).collect(),
                    Activation::Relu => gd.iter().zip(x).map(|(&g, &v)| if v > T::zero() { g } else { T::zero() }).collect(),
                    Activation::LeakyRelu(slope) => {
                        let s = T::from_f64(*slope);
                        gd.iter().zip(x).map(|(&g, &v)| if v > T::zero() { g } else { s * g }).collect()
                    }
                };
                acc(*input, Tensor::from_parts(y.shape().to_vec(), out));
            }
            Op::SoftmaxSites { input } => {
                let (b, k, h, w) = spatial(y.shape(), "softmax_sites")?;
                let plane = h * w;
                let (yd, gd) = (y.data(), g.data());
                let mut out = vec![T::zero(); yd.len()];
                for n in 0..b {
                    let base = n * k * plane;
                    for s in 0..plane {
                        let dot = (0..k).fold(T::zero(), |a, q| a + yd[base + q * plane + s] * gd[base + q * plane + s]);
                        for q in 0..k {
                            let idx = base + q * plane + s;
                            out[idx] = yd[idx] * (gd[idx] - dot);
                        }
                    }
                }
                acc(*input, Tensor::from_parts(y.shape().to_vec(), out));
            }
            Op::DynamicFilter { frame, filters, k } => {
                let (b, c, h, w) = spatial(y.shape(), "dynamic_filter")?;
                let kk = k * k;
                let x = self.value(*frame).data();
                let f = self.value(*filters).data();
                let mut gx = want(frame).then(|| vec![T::zero(); x.len()]);
                let mut gf = want(filters).then(|| vec![T::zero(); f.len()]);
                let (ps, pf) = (c * h * w, kk * h * w);
                for n in 0..b {
                    conv::dynamic_filter_backward(
                        &x[n * ps..(n + 1) * ps],
                        &f[n * pf..(n + 1) * pf],
                        &g.data()[n * ps..(n + 1) * ps],
                        c,
                        h,
                        w,
                        *k,
                        gx.as_mut().map(|v| &mut v[n * ps..(n + 1) * ps]),
                        gf.as_mut().map(|v| &mut v[n * pf..(n + 1) * pf]),
                    );
                }
                if let Some(gx) = gx {
                    acc(*frame, Tensor::from_parts(self.shape(*frame).to_vec(), gx));
                }
                if let Some(gf) = gf {
                    acc(*filters, Tensor::from_parts(self.shape(*filters).to_vec(), gf));
                }
            }
            Op::Concat { inputs, axis } => {
                let shape = y.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for p in inputs {
                    let len = self.shape(*p)[*axis] * inner;
                    if want(p) {
                        let mut part = Vec::with_capacity(outer * len);
                        for o in 0..outer {
                            part.extend_from_slice(&g.data()[o * total + offset..o * total + offset + len]);
                        }
                        acc(*p, Tensor::from_parts(self.shape(*p).to_vec(), part));
                    }
                    offset += len;
                }
            }
            Op::Reshape { input } => {
                acc(*input, g.reshape(self.shape(*input).to_vec())?);
            }
            Op::Upsample2 { input } => {
                let in_shape = self.shape(*input).to_vec();
                let (b, c, h, w) = spatial(&in_shape, "upsample2")?;
                let (oh, ow) = (2 * h, 2 * w);
                let mut out = vec![T::zero(); b * c * h * w];
                for p in 0..b * c {
                    let src = &g.data()[p * oh * ow..(p + 1) * oh * ow];
                    let dst = &mut out[p * h * w..(p + 1) * h * w];
                    for i in 0..oh {
                        for j in 0..ow {
                            let d = &mut dst[(i / 2) * w + j / 2];
                            *d = *d + src[i * ow + j];
                        }
                    }
                }
                acc(*input, Tensor::from_parts(in_shape, out));
            }
            Op::GlobalAvgPool { input } => {
                let in_shape = self.shape(*input).to_vec();
                let (_, _, h, w) = spatial(&in_shape, "global_avg_pool")?;
                let plane = h * w;
                let inv = T::one() / T::from_f64(plane as f64);
                let mut out = Vec::with_capacity(g.numel() * plane);
                for &v in g.data() {
                    out.extend(std::iter::repeat_n(v * inv, plane));
                }
                acc(*input, Tensor::from_parts(in_shape, out));
            }
            Op::Add(a, b) => {
                if want(b) {
                    acc(*b, g.clone());
                }
                if want(a) {
                    acc(*a, g);
                }
            }
            Op::Sub(a, b) => {
                if want(b) {
                    acc(*b, g.map(|v| -v));
                }
                if want(a) {
                    acc(*a, g);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if want(a) {
                    let d = g.data().iter().zip(bv.data()).map(|(&g, &x)| g * x).collect();
                    acc(*a, Tensor::from_parts(av.shape().to_vec(), d));
                }
                if want(b) {
                    let d = g.data().iter().zip(av.data()).map(|(&g, &x)| g * x).collect();
                    acc(*b, Tensor::from_parts(bv.shape().to_vec(), d));
                }
            }
            Op::Affine { input, scale } => {
                let s = *scale;
                acc(*input, g.map(|v| v * s));
            }
            Op::Ln { input } => {
                let x = self.value(*input).data();
                let d = g.data().iter().zip(x).map(|(&g, &x)| g / x).collect();
                acc(*input, Tensor::from_parts(y.shape().to_vec(), d));
            }
            Op::Abs { input } => {
                let x = self.value(*input).data();
                let d = g
                    .data()
                    .iter()
                    .zip(x)
                    .map(|(&g, &x)| if x > T::zero() { g } else if x < T::zero() { -g } else { T::zero() })
                    .collect();
                acc(*input, Tensor::from_parts(y.shape().to_vec(), d));
            }
            Op::Powf { input, exponent } => {
                let p = *exponent;
                let x = self.value(*input).data();
                let d = g
                    .data()
                    .iter()
                    .zip(x)
                    .map(|(&g, &x)| if p == T::one() { g } else { g * p * x.powf(p - T::one()) })
                    .collect();
                acc(*input, Tensor::from_parts(y.shape().to_vec(), d));
            }
            Op::Square { input } => {
                let x = self.value(*input).data();
                let two = T::from_f64(2.0);
                let d = g.data().iter().zip(x).map(|(&g, &x)| two * g * x).collect();
                acc(*input, Tensor::from_parts(y.shape().to_vec(), d));
            }
            Op::Clamp { input, lo, hi } => {
                let x = self.value(*input).data();
                let d = g
                    .data()
                    .iter()
                    .zip(x)
                    .map(|(&g, &x)| if x >= *lo && x <= *hi { g } else { T::zero() })
                    .collect();
                acc(*input, Tensor::from_parts(y.shape().to_vec(), d));
            }
            Op::Sum { input } => {
                acc(*input, Tensor::full(self.shape(*input).to_vec(), g.item()));
            }
            Op::Mean { input } => {
                let n = T::from_f64(self.value(*input).numel() as f64);
                acc(*input, Tensor::full(self.shape(*input).to_vec(), g.item() / n));
            }
            Op::SpatialDiff { input, axis } => {
                let in_shape = self.shape(*input).to_vec();
                let r = in_shape.len();
                let (h, w) = (in_shape[r - 2], in_shape[r - 1]);
                let (oh, ow) = (y.shape()[r - 2], y.shape()[r - 1]);
                let planes: usize = in_shape[..r - 2].iter().product();
                let mut out = vec![T::zero(); planes * h * w];
                for p in 0..planes {
                    let src = &g.data()[p * oh * ow..(p + 1) * oh * ow];
                    let dst = &mut out[p * h * w..(p + 1) * h * w];
                    for i in 0..oh {
                        for j in 0..ow {
                            let v = src[i * ow + j];
                            let (hi, lo) = match axis {
                                DiffAxis::Horizontal => (i * w + j + 1, i * w + j),
                                DiffAxis::Vertical => ((i + 1) * w + j, i * w + j),
                            };
                            dst[hi] = dst[hi] + v;
                            dst[lo] = dst[lo] - v;
                        }
                    }
                }
                acc(*input, Tensor::from_parts(in_shape, out));
            }
        }
        Ok(())
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, t: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&t),
        slot => *slot = Some(t),
    }
}

/// Gradients returned by [`Tape::backward`], keyed by parameter handle.
#[derive(Debug)]
pub struct Gradients<T: Real = f32> {
    grads: BTreeMap<Var, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(&v)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.remove(&v)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
