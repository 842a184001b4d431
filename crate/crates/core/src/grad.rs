//! Minimal tape-based reverse-mode autodiff over 4-D `f32` tensors.
//!
//! A [`Graph`] records nodes in creation order, which is already a topological
//! order, so [`Graph::backward`] is a single reverse sweep. Accumulation order
//! is fixed everywhere (per-sample partials are reduced sequentially), so two
//! identical runs produce bit-identical gradients.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Dense tensor of shape `[batch, channels, height, width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: [usize; 4], value: f32) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(v: f32) -> Self {
        Self {
            shape: [1, 1, 1, 1],
            data: vec![v],
        }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f32 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    #[inline]
    fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn sample(&self, n: usize) -> &[f32] {
        let l = self.sample_len();
        &self.data[n * l..(n + 1) * l]
    }

    /// Stacks per-sample tensors (each with batch 1) along the batch axis.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| Error::Empty("nothing to stack".into()))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::with_capacity(items.len() * c * h * w);
        for t in items {
            if t.shape != [1, c, h, w] {
                return Err(Error::Shape(format!(
                    "cannot stack {:?} with {:?}",
                    t.shape, first.shape
                )));
            }
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: [items.len(), c, h, w],
            data,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    },
    LeakyRelu {
        x: Var,
        slope: f32,
    },
    Relu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Tanh {
        x: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        k: f32,
    },
    L1 {
        pred: Var,
        target: Var,
    },
    BceWithLogits {
        logits: Var,
        target: Var,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Sigmoid outputs are kept inside the open unit interval.
/// Per-sample (input gradient, weight gradient) pieces of a convolution backward pass.
type ConvPartials = Vec<(Option<Vec<f32>>, Option<Vec<f32>>)>;

const SIGMOID_FLOOR: f32 = 1e-7;
const SIGMOID_CEIL: f32 = 1.0 - 6e-8;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

/// Geometry of a strided, zero-padded square-kernel correlation.
#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    channels: usize,
    in_h: usize,
    in_w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

fn im2col(x: &[f32], g: &ConvGeom, cols: &mut [f32]) {
    let n = g.cols();
    for c in 0..g.channels {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.in_h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &x[(c * g.in_h + iy as usize) * g.in_w..][..g.in_w];
                    for (ox, out) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *out = if ix < 0 || ix >= g.in_w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f32], g: &ConvGeom, x: &mut [f32]) {
    let n = g.cols();
    for c in 0..g.channels {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst = &mut x[(c * g.in_h + iy as usize) * g.in_w..][..g.in_w];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `C (m x n) = op(A) (m x k) * op(B) (k x n) [+ C]`, all row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f32], a_t: bool, b: &[f32], b_t: bool, c: &mut [f32], accumulate: bool) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths cover the strided extents computed above.
    unsafe {
        matrixmultiply::sgemm(
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

fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    (padded >= k && stride > 0).then(|| (padded - k) / stride + 1)
}

fn sigmoid(x: f32) -> f32 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(SIGMOID_FLOOR, SIGMOID_CEIL)
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Trainable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copy of `v`'s value as a constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Cross-correlation. `weight` is `[out, in, k, k]`, `bias` is `[1, out, 1, 1]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(input).shape;
        let [o, wc, kh, kw] = self.value(weight).shape;
        if wc != c || kh != kw {
            return Err(Error::Shape(format!(
                "conv2d: input has {c} channels, weight is {:?} (needs [out, {c}, k, k])",
                self.value(weight).shape
            )));
        }
        if self.value(bias).shape != [1, o, 1, 1] {
            return Err(Error::Shape(format!(
                "conv2d: bias {:?} does not match {o} output channels",
                self.value(bias).shape
            )));
        }
        let (Some(oh), Some(ow)) = (conv_out(h, kh, stride, pad), conv_out(w, kw, stride, pad)) else {
            return Err(Error::Shape(format!(
                "conv2d: kernel {kh}x{kw} does not fit {h}x{w} input with padding {pad}"
            )));
        };
        let g = ConvGeom {
            channels: c,
            in_h: h,
            in_w: w,
            k: kh,
            stride,
            pad,
            out_h: oh,
            out_w: ow,
        };
        let x = self.value(input);
        let wt = self.value(weight).data();
        let b = self.value(bias).data();
        let out_len = o * oh * ow;
        let mut out = vec![0.0f32; n * out_len];
        out.par_chunks_mut(out_len).enumerate().for_each(|(s, dst)| {
            let mut cols = vec![0.0; g.rows() * g.cols()];
            im2col(x.sample(s), &g, &mut cols);
            for (oc, chunk) in dst.chunks_mut(oh * ow).enumerate() {
                chunk.fill(b[oc]);
            }
            gemm(o, g.rows(), g.cols(), wt, false, &cols, false, dst, true);
        });
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(
            Tensor {
                shape: [n, o, oh, ow],
                data: out,
            },
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
            rg,
        ))
    }

    /// Transposed convolution (gradient of [`Graph::conv2d`] w.r.t. its input).
    /// `weight` is `[in, out, k, k]`; output size is `(h - 1) * stride - 2 * pad + k`.
    pub fn conv2d_transpose(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(input).shape;
        let [wc, o, kh, kw] = self.value(weight).shape;
        if wc != c || kh != kw {
            return Err(Error::Shape(format!(
                "conv2d_transpose: input has {c} channels, weight is {:?} (needs [{c}, out, k, k])",
                self.value(weight).shape
            )));
        }
        if self.value(bias).shape != [1, o, 1, 1] {
            return Err(Error::Shape(format!(
                "conv2d_transpose: bias {:?} does not match {o} output channels",
                self.value(bias).shape
            )));
        }
        if stride == 0 || (h - 1) * stride + kh < 2 * pad + 1 || (w - 1) * stride + kw < 2 * pad + 1 {
            return Err(Error::Shape(format!(
                "conv2d_transpose: {h}x{w} input with k={kh}, stride={stride}, pad={pad} has no output"
            )));
        }
        let (oh, ow) = ((h - 1) * stride + kh - 2 * pad, (w - 1) * stride + kw - 2 * pad);
        let g = ConvGeom {
            channels: o,
            in_h: oh,
            in_w: ow,
            k: kh,
            stride,
            pad,
            out_h: h,
            out_w: w,
        };
        let x = self.value(input);
        let wt = self.value(weight).data();
        let b = self.value(bias).data();
        let out_len = o * oh * ow;
        let mut out = vec![0.0f32; n * out_len];
        out.par_chunks_mut(out_len).enumerate().for_each(|(s, dst)| {
            let mut cols = vec![0.0; g.rows() * g.cols()];
            gemm(g.rows(), c, g.cols(), wt, true, x.sample(s), false, &mut cols, false);
            for (oc, chunk) in dst.chunks_mut(oh * ow).enumerate() {
                chunk.fill(b[oc]);
            }
            col2im(&cols, &g, dst);
        });
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(
            Tensor {
                shape: [n, o, oh, ow],
                data: out,
            },
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
            rg,
        ))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f32) -> f32) -> Var {
        let v = self.value(x);
        let out = Tensor {
            shape: v.shape,
            data: v.data.iter().map(|&a| f(a)).collect(),
        };
        let rg = self.rg(x);
        self.push(out, op, rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Var {
        self.unary(x, Op::LeakyRelu { x, slope }, |a| if a > 0.0 { a } else { slope * a })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu { x }, |a| a.max(0.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid { x }, sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh { x }, f32::tanh)
    }

    /// Channel-wise concatenation.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [na, ca, ha, wa] = self.value(a).shape;
        let [nb, cb, hb, wb] = self.value(b).shape;
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(Error::Shape(format!(
                "concat: {:?} and {:?} differ outside the channel axis",
                self.value(a).shape,
                self.value(b).shape
            )));
        }
        let (la, lb) = (ca * ha * wa, cb * hb * wb);
        let mut data = Vec::with_capacity(na * (la + lb));
        for s in 0..na {
            data.extend_from_slice(self.value(a).sample(s));
            data.extend_from_slice(self.value(b).sample(s));
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor {
                shape: [na, ca + cb, ha, wa],
                data,
            },
            Op::Concat { a, b },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape != self.value(b).shape {
            return Err(Error::Shape(format!(
                "add: {:?} vs {:?}",
                self.value(a).shape,
                self.value(b).shape
            )));
        }
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor { shape, data }, Op::Add { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, k: f32) -> Var {
        self.unary(x, Op::Scale { x, k }, |a| a * k)
    }

    fn check_same(&self, what: &str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape != self.value(b).shape {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape,
                self.value(b).shape
            )));
        }
        Ok(())
    }

    /// Mean absolute error.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.check_same("l1_loss", pred, target)?;
        let (p, t) = (self.value(pred), self.value(target));
        let sum: f64 = p.data.iter().zip(&t.data).map(|(a, b)| f64::from((a - b).abs())).sum();
        let loss = (sum / p.data.len() as f64) as f32;
        let rg = self.rg(pred);
        Ok(self.push(Tensor::scalar(loss), Op::L1 { pred, target }, rg))
    }

    /// Mean binary cross-entropy on logits, `max(x, 0) - x t + ln(1 + e^{-|x|})`.
    pub fn bce_with_logits(&mut self, logits: Var, target: Var) -> Result<Var> {
        self.check_same("bce_with_logits", logits, target)?;
        let (x, t) = (self.value(logits), self.value(target));
        let sum: f64 = x
            .data
            .iter()
            .zip(&t.data)
            .map(|(&x, &t)| {
                let x = f64::from(x);
                x.max(0.0) - x * f64::from(t) + (-x.abs()).exp().ln_1p()
            })
            .sum();
        let loss = (sum / x.data.len() as f64) as f32;
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(loss), Op::BceWithLogits { logits, target }, rg))
    }

    fn accumulate(&mut self, v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.data.iter_mut().zip(&g.data).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    /// Backpropagates from a one-element `loss` (seed gradient 1).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape
            )));
        }
        self.backward_with(loss, Tensor::scalar(1.0))
    }

    /// Backpropagates an arbitrary upstream gradient from `out`.
    pub fn backward_with(&mut self, out: Var, seed: Tensor) -> Result<()> {
        if seed.shape != self.value(out).shape {
            return Err(Error::Shape(format!(
                "seed gradient {:?} does not match {:?}",
                seed.shape,
                self.value(out).shape
            )));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        self.grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if !self.nodes[i].requires_grad {
                self.grads[i] = Some(g);
                continue;
            }
            self.backward_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, g: &Tensor) {
        match self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => self.backward_conv(input, weight, bias, stride, pad, g),
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => self.backward_conv_transpose(input, weight, bias, stride, pad, g),
            Op::LeakyRelu { x, slope } => {
                let d = self.map_grad(x, g, |a, _| if a > 0.0 { 1.0 } else { slope });
                self.accumulate(x, d);
            }
            Op::Relu { x } => {
                let d = self.map_grad(x, g, |a, _| if a > 0.0 { 1.0 } else { 0.0 });
                self.accumulate(x, d);
            }
            Op::Sigmoid { x } => {
                let y = self.nodes[i].value.data.clone();
                let mut d = g.clone();
                d.data.iter_mut().zip(&y).for_each(|(gi, &s)| *gi *= s * (1.0 - s));
                self.accumulate(x, d);
            }
            Op::Tanh { x } => {
                let y = self.nodes[i].value.data.clone();
                let mut d = g.clone();
                d.data.iter_mut().zip(&y).for_each(|(gi, &t)| *gi *= 1.0 - t * t);
                self.accumulate(x, d);
            }
            Op::Concat { a, b } => {
                let sa = self.value(a).shape;
                let sb = self.value(b).shape;
                let (la, lb) = (sa[1] * sa[2] * sa[3], sb[1] * sb[2] * sb[3]);
                let mut ga = Vec::with_capacity(sa[0] * la);
                let mut gb = Vec::with_capacity(sb[0] * lb);
                for chunk in g.data.chunks(la + lb) {
                    ga.extend_from_slice(&chunk[..la]);
                    gb.extend_from_slice(&chunk[la..]);
                }
                self.accumulate(a, Tensor { shape: sa, data: ga });
                self.accumulate(b, Tensor { shape: sb, data: gb });
            }
            Op::Add { a, b } => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.clone());
            }
            Op::Scale { x, k } => {
                let mut d = g.clone();
                d.data.iter_mut().for_each(|v| *v *= k);
                self.accumulate(x, d);
            }
            Op::L1 { pred, target } => {
                let up = g.item();
                let (p, t) = (self.value(pred), self.value(target));
                let n = p.len() as f32;
                let data = p
                    .data
                    .iter()
                    .zip(&t.data)
                    .map(|(a, b)| {
                        let s = if a > b {
                            1.0
                        } else if a < b {
                            -1.0
                        } else {
                            0.0
                        };
                        up * s / n
                    })
                    .collect();
                let shape = p.shape;
                self.accumulate(pred, Tensor { shape, data });
            }
            Op::BceWithLogits { logits, target } => {
                let up = g.item();
                let (x, t) = (self.value(logits), self.value(target));
                let n = x.len() as f32;
                let data = x
                    .data
                    .iter()
                    .zip(&t.data)
                    .map(|(&x, &t)| {
                        let s = if x >= 0.0 {
                            1.0 / (1.0 + (-x).exp())
                        } else {
                            let e = x.exp();
                            e / (1.0 + e)
                        };
                        up * (s - t) / n
                    })
                    .collect();
                let shape = x.shape;
                self.accumulate(logits, Tensor { shape, data });
            }
        }
    }

    fn map_grad(&self, x: Var, g: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
        let xv = &self.value(x).data;
        Tensor {
            shape: g.shape,
            data: g.data.iter().zip(xv).map(|(&gi, &a)| gi * f(a, gi)).collect(),
        }
    }

    fn bias_grad(g: &Tensor) -> Tensor {
        let [n, o, h, w] = g.shape;
        let mut db = vec![0.0f32; o];
        for s in 0..n {
            for (oc, d) in db.iter_mut().enumerate() {
                *d += g.data[(s * o + oc) * h * w..][..h * w].iter().sum::<f32>();
            }
        }
        Tensor {
            shape: [1, o, 1, 1],
            data: db,
        }
    }

    fn backward_conv(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize, g: &Tensor) {
        let [n, c, h, w] = self.value(input).shape;
        let wshape = self.value(weight).shape;
        let [o, _, k, _] = wshape;
        let [_, _, oh, ow] = g.shape;
        let geom = ConvGeom {
            channels: c,
            in_h: h,
            in_w: w,
            k,
            stride,
            pad,
            out_h: oh,
            out_w: ow,
        };
        let want_x = self.rg(input);
        let want_w = self.rg(weight);
        let x = self.value(input);
        let wt = self.value(weight).data();
        let out_len = o * oh * ow;
        let partials: ConvPartials = (0..n)
            .into_par_iter()
            .map(|s| {
                let gs = &g.data[s * out_len..(s + 1) * out_len];
                let dw = want_w.then(|| {
                    let mut cols = vec![0.0; geom.rows() * geom.cols()];
                    im2col(x.sample(s), &geom, &mut cols);
                    let mut dw = vec![0.0; o * geom.rows()];
                    gemm(o, geom.cols(), geom.rows(), gs, false, &cols, true, &mut dw, false);
                    dw
                });
                let dx = want_x.then(|| {
                    let mut dcols = vec![0.0; geom.rows() * geom.cols()];
                    gemm(geom.rows(), o, geom.cols(), wt, true, gs, false, &mut dcols, false);
                    let mut dx = vec![0.0; c * h * w];
                    col2im(&dcols, &geom, &mut dx);
                    dx
                });
                (dx, dw)
            })
            .collect();
        self.finish_conv_backward(input, weight, bias, wshape, [n, c, h, w], partials, g);
    }

    fn backward_conv_transpose(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize, g: &Tensor) {
        let [n, c, h, w] = self.value(input).shape;
        let wshape = self.value(weight).shape;
        let [_, o, k, _] = wshape;
        let [_, _, oh, ow] = g.shape;
        let geom = ConvGeom {
            channels: o,
            in_h: oh,
            in_w: ow,
            k,
            stride,
            pad,
            out_h: h,
            out_w: w,
        };
        let want_x = self.rg(input);
        let want_w = self.rg(weight);
        let x = self.value(input);
        let wt = self.value(weight).data();
        let out_len = o * oh * ow;
        let partials: ConvPartials = (0..n)
            .into_par_iter()
            .map(|s| {
                let gs = &g.data[s * out_len..(s + 1) * out_len];
                let mut dcols = vec![0.0; geom.rows() * geom.cols()];
                im2col(gs, &geom, &mut dcols);
                let dx = want_x.then(|| {
                    let mut dx = vec![0.0; c * h * w];
                    gemm(c, geom.rows(), geom.cols(), wt, false, &dcols, false, &mut dx, false);
                    dx
                });
                let dw = want_w.then(|| {
                    let mut dw = vec![0.0; c * geom.rows()];
                    gemm(
                        c,
                        geom.cols(),
                        geom.rows(),
                        x.sample(s),
                        false,
                        &dcols,
                        true,
                        &mut dw,
                        false,
                    );
                    dw
                });
                (dx, dw)
            })
            .collect();
        self.finish_conv_backward(input, weight, bias, wshape, [n, c, h, w], partials, g);
    }

    #[allow(clippy::too_many_arguments)]
    fn finish_conv_backward(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        wshape: [usize; 4],
        xshape: [usize; 4],
        partials: ConvPartials,
        g: &Tensor,
    ) {
        let mut dx_all = self.rg(input).then(|| Vec::with_capacity(xshape.iter().product()));
        let mut dw_sum: Option<Vec<f32>> = None;
        for (dx, dw) in partials {
            if let (Some(all), Some(dx)) = (dx_all.as_mut(), dx) {
                all.extend(dx);
            }
            if let Some(dw) = dw {
                match &mut dw_sum {
                    Some(acc) => acc.iter_mut().zip(&dw).for_each(|(a, b)| *a += b),
                    None => dw_sum = Some(dw),
                }
            }
        }
        if let Some(dx) = dx_all {
            self.accumulate(
                input,
                Tensor {
                    shape: xshape,
                    data: dx,
                },
            );
        }
        if let Some(dw) = dw_sum {
            self.accumulate(
                weight,
                Tensor {
                    shape: wshape,
                    data: dw,
                },
            );
        }
        if self.rg(bias) {
            self.accumulate(bias, Self::bias_grad(g));
        }
    }
}

/// Adam hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub step: u32,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f32], grads: &[f32], state: &mut AdamState, hp: &AdamParams) {
    debug_assert_eq!(params.len(), grads.len());
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
        *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
        let mhat = *m / c1;
        let vhat = *v / c2;
        *p -= hp.lr * mhat / (vhat.sqrt() + hp.eps);
    }
}
