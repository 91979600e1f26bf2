//! Define-by-run reverse-mode differentiation.
//!
//! Every op appends a node whose parents already exist, so node order is a
//! topological order and the backward pass is a single reverse sweep.
//! Gradients are accumulated in node-index order, which keeps repeated
//! backward passes bit-identical.

use crate::error::{Error, Result};
use crate::numerics::{scalar, Tensor};
use crate::scene::Camera;
use crate::scene::Z_NEAR;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[cfg(test)]
pub(crate) fn var_at(index: usize) -> Var {
    Var(index)
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Sigmoid(Var),
    Relu(Var),
    Reshape(Var),
    Conv2d { input: Var, weight: Var, bias: Var, stride: usize, pad: usize },
    ResizeNearest(Var),
    AdaptiveAvgPool(Var),
    Linear { input: Var, weight: Var, bias: Var },
    ConcatCols(Vec<Var>),
    PositionalEncoding { input: Var, bands: usize },
    BilinearSample { features: Var, points: Var, camera: Box<Camera<f64>> },
    Normalize { input: Var, scale: f64 },
    InfoNce { query: Var, keys: Var, positive: Vec<bool>, tau: f64 },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::Reshape(_) => "reshape",
            Op::Conv2d { .. } => "conv2d",
            Op::ResizeNearest(_) => "resize_nearest",
            Op::AdaptiveAvgPool(_) => "adaptive_avg_pool",
            Op::Linear { .. } => "linear",
            Op::ConcatCols(_) => "concat_cols",
            Op::PositionalEncoding { .. } => "positional_encoding",
            Op::BilinearSample { .. } => "bilinear_sample",
            Op::Normalize { .. } => "normalize",
            Op::InfoNce { .. } => "info_nce",
        }
    }

    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Sum(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::Reshape(a)
            | Op::ResizeNearest(a)
            | Op::AdaptiveAvgPool(a) => vec![*a],
            Op::Conv2d { input, weight, bias, .. } | Op::Linear { input, weight, bias } => vec![*input, *weight, *bias],
            Op::ConcatCols(parts) => parts.clone(),
            Op::PositionalEncoding { input, .. } | Op::Normalize { input, .. } => vec![*input],
            Op::BilinearSample { features, points, .. } => vec![*features, *points],
            Op::InfoNce { query, keys, .. } => vec![*query, *keys],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    first_non_finite: Option<usize>,
}

/// Gradients of a backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of `var`, or `None` when it does not require grad or the
    /// loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

fn dims3(shape: &[usize]) -> (usize, usize, usize) {
    assert_eq!(shape.len(), 3, "expected [C,H,W], got {shape:?}");
    (shape[0], shape[1], shape[2])
}

fn dims2(shape: &[usize]) -> (usize, usize) {
    assert_eq!(shape.len(), 2, "expected [N,K], got {shape:?}");
    (shape[0], shape[1])
}

/// Output positions `o` for which `o * stride + offset` lands in `[0, len)`.
fn valid_range(out_len: usize, stride: usize, offset: isize, len: usize) -> std::ops::Range<usize> {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
    let hi_excl = if (len as isize) - offset <= 0 { 0 } else { ((len as isize - offset) + s - 1) / s };
    let lo = lo.max(0) as usize;
    let hi = (hi_excl.max(0) as usize).min(out_len);
    lo..hi.max(lo)
}

fn pool_bounds(i: usize, input: usize, output: usize) -> (usize, usize) {
    let start = i * input / output;
    let end = ((i + 1) * input).div_ceil(output);
    (start, end)
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let parents = op.parents();
        let idx = self.nodes.len();
        debug_assert!(parents.iter().all(|p| p.0 < idx), "tape order violated");
        let requires_grad = match op {
            Op::Leaf => value.requires_grad(),
            Op::InfoNce { query, .. } => self.nodes[query.0].requires_grad,
            _ => parents.iter().any(|p| self.nodes[p.0].requires_grad),
        };
        if self.first_non_finite.is_none() && !value.is_finite() {
            self.first_non_finite = Some(idx);
        }
        self.nodes.push(Node { value, op, requires_grad });
        Var(idx)
    }

    /// Records a leaf. Trainability follows [`Tensor::requires_grad`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records a leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value.with_requires_grad(false), Op::Leaf)
    }

    /// Errors if any recorded value is NaN or infinite.
    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite {
            None => Ok(()),
            Some(idx) => Err(Error::NonFinite { term: format!("tape node {idx} ({})", self.nodes[idx].op.name()) }),
        }
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "elementwise shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        let shape = va.shape().to_vec();
        self.push(Tensor::new(shape, data).expect("same shape"), op)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|x| f(*x)).collect();
        let shape = va.shape().to_vec();
        self.push(Tensor::new(shape, data).expect("same shape"), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x * k, Op::Scale(a, k))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, scalar::sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Var {
        let t = self.value(a).reshaped(shape.into());
        self.push(t, Op::Reshape(a))
    }

    /// 2-D convolution of a `[C,H,W]` input with `[O,C,k,k]` weights and `[O]`
    /// bias, zero padding `pad` on every side.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Var {
        let (c, h, w) = dims3(self.value(input).shape());
        let ws = self.value(weight).shape().to_vec();
        assert_eq!(ws.len(), 4, "conv weight must be [O,C,k,k]");
        let (o, k) = (ws[0], ws[2]);
        assert_eq!(ws[1], c, "conv input channels");
        assert_eq!(ws[3], k, "conv kernel must be square");
        assert_eq!(self.value(bias).len(), o, "conv bias");
        assert!(h + 2 * pad >= k && w + 2 * pad >= k, "conv kernel larger than input");
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let b = self.value(bias).data();
        let mut out = vec![0.0; o * ho * wo];
        for oc in 0..o {
            let plane = &mut out[oc * ho * wo..(oc + 1) * ho * wo];
            plane.iter_mut().for_each(|v| *v = b[oc]);
            for ic in 0..c {
                let xin = &x[ic * h * w..(ic + 1) * h * w];
                for ky in 0..k {
                    let ys = valid_range(ho, stride, ky as isize - pad as isize, h);
                    for kx in 0..k {
                        let wv = wt[((oc * c + ic) * k + ky) * k + kx];
                        let xs = valid_range(wo, stride, kx as isize - pad as isize, w);
                        for oy in ys.clone() {
                            let iy = oy * stride + ky - pad;
                            let row_in = &xin[iy * w..(iy + 1) * w];
                            let row_out = &mut plane[oy * wo..(oy + 1) * wo];
                            for ox in xs.clone() {
                                row_out[ox] += wv * row_in[ox * stride + kx - pad];
                            }
                        }
                    }
                }
            }
        }
        self.push(Tensor::new([o, ho, wo], out).expect("conv shape"), Op::Conv2d { input, weight, bias, stride, pad })
    }

    /// Nearest-neighbour resize of `[C,H,W]` to `[C,out_h,out_w]`.
    pub fn resize_nearest(&mut self, input: Var, out_h: usize, out_w: usize) -> Var {
        let (c, h, w) = dims3(self.value(input).shape());
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(c * out_h * out_w);
        for ch in 0..c {
            for y in 0..out_h {
                let sy = y * h / out_h;
                for xo in 0..out_w {
                    let sx = xo * w / out_w;
                    out.push(x[(ch * h + sy) * w + sx]);
                }
            }
        }
        self.push(Tensor::new([c, out_h, out_w], out).expect("resize shape"), Op::ResizeNearest(input))
    }

    /// Adaptive average pooling of `[C,H,W]` to `[C,out_h,out_w]`.
    pub fn adaptive_avg_pool(&mut self, input: Var, out_h: usize, out_w: usize) -> Var {
        let (c, h, w) = dims3(self.value(input).shape());
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(c * out_h * out_w);
        for ch in 0..c {
            for i in 0..out_h {
                let (y0, y1) = pool_bounds(i, h, out_h);
                for j in 0..out_w {
                    let (x0, x1) = pool_bounds(j, w, out_w);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        for xi in x0..x1 {
                            acc += x[(ch * h + y) * w + xi];
                        }
                    }
                    out.push(acc / ((y1 - y0) * (x1 - x0)) as f64);
                }
            }
        }
        self.push(Tensor::new([c, out_h, out_w], out).expect("pool shape"), Op::AdaptiveAvgPool(input))
    }

    /// `x[N,I] * w[I,O] + b[O]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Var {
        let (n, i) = dims2(self.value(input).shape());
        let (wi, o) = dims2(self.value(weight).shape());
        assert_eq!(i, wi, "linear inner dimension");
        assert_eq!(self.value(bias).len(), o, "linear bias");
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let b = self.value(bias).data();
        let mut out = vec![0.0; n * o];
        for r in 0..n {
            let row = &mut out[r * o..(r + 1) * o];
            row.copy_from_slice(b);
            for k in 0..i {
                let xv = x[r * i + k];
                if xv == 0.0 {
                    continue;
                }
                let wrow = &w[k * o..(k + 1) * o];
                for (dst, wv) in row.iter_mut().zip(wrow) {
                    *dst += xv * wv;
                }
            }
        }
        self.push(Tensor::new([n, o], out).expect("linear shape"), Op::Linear { input, weight, bias })
    }

    /// Concatenates `[N,k_i]` matrices along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let n = dims2(self.value(parts[0]).shape()).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|p| {
                let (pn, k) = dims2(self.value(*p).shape());
                assert_eq!(pn, n, "concat row mismatch");
                k
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for (p, &k) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*p).data()[r * k..(r + 1) * k]);
            }
        }
        self.push(Tensor::new([n, total], out).expect("concat shape"), Op::ConcatCols(parts.to_vec()))
    }

    /// Sinusoidal encoding of `[N,3]` positions: the raw coordinates followed
    /// by `sin(2^l pi x)`, `cos(2^l pi x)` for `l` in `0..bands`.
    pub fn positional_encoding(&mut self, input: Var, bands: usize) -> Var {
        let (n, d) = dims2(self.value(input).shape());
        let width = d * (1 + 2 * bands);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(n * width);
        for r in 0..n {
            let row = &x[r * d..(r + 1) * d];
            out.extend_from_slice(row);
            for l in 0..bands {
                let f = std::f64::consts::PI * (1u64 << l) as f64;
                out.extend(row.iter().map(|v| (f * v).sin()));
                out.extend(row.iter().map(|v| (f * v).cos()));
            }
        }
        self.push(Tensor::new([n, width], out).expect("encoding shape"), Op::PositionalEncoding { input, bands })
    }

    /// Projects `[N,3]` world points through `camera` and bilinearly samples a
    /// `[C,H,W]` feature map at the projections (pixel centers at integer
    /// coordinates, zero padding outside the map). Points at or behind the
    /// near plane sample zeros.
    pub fn bilinear_sample(&mut self, features: Var, points: Var, camera: &Camera<f64>) -> Var {
        let (c, h, w) = dims3(self.value(features).shape());
        let (n, d) = dims2(self.value(points).shape());
        assert_eq!(d, 3, "points must be [N,3]");
        let f = self.value(features).data();
        let p = self.value(points).data();
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            let Some(taps) = sample_taps(camera, [p[3 * i], p[3 * i + 1], p[3 * i + 2]], h, w) else {
                continue;
            };
            for tap in taps.iter().flatten() {
                for ch in 0..c {
                    out[i * c + ch] += tap.weight * f[(ch * h + tap.y) * w + tap.x];
                }
            }
        }
        self.push(
            Tensor::new([n, c], out).expect("sample shape"),
            Op::BilinearSample { features, points, camera: Box::new(camera.clone()) },
        )
    }

    /// `scale * x / ||x||` over all elements.
    pub fn normalize(&mut self, input: Var, scale: f64) -> Var {
        let v = self.value(input);
        let norm = v.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        let shape = v.shape().to_vec();
        let data = v.data().iter().map(|x| scale * x / norm).collect();
        self.push(Tensor::new(shape, data).expect("same shape"), Op::Normalize { input, scale })
    }

    /// Contrastive log-ratio `-log(sum_pos exp(s_k) / sum_all exp(s_k))` with
    /// `s_k = (q / ||q||) . key_k / tau`. `keys` is a `[K,n]` matrix of unit
    /// vectors that never receives gradient.
    pub fn info_nce(&mut self, query: Var, keys: Var, positive: Vec<bool>, tau: f64) -> Var {
        let q = self.value(query).data();
        let (k, n) = dims2(self.value(keys).shape());
        assert_eq!(q.len(), n, "query length must match key width");
        assert_eq!(positive.len(), k, "positive mask length");
        assert!(positive.iter().any(|p| *p), "info_nce needs a positive key");
        let logits = info_nce_logits(q, self.value(keys).data(), n, tau);
        let loss = log_sum_exp(logits.iter().copied())
            - log_sum_exp(logits.iter().zip(&positive).filter(|(_, p)| **p).map(|(l, _)| *l));
        self.push(Tensor::scalar(loss), Op::InfoNce { query, keys, positive, tau })
    }

    /// Gradients of the scalar `loss` with respect to every node that
    /// requires grad.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let v = self.value(loss);
        if v.len() != 1 {
            return Err(Error::Shape(format!("backward needs a scalar loss, got shape {:?}", v.shape())));
        }
        self.backward_with(vec![(loss, Tensor::new(v.shape().to_vec(), vec![1.0])?)])
    }

    /// Backward pass seeded with explicit upstream gradients for one or more
    /// nodes (e.g. a loss scalar and a gradient computed outside the tape).
    pub fn backward_with(&self, seeds: Vec<(Var, Tensor)>) -> Result<Gradients> {
        self.check_finite()?;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut top = 0;
        for (var, seed) in seeds {
            if seed.shape() != self.value(var).shape() {
                return Err(Error::Shape(format!(
                    "seed shape {:?} does not match node shape {:?}",
                    seed.shape(),
                    self.value(var).shape()
                )));
            }
            accumulate(&mut grads[var.0], seed.data(), seed.shape());
            top = top.max(var.0 + 1);
        }
        for idx in (0..top).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = None;
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if !g.is_finite() {
                return Err(Error::NonFinite { term: format!("gradient of tape node {idx} ({})", node.op.name()) });
            }
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        accumulate(&mut grads[v.0], gd, g.shape());
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], gd, g.shape());
                }
                if self.wants(*b) {
                    let neg: Vec<f64> = gd.iter().map(|x| -x).collect();
                    accumulate(&mut grads[b.0], &neg, g.shape());
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let d: Vec<f64> = gd.iter().zip(vb).map(|(g, y)| g * y).collect();
                    accumulate(&mut grads[a.0], &d, g.shape());
                }
                if self.wants(*b) {
                    let d: Vec<f64> = gd.iter().zip(va).map(|(g, x)| g * x).collect();
                    accumulate(&mut grads[b.0], &d, g.shape());
                }
            }
            Op::Scale(a, k) => {
                let d: Vec<f64> = gd.iter().map(|x| x * k).collect();
                accumulate(&mut grads[a.0], &d, g.shape());
            }
            Op::Sum(a) => {
                let v = self.value(*a);
                accumulate(&mut grads[a.0], &vec![gd[0]; v.len()], v.shape());
            }
            Op::Sigmoid(_) => {
                let Op::Sigmoid(a) = &node.op else { unreachable!() };
                let y = node.value.data();
                let d: Vec<f64> = gd.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect();
                accumulate(&mut grads[a.0], &d, g.shape());
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let d: Vec<f64> = gd.iter().zip(x).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect();
                accumulate(&mut grads[a.0], &d, g.shape());
            }
            Op::Reshape(a) => {
                accumulate(&mut grads[a.0], gd, self.value(*a).shape());
            }
            Op::Conv2d { input, weight, bias, stride, pad } => {
                self.conv2d_backward(*input, *weight, *bias, *stride, *pad, g, grads)
            }
            Op::ResizeNearest(a) => {
                let (c, h, w) = dims3(self.value(*a).shape());
                let (_, oh, ow) = dims3(g.shape());
                let mut d = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..oh {
                        let sy = y * h / oh;
                        for x in 0..ow {
                            let sx = x * w / ow;
                            d[(ch * h + sy) * w + sx] += gd[(ch * oh + y) * ow + x];
                        }
                    }
                }
                accumulate(&mut grads[a.0], &d, &[c, h, w]);
            }
            Op::AdaptiveAvgPool(a) => {
                let (c, h, w) = dims3(self.value(*a).shape());
                let (_, oh, ow) = dims3(g.shape());
                let mut d = vec![0.0; c * h * w];
                for ch in 0..c {
                    for i in 0..oh {
                        let (y0, y1) = pool_bounds(i, h, oh);
                        for j in 0..ow {
                            let (x0, x1) = pool_bounds(j, w, ow);
                            let share = gd[(ch * oh + i) * ow + j] / ((y1 - y0) * (x1 - x0)) as f64;
                            for y in y0..y1 {
                                for x in x0..x1 {
                                    d[(ch * h + y) * w + x] += share;
                                }
                            }
                        }
                    }
                }
                accumulate(&mut grads[a.0], &d, &[c, h, w]);
            }
            Op::Linear { input, weight, bias } => {
                let (n, i) = dims2(self.value(*input).shape());
                let o = self.value(*bias).len();
                let x = self.value(*input).data();
                let w = self.value(*weight).data();
                if self.wants(*input) {
                    let mut dx = vec![0.0; n * i];
                    for r in 0..n {
                        let grow = &gd[r * o..(r + 1) * o];
                        for k in 0..i {
                            let wrow = &w[k * o..(k + 1) * o];
                            dx[r * i + k] = grow.iter().zip(wrow).map(|(a, b)| a * b).sum();
                        }
                    }
                    accumulate(&mut grads[input.0], &dx, &[n, i]);
                }
                if self.wants(*weight) {
                    let mut dw = vec![0.0; i * o];
                    for r in 0..n {
                        let grow = &gd[r * o..(r + 1) * o];
                        for k in 0..i {
                            let xv = x[r * i + k];
                            if xv == 0.0 {
                                continue;
                            }
                            for (dst, gv) in dw[k * o..(k + 1) * o].iter_mut().zip(grow) {
                                *dst += xv * gv;
                            }
                        }
                    }
                    accumulate(&mut grads[weight.0], &dw, &[i, o]);
                }
                if self.wants(*bias) {
                    let mut db = vec![0.0; o];
                    for r in 0..n {
                        for (dst, gv) in db.iter_mut().zip(&gd[r * o..(r + 1) * o]) {
                            *dst += gv;
                        }
                    }
                    accumulate(&mut grads[bias.0], &db, self.value(*bias).shape());
                }
            }
            Op::ConcatCols(parts) => {
                let (n, total) = dims2(g.shape());
                let mut offset = 0;
                for p in parts {
                    let k = dims2(self.value(*p).shape()).1;
                    if self.wants(*p) {
                        let mut d = Vec::with_capacity(n * k);
                        for r in 0..n {
                            d.extend_from_slice(&gd[r * total + offset..r * total + offset + k]);
                        }
                        accumulate(&mut grads[p.0], &d, &[n, k]);
                    }
                    offset += k;
                }
            }
            Op::PositionalEncoding { input, bands } => {
                let (n, d) = dims2(self.value(*input).shape());
                let x = self.value(*input).data();
                let width = d * (1 + 2 * bands);
                let mut dx = vec![0.0; n * d];
                for r in 0..n {
                    let grow = &gd[r * width..(r + 1) * width];
                    for j in 0..d {
                        let xv = x[r * d + j];
                        let mut acc = grow[j];
                        for l in 0..*bands {
                            let f = std::f64::consts::PI * (1u64 << l) as f64;
                            let base = d + l * 2 * d;
                            acc += grow[base + j] * f * (f * xv).cos();
                            acc -= grow[base + d + j] * f * (f * xv).sin();
                        }
                        dx[r * d + j] = acc;
                    }
                }
                accumulate(&mut grads[input.0], &dx, &[n, d]);
            }
            Op::BilinearSample { features, points, camera } => {
                self.bilinear_backward(*features, *points, camera, g, grads)
            }
            Op::Normalize { input, scale } => {
                let x = self.value(*input).data();
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let dot: f64 = x.iter().zip(gd).map(|(a, b)| a * b).sum::<f64>() / norm;
                let d: Vec<f64> = x.iter().zip(gd).map(|(xv, gv)| scale / norm * (gv - xv / norm * dot)).collect();
                accumulate(&mut grads[input.0], &d, self.value(*input).shape());
            }
            Op::InfoNce { query, keys, positive, tau } => {
                let q = self.value(*query).data();
                let kv = self.value(*keys).data();
                let n = q.len();
                let logits = info_nce_logits(q, kv, n, *tau);
                let lse_all = log_sum_exp(logits.iter().copied());
                let lse_pos = log_sum_exp(logits.iter().zip(positive).filter(|(_, p)| **p).map(|(l, _)| *l));
                let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                let mut dqhat = vec![0.0; n];
                for (k, (&l, &pos)) in logits.iter().zip(positive).enumerate() {
                    let mut dl = (l - lse_all).exp();
                    if pos {
                        dl -= (l - lse_pos).exp();
                    }
                    let coef = gd[0] * dl / tau;
                    for (dst, kval) in dqhat.iter_mut().zip(&kv[k * n..(k + 1) * n]) {
                        *dst += coef * kval;
                    }
                }
                let dot: f64 = q.iter().zip(&dqhat).map(|(a, b)| a * b).sum::<f64>() / norm;
                let dq: Vec<f64> = q.iter().zip(&dqhat).map(|(qv, gv)| (gv - qv / norm * dot) / norm).collect();
                accumulate(&mut grads[query.0], &dq, self.value(*query).shape());
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(
        &self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) {
        let (c, h, w) = dims3(self.value(input).shape());
        let ws = self.value(weight).shape();
        let (o, k) = (ws[0], ws[2]);
        let (_, ho, wo) = dims3(g.shape());
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let gd = g.data();
        let want_x = self.wants(input);
        let want_w = self.wants(weight);
        let mut dx = if want_x { vec![0.0; c * h * w] } else { Vec::new() };
        let mut dw = if want_w { vec![0.0; wt.len()] } else { Vec::new() };
        for oc in 0..o {
            let gplane = &gd[oc * ho * wo..(oc + 1) * ho * wo];
            for ic in 0..c {
                let base = ic * h * w;
                for ky in 0..k {
                    let ys = valid_range(ho, stride, ky as isize - pad as isize, h);
                    for kx in 0..k {
                        let widx = ((oc * c + ic) * k + ky) * k + kx;
                        let wv = wt[widx];
                        let xs = valid_range(wo, stride, kx as isize - pad as isize, w);
                        let mut acc = 0.0;
                        for oy in ys.clone() {
                            let iy = oy * stride + ky - pad;
                            let grow = &gplane[oy * wo..(oy + 1) * wo];
                            let row = base + iy * w;
                            for ox in xs.clone() {
                                let ix = row + ox * stride + kx - pad;
                                if want_w {
                                    acc += x[ix] * grow[ox];
                                }
                                if want_x {
                                    dx[ix] += wv * grow[ox];
                                }
                            }
                        }
                        if want_w {
                            dw[widx] += acc;
                        }
                    }
                }
            }
        }
        if want_x {
            accumulate(&mut grads[input.0], &dx, &[c, h, w]);
        }
        if want_w {
            accumulate(&mut grads[weight.0], &dw, ws);
        }
        if self.wants(bias) {
            let db: Vec<f64> = (0..o).map(|oc| gd[oc * ho * wo..(oc + 1) * ho * wo].iter().sum()).collect();
            accumulate(&mut grads[bias.0], &db, &[o]);
        }
    }

    fn bilinear_backward(
        &self,
        features: Var,
        points: Var,
        camera: &Camera<f64>,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) {
        let (c, h, w) = dims3(self.value(features).shape());
        let (n, _) = dims2(self.value(points).shape());
        let f = self.value(features).data();
        let p = self.value(points).data();
        let gd = g.data();
        let mut df = if self.wants(features) { vec![0.0; c * h * w] } else { Vec::new() };
        let mut dp = vec![0.0; n * 3];
        for i in 0..n {
            let x = [p[3 * i], p[3 * i + 1], p[3 * i + 2]];
            let Some(taps) = sample_taps(camera, x, h, w) else {
                continue;
            };
            let grow = &gd[i * c..(i + 1) * c];
            let mut du = 0.0;
            let mut dv = 0.0;
            for tap in taps.iter().flatten() {
                let mut dot = 0.0;
                for ch in 0..c {
                    let fi = (ch * h + tap.y) * w + tap.x;
                    if !df.is_empty() {
                        df[fi] += tap.weight * grow[ch];
                    }
                    dot += f[fi] * grow[ch];
                }
                du += tap.dweight_du * dot;
                dv += tap.dweight_dv * dot;
            }
            let xc = camera.world_to_camera(x);
            let gx = camera.pixel_grad_to_world([du, dv], xc);
            dp[3 * i..3 * i + 3].copy_from_slice(&gx);
        }
        if !df.is_empty() {
            accumulate(&mut grads[features.0], &df, &[c, h, w]);
        }
        if self.wants(points) {
            accumulate(&mut grads[points.0], &dp, &[n, 3]);
        }
    }
}

fn accumulate(slot: &mut Option<Tensor>, delta: &[f64], shape: &[usize]) {
    match slot {
        Some(t) => {
            for (dst, d) in t.data_mut().iter_mut().zip(delta) {
                *dst += d;
            }
        }
        None => *slot = Some(Tensor::new(shape.to_vec(), delta.to_vec()).expect("grad shape")),
    }
}

fn info_nce_logits(q: &[f64], keys: &[f64], n: usize, tau: f64) -> Vec<f64> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    keys.chunks_exact(n).map(|k| k.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() / norm / tau).collect()
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

#[derive(Clone, Copy, Debug)]
struct Tap {
    x: usize,
    y: usize,
    weight: f64,
    dweight_du: f64,
    dweight_dv: f64,
}

/// The four bilinear taps of a projected point; taps outside the map are
/// `None`. Returns `None` when the point is behind the near plane.
fn sample_taps(camera: &Camera<f64>, x: [f64; 3], h: usize, w: usize) -> Option<[Option<Tap>; 4]> {
    let xc = camera.world_to_camera(x);
    if xc[2] <= Z_NEAR {
        return None;
    }
    let [u, v] = camera.view_to_pixel(xc);
    let x0 = u.floor();
    let y0 = v.floor();
    let fx = u - x0;
    let fy = v - y0;
    let mut taps = [None; 4];
    let corners = [
        (0.0, 0.0, (1.0 - fx) * (1.0 - fy), -(1.0 - fy), -(1.0 - fx)),
        (1.0, 0.0, fx * (1.0 - fy), 1.0 - fy, -fx),
        (0.0, 1.0, (1.0 - fx) * fy, -fy, 1.0 - fx),
        (1.0, 1.0, fx * fy, fy, fx),
    ];
    for (slot, (ox, oy, weight, du, dv)) in taps.iter_mut().zip(corners) {
        let tx = x0 + ox;
        let ty = y0 + oy;
        if tx >= 0.0 && ty >= 0.0 && tx < w as f64 && ty < h as f64 {
            *slot = Some(Tap { x: tx as usize, y: ty as usize, weight, dweight_du: du, dweight_dv: dv });
        }
    }
    Some(taps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::param(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Compares tape gradients of `build` with central differences for every
    /// entry of every input.
    fn check(inputs: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Var) {
        let eval = |vals: &[Tensor]| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
            let out = build(&mut tape, &vars);
            let w = random(tape.value(out).shape(), 99);
            let wv = tape.constant(w);
            let prod = tape.mul(out, wv);
            let loss = tape.sum(prod);
            (tape, vars, loss)
        };
        let (tape, vars, loss) = eval(&inputs);
        let grads = tape.backward(loss).unwrap();
        let h = 1e-6;
        for (p, var) in vars.iter().enumerate() {
            let g = grads.get(*var).expect("input gradient");
            for i in 0..inputs[p].len() {
                let mut plus = inputs.clone();
                plus[p].data_mut()[i] += h;
                let mut minus = inputs.clone();
                minus[p].data_mut()[i] -= h;
                let (tp, _, lp) = eval(&plus);
                let (tm, _, lm) = eval(&minus);
                let fd = (tp.value(lp).item() - tm.value(lm).item()) / (2.0 * h);
                let an = g.data()[i];
                assert!((fd - an).abs() <= 1e-6 * fd.abs().max(1.0), "input {p} entry {i}: fd {fd} analytic {an}");
            }
        }
    }

    #[test]
    fn elementwise_ops() {
        check(vec![random(&[2, 3], 1), random(&[2, 3], 2)], |t, v| {
            let a = t.add(v[0], v[1]);
            let b = t.sub(a, v[1]);
            let c = t.mul(b, v[1]);
            let d = t.sigmoid(c);
            let e = t.scale(d, 3.0);
            let f = t.relu(v[0]);
            let g = t.add(e, f);
            t.reshape(g, [6])
        });
    }

    #[test]
    fn conv_resize_pool() {
        check(vec![random(&[2, 6, 5], 3), random(&[3, 2, 3, 3], 4), random(&[3], 5)], |t, v| {
            let c = t.conv2d(v[0], v[1], v[2], 2, 1);
            let r = t.resize_nearest(c, 5, 7);
            t.adaptive_avg_pool(r, 3, 2)
        });
        check(vec![random(&[1, 4, 4], 6), random(&[2, 1, 3, 3], 7), random(&[2], 8)], |t, v| {
            t.conv2d(v[0], v[1], v[2], 1, 1)
        });
    }

    #[test]
    fn linear_concat_encoding() {
        check(vec![random(&[4, 3], 9), random(&[4, 2], 10), random(&[23, 5], 11), random(&[5], 12)], |t, v| {
            let pe = t.positional_encoding(v[0], 3);
            let x = t.concat_cols(&[v[1], pe]);
            t.linear(x, v[2], v[3])
        });
    }

    #[test]
    fn normalize_and_info_nce() {
        let keys = {
            let mut k = random(&[4, 6], 13).into_data();
            for row in k.chunks_exact_mut(6) {
                let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                row.iter_mut().for_each(|x| *x /= n);
            }
            Tensor::new([4, 6], k).unwrap()
        };
        check(vec![random(&[2, 3], 14)], |t, v| t.normalize(v[0], 2.5));
        check(vec![random(&[6], 15)], move |t, v| {
            let z = t.normalize(v[0], 6f64.sqrt());
            let k = t.constant(keys.clone());
            t.info_nce(z, k, vec![true, false, true, false], 0.5)
        });
    }

    #[test]
    fn bilinear_sampling() {
        let cam = Camera::new(
            [[4.0, 0.0, 2.0], [0.0, 4.0, 1.5], [0.0, 0.0, 1.0]],
            crate::scene::mat::identity3(),
            [0.0; 3],
            5,
            4,
        )
        .unwrap();
        let pts = Tensor::param([3, 3], vec![0.13, -0.07, 2.0, -0.2, 0.11, 1.7, 0.31, 0.2, 2.2]).unwrap();
        check(vec![random(&[2, 4, 5], 16), pts], move |t, v| t.bilinear_sample(v[0], v[1], &cam));
    }

    #[test]
    fn bilinear_nodes_midpoints_and_behind() {
        let cam = Camera::new(
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            crate::scene::mat::identity3(),
            [0.0; 3],
            3,
            3,
        )
        .unwrap();
        let feats: Vec<f64> = (0..18).map(|i| i as f64).collect();
        let mut tape = Tape::new();
        let f = tape.constant(Tensor::new([2, 3, 3], feats).unwrap());
        let p = tape.constant(Tensor::new([3, 3], vec![2.0, 1.0, 1.0, 0.5, 0.5, 1.0, 0.0, 0.0, -1.0]).unwrap());
        let s = tape.bilinear_sample(f, p, &cam);
        let out = tape.value(s).data();
        // pixel (2,1): index 5 / 14
        assert_eq!(&out[0..2], &[5.0, 14.0]);
        // midpoint of (0,0),(1,0),(0,1),(1,1)
        assert_eq!(&out[2..4], &[(0.0 + 1.0 + 3.0 + 4.0) / 4.0, (9.0 + 10.0 + 12.0 + 13.0) / 4.0]);
        assert_eq!(&out[4..6], &[0.0, 0.0]);
    }

    #[test]
    fn non_finite_values_are_reported() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::param([1], vec![f64::MAX]).unwrap());
        let b = tape.scale(a, 10.0);
        let l = tape.sum(b);
        assert!(matches!(tape.backward(l), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn constants_receive_no_gradient_and_seeds_accumulate() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::param([2], vec![1.0, 2.0]).unwrap());
        let c = tape.constant(Tensor::new([2], vec![3.0, 4.0]).unwrap());
        let m = tape.mul(a, c);
        let s = tape.sum(m);
        let grads =
            tape.backward_with(vec![(s, Tensor::scalar(1.0)), (m, Tensor::new([2], vec![0.5, 0.5]).unwrap())]).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(a).unwrap().data(), &[4.5, 6.0]);
    }
}
