//! A minimal reverse-mode differentiation tape over planar tensors.
//!
//! Nodes are appended in evaluation order, so the tape is always a
//! topologically sorted DAG and `backward` is a single reverse sweep.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_traits::Float;

use super::conv::{self, ConvGeometry};
use super::frame::Tensor;
use super::warp::{warp_planes, warp_planes_backward};
use crate::error::invalid;
use crate::Result;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A primitive defined outside this module (the tracker's correlation
/// response, for instance).
pub trait CustomOp {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;
    /// Gradient for each input, given the upstream gradient of the output.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_output: &Tensor) -> Vec<Tensor>;
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Single plane `[1,h,w]` times every plane of `[c,h,w]`.
    MulPlane { plane: Var, x: Var },
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Slice { x: Var, start: usize },
    Concat(Vec<Var>),
    /// `out[i] = Σ_{j<i} x[j]` for `i in 0..=C`.
    PrefixSum(Var),
    /// `out[i] = Σ_{j>=i} x[j]` for `i in 0..=C`.
    SuffixSum(Var),
    Warp { image: Var, flow: Var },
    Conv { x: Var, weight: Var, bias: Var, geom: ConvGeometry },
    ConvTranspose { x: Var, weight: Var, bias: Var, geom: ConvGeometry },
    Resize(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    ChannelSoftmax(Var),
    SquaredError(Var, Var),
    CrossEntropy { probs: Var, target: Var },
    BinaryCrossEntropy { probs: Var, target: Var },
    PlaneNorms(Var),
    MinPlaneFix(Var),
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records tensor operations for a later reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
}

const PROB_FLOOR: f64 = 1e-12;

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(invalid!("{what}: shape {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let mut t = self.value(x).clone();
        t.data.iter_mut().for_each(|v| *v = f(*v));
        let ng = self.ng(x);
        self.push(t, op, ng)
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "elementwise op")?;
        let mut t = self.value(a).clone();
        for (x, y) in t.data.iter_mut().zip(&self.nodes[b.0].value.data) {
            *x = f(*x, *y);
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn mul_plane(&mut self, plane: Var, x: Var) -> Result<Var> {
        let (pc, ph, pw) = self.value(plane).shape();
        let (c, h, w) = self.value(x).shape();
        if pc != 1 || ph != h || pw != w {
            return Err(invalid!("mul_plane: plane {:?} vs tensor {:?}", (pc, ph, pw), (c, h, w)));
        }
        let mut t = self.value(x).clone();
        let n = h * w;
        let p = &self.nodes[plane.0].value.data;
        for ch in 0..c {
            for (v, s) in t.data[ch * n..(ch + 1) * n].iter_mut().zip(p) {
                *v *= s;
            }
        }
        let ng = self.ng(plane) || self.ng(x);
        Ok(self.push(t, Op::MulPlane { plane, x }, ng))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.map(x, Op::Scale(x, k), |v| v * k)
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        self.map(x, Op::AddScalar(x), |v| v + k)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// Sums several same-shaped tensors.
    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs.split_first().ok_or_else(|| invalid!("add_n of nothing"))?;
        let mut acc = first;
        for &x in rest {
            acc = self.add(acc, x)?;
        }
        Ok(acc)
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if start + len > t.channels || len == 0 {
            return Err(invalid!("slice {start}..{} of {} planes", start + len, t.channels));
        }
        let n = t.plane_len();
        let out = Tensor {
            channels: len,
            height: t.height,
            width: t.width,
            data: t.data[start * n..(start + len) * n].to_vec(),
        };
        let ng = self.ng(x);
        Ok(self.push(out, Op::Slice { x, start }, ng))
    }

    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self.value(*xs.first().ok_or_else(|| invalid!("concat of nothing"))?);
        let (h, w) = (first.height, first.width);
        let mut data = Vec::new();
        let mut channels = 0;
        for &x in xs {
            let t = self.value(x);
            if t.height != h || t.width != w {
                return Err(invalid!("concat: spatial size mismatch"));
            }
            channels += t.channels;
            data.extend_from_slice(&t.data);
        }
        let ng = xs.iter().any(|&x| self.ng(x));
        Ok(self.push(
            Tensor {
                channels,
                height: h,
                width: w,
                data,
            },
            Op::Concat(xs.to_vec()),
            ng,
        ))
    }

    pub fn prefix_sum(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (c, h, w) = t.shape();
        let n = h * w;
        let mut out = Tensor::zeros(c + 1, h, w);
        for i in 1..=c {
            for p in 0..n {
                out.data[i * n + p] = out.data[(i - 1) * n + p] + t.data[(i - 1) * n + p];
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::PrefixSum(x), ng)
    }

    pub fn suffix_sum(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (c, h, w) = t.shape();
        let n = h * w;
        let mut out = Tensor::zeros(c + 1, h, w);
        for i in (0..c).rev() {
            for p in 0..n {
                out.data[i * n + p] = out.data[(i + 1) * n + p] + t.data[i * n + p];
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::SuffixSum(x), ng)
    }

    /// Bilinear pull-warp of `image` by the two-plane `flow`.
    pub fn warp(&mut self, image: Var, flow: Var) -> Result<Var> {
        let (img, fl) = (self.value(image), self.value(flow));
        if fl.channels != 2 || fl.height != img.height || fl.width != img.width {
            return Err(invalid!("warp: image {:?} vs flow {:?}", img.shape(), fl.shape()));
        }
        let out = warp_planes(img, fl.plane(0), fl.plane(1));
        let ng = self.ng(image) || self.ng(flow);
        Ok(self.push(out, Op::Warp { image, flow }, ng))
    }

    fn check_conv(&self, x: Var, weight: Var, bias: Var, geom: &ConvGeometry) -> Result<()> {
        let k = geom.kernel;
        if self.value(x).channels != geom.cin
            || self.value(weight).shape() != (geom.cin * geom.cout, k, k)
            || self.value(bias).shape() != (geom.cout, 1, 1)
        {
            return Err(invalid!("convolution operand shapes do not match {:?}", geom));
        }
        Ok(())
    }

    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var, geom: ConvGeometry) -> Result<Var> {
        self.check_conv(x, weight, bias, &geom)?;
        let out = conv::conv2d(self.value(x), self.value(weight), self.value(bias), &geom);
        let ng = self.ng(x) || self.ng(weight) || self.ng(bias);
        Ok(self.push(out, Op::Conv { x, weight, bias, geom }, ng))
    }

    pub fn conv_transpose2d(&mut self, x: Var, weight: Var, bias: Var, geom: ConvGeometry) -> Result<Var> {
        self.check_conv(x, weight, bias, &geom)?;
        let out = conv::conv_transpose2d(self.value(x), self.value(weight), self.value(bias), &geom);
        let ng = self.ng(x) || self.ng(weight) || self.ng(bias);
        Ok(self.push(out, Op::ConvTranspose { x, weight, bias, geom }, ng))
    }

    pub fn resize(&mut self, x: Var, height: usize, width: usize) -> Var {
        let out = conv::resize_bilinear(self.value(x), height, width);
        let ng = self.ng(x);
        self.push(out, Op::Resize(x), ng)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.map(x, Op::LeakyRelu(x, slope), |v| if v > 0.0 { v } else { slope * v })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, Op::Tanh(x), Float::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, Op::Sigmoid(x), sigmoid)
    }

    /// Softmax across planes at every pixel.
    pub fn channel_softmax(&mut self, x: Var) -> Var {
        let out = channel_softmax(self.value(x));
        let ng = self.ng(x);
        self.push(out, Op::ChannelSoftmax(x), ng)
    }

    /// `Σ (a - b)²`.
    pub fn squared_error(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "squared_error")?;
        let s = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::scalar(s), Op::SquaredError(a, b), ng))
    }

    /// `-Σ t · ln p` against a fixed target distribution.
    pub fn cross_entropy(&mut self, probs: Var, target: Var) -> Result<Var> {
        same_shape(self.value(probs), self.value(target), "cross_entropy")?;
        let s = -self
            .value(probs)
            .data
            .iter()
            .zip(&self.value(target).data)
            .map(|(p, t)| t * Float::ln(p.max(PROB_FLOOR)))
            .sum::<f64>();
        let ng = self.ng(probs);
        Ok(self.push(Tensor::scalar(s), Op::CrossEntropy { probs, target }, ng))
    }

    /// `-Σ [t ln p + (1 - t) ln(1 - p)]` against fixed labels in `[0, 1]`.
    pub fn binary_cross_entropy(&mut self, probs: Var, target: Var) -> Result<Var> {
        same_shape(self.value(probs), self.value(target), "binary_cross_entropy")?;
        let s = self
            .value(probs)
            .data
            .iter()
            .zip(&self.value(target).data)
            .map(|(&p, &t)| bce(p, t))
            .sum();
        let ng = self.ng(probs);
        Ok(self.push(Tensor::scalar(s), Op::BinaryCrossEntropy { probs, target }, ng))
    }

    /// Euclidean norm of every plane, as a `[c,1,1]` tensor.
    pub fn plane_norms(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let c = t.channels;
        let data = (0..c)
            .map(|ch| Float::sqrt(t.plane(ch).iter().map(|v| v * v).sum::<f64>()))
            .collect();
        let ng = self.ng(x);
        self.push(
            Tensor {
                channels: c,
                height: 1,
                width: 1,
                data,
            },
            Op::PlaneNorms(x),
            ng,
        )
    }

    /// At every pixel, overwrite the smallest plane value (first on ties)
    /// with one minus the sum of the others, so planes sum to one.
    pub fn min_plane_fix(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (c, h, w) = t.shape();
        let n = h * w;
        let mut out = t.clone();
        for p in 0..n {
            let j = argmin_plane(t, p);
            let others: f64 = (0..c).filter(|&i| i != j).map(|i| t.data[i * n + p]).sum();
            out.data[j * n + p] = 1.0 - others;
        }
        let ng = self.ng(x);
        self.push(out, Op::MinPlaneFix(x), ng)
    }

    pub fn custom(&mut self, inputs: &[Var], op: Box<dyn CustomOp>) -> Result<Var> {
        let vals: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = op.forward(&vals)?;
        let ng = inputs.iter().any(|&v| self.ng(v));
        Ok(self.push(
            out,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            ng,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(invalid!(
                "loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let scaled = |k: f64| {
            let mut t = g.clone();
            t.data.iter_mut().for_each(|v| *v *= k);
            t
        };
        let elementwise = |x: &Tensor, f: &dyn Fn(f64, f64) -> f64| {
            let mut t = g.clone();
            for (gv, xv) in t.data.iter_mut().zip(&x.data) {
                *gv = f(*gv, *xv);
            }
            t
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, scaled(-1.0));
            }
            Op::Mul(a, b) => {
                acc(*a, elementwise(val(*b), &|gv, bv| gv * bv));
                acc(*b, elementwise(val(*a), &|gv, av| gv * av));
            }
            Op::MulPlane { plane, x } => {
                let (pv, xv) = (val(*plane), val(*x));
                let n = pv.len();
                let c = xv.channels;
                let mut gp = Tensor::zeros(1, pv.height, pv.width);
                let mut gx = g.clone();
                for ch in 0..c {
                    for i in 0..n {
                        gp.data[i] += g.data[ch * n + i] * xv.data[ch * n + i];
                        gx.data[ch * n + i] *= pv.data[i];
                    }
                }
                acc(*plane, gp);
                acc(*x, gx);
            }
            Op::Scale(x, k) => acc(*x, scaled(*k)),
            Op::AddScalar(x) => acc(*x, g.clone()),
            Op::Sum(x) => {
                let (c, h, w) = val(*x).shape();
                acc(*x, Tensor::filled(c, h, w, g.data[0]));
            }
            Op::Slice { x, start } => {
                let (c, h, w) = val(*x).shape();
                let mut t = Tensor::zeros(c, h, w);
                let n = h * w;
                t.data[start * n..start * n + g.len()].copy_from_slice(&g.data);
                acc(*x, t);
            }
            Op::Concat(xs) => {
                let mut off = 0;
                for &x in xs {
                    let (c, h, w) = val(x).shape();
                    let len = c * h * w;
                    acc(x, Tensor::from_vec(c, h, w, g.data[off..off + len].to_vec()).unwrap());
                    off += len;
                }
            }
            Op::PrefixSum(x) => {
                // d out[i] / d x[j] = 1 for j < i, so grad x[j] = Σ_{i>j} g[i]
                let (c, h, w) = val(*x).shape();
                let n = h * w;
                let mut t = Tensor::zeros(c, h, w);
                let mut running = vec![0.0; n];
                for j in (0..c).rev() {
                    for p in 0..n {
                        running[p] += g.data[(j + 1) * n + p];
                        t.data[j * n + p] = running[p];
                    }
                }
                acc(*x, t);
            }
            Op::SuffixSum(x) => {
                // grad x[j] = Σ_{i<=j} g[i]
                let (c, h, w) = val(*x).shape();
                let n = h * w;
                let mut t = Tensor::zeros(c, h, w);
                let mut running = vec![0.0; n];
                for j in 0..c {
                    for p in 0..n {
                        running[p] += g.data[j * n + p];
                        t.data[j * n + p] = running[p];
                    }
                }
                acc(*x, t);
            }
            Op::Warp { image, flow } => {
                let (img, fl) = (val(*image), val(*flow));
                let want_img = self.nodes[image.0].needs_grad;
                let want_flow = self.nodes[flow.0].needs_grad;
                let mut gi = want_img.then(|| Tensor::zeros(img.channels, img.height, img.width));
                let mut gf = want_flow.then(|| Tensor::zeros(2, fl.height, fl.width));
                let flow_bufs = gf.as_mut().map(|t| {
                    let n = t.plane_len();
                    let (a, b) = t.data.split_at_mut(n);
                    (a, b)
                });
                warp_planes_backward(img, fl.plane(0), fl.plane(1), g, gi.as_mut(), flow_bufs);
                if let Some(t) = gi {
                    acc(*image, t);
                }
                if let Some(t) = gf {
                    acc(*flow, t);
                }
            }
            Op::Conv { x, weight, bias, geom } | Op::ConvTranspose { x, weight, bias, geom } => {
                let (xv, wv, bv) = (val(*x), val(*weight), val(*bias));
                let mut gx = self.nodes[x.0].needs_grad.then(|| Tensor::zeros(xv.channels, xv.height, xv.width));
                let mut gw = self.nodes[weight.0]
                    .needs_grad
                    .then(|| Tensor::zeros(wv.channels, wv.height, wv.width));
                let mut gb = self.nodes[bias.0].needs_grad.then(|| Tensor::zeros(bv.channels, 1, 1));
                if matches!(node.op, Op::Conv { .. }) {
                    conv::conv2d_backward(xv, wv, g, geom, gx.as_mut(), gw.as_mut(), gb.as_mut());
                } else {
                    conv::conv_transpose2d_backward(xv, wv, g, geom, gx.as_mut(), gw.as_mut(), gb.as_mut());
                }
                if let Some(t) = gx {
                    acc(*x, t);
                }
                if let Some(t) = gw {
                    acc(*weight, t);
                }
                if let Some(t) = gb {
                    acc(*bias, t);
                }
            }
            Op::Resize(x) => {
                let (c, h, w) = val(*x).shape();
                let mut t = Tensor::zeros(c, h, w);
                conv::resize_bilinear_backward(g, h, w, &mut t);
                acc(*x, t);
            }
            Op::LeakyRelu(x, slope) => {
                let s = *slope;
                acc(*x, elementwise(val(*x), &|gv, xv| if xv > 0.0 { gv } else { s * gv }));
            }
            Op::Tanh(_) => {
                let y = &node.value;
                let mut t = g.clone();
                for (gv, yv) in t.data.iter_mut().zip(&y.data) {
                    *gv *= 1.0 - yv * yv;
                }
                acc(input_of(&node.op), t);
            }
            Op::Sigmoid(_) => {
                let y = &node.value;
                let mut t = g.clone();
                for (gv, yv) in t.data.iter_mut().zip(&y.data) {
                    *gv *= yv * (1.0 - yv);
                }
                acc(input_of(&node.op), t);
            }
            Op::ChannelSoftmax(x) => {
                let y = &node.value;
                let (c, h, w) = y.shape();
                let n = h * w;
                let mut t = Tensor::zeros(c, h, w);
                for p in 0..n {
                    let dot: f64 = (0..c).map(|i| g.data[i * n + p] * y.data[i * n + p]).sum();
                    for i in 0..c {
                        t.data[i * n + p] = y.data[i * n + p] * (g.data[i * n + p] - dot);
                    }
                }
                acc(*x, t);
            }
            Op::SquaredError(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let mut t = av.clone();
                for (d, y) in t.data.iter_mut().zip(&bv.data) {
                    *d = 2.0 * (*d - y) * g.data[0];
                }
                acc(*b, {
                    let mut n = t.clone();
                    n.data.iter_mut().for_each(|v| *v = -*v);
                    n
                });
                acc(*a, t);
            }
            Op::CrossEntropy { probs, target } => {
                let (pv, tv) = (val(*probs), val(*target));
                let mut t = pv.clone();
                for (d, y) in t.data.iter_mut().zip(&tv.data) {
                    *d = if *d > PROB_FLOOR { -y / *d * g.data[0] } else { 0.0 };
                }
                acc(*probs, t);
            }
            Op::BinaryCrossEntropy { probs, target } => {
                let (pv, tv) = (val(*probs), val(*target));
                let mut t = pv.clone();
                for (d, &y) in t.data.iter_mut().zip(&tv.data) {
                    let p = *d;
                    *d = if p > PROB_FLOOR && p < 1.0 - PROB_FLOOR {
                        (-y / p + (1.0 - y) / (1.0 - p)) * g.data[0]
                    } else {
                        0.0
                    };
                }
                acc(*probs, t);
            }
            Op::PlaneNorms(x) => {
                let xv = val(*x);
                let mut t = xv.clone();
                for ch in 0..xv.channels {
                    let norm = node.value.data[ch];
                    let k = if norm > 0.0 { g.data[ch] / norm } else { 0.0 };
                    t.plane_mut(ch).iter_mut().for_each(|v| *v *= k);
                }
                acc(*x, t);
            }
            Op::MinPlaneFix(x) => {
                let xv = val(*x);
                let (c, h, w) = xv.shape();
                let n = h * w;
                let mut t = g.clone();
                for p in 0..n {
                    let j = argmin_plane(xv, p);
                    let gj = g.data[j * n + p];
                    for i in 0..c {
                        t.data[i * n + p] = if i == j { 0.0 } else { g.data[i * n + p] - gj };
                    }
                }
                acc(*x, t);
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                let gs = op.backward(&vals, &node.value, g);
                for (&v, t) in inputs.iter().zip(gs) {
                    acc(v, t);
                }
            }
        }
    }
}

fn input_of(op: &Op) -> Var {
    match op {
        Op::Tanh(x) | Op::Sigmoid(x) => *x,
        _ => unreachable!("input_of on a non-unary op"),
    }
}

fn argmin_plane(t: &Tensor, p: usize) -> usize {
    let n = t.plane_len();
    let mut best = 0;
    for i in 1..t.channels {
        if t.data[i * n + p] < t.data[best * n + p] {
            best = i;
        }
    }
    best
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + Float::exp(-v))
}

pub(crate) fn bce(p: f64, t: f64) -> f64 {
    let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    -(t * Float::ln(p) + (1.0 - t) * Float::ln(1.0 - p))
}

pub(crate) fn channel_softmax(x: &Tensor) -> Tensor {
    let (c, h, w) = x.shape();
    let n = h * w;
    let mut out = Tensor::zeros(c, h, w);
    for p in 0..n {
        let m = (0..c).map(|i| x.data[i * n + p]).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for i in 0..c {
            let e = Float::exp(x.data[i * n + p] - m);
            out.data[i * n + p] = e;
            z += e;
        }
        for i in 0..c {
            out.data[i * n + p] /= z;
        }
    }
    out
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zero when `v` did not
    /// influence the loss.
    pub fn get(&self, tape: &Tape, v: Var) -> Tensor {
        match self.grads.get(v.0) {
            Some(Some(t)) => t.clone(),
            _ => {
                let (c, h, w) = tape.value(v).shape();
                Tensor::zeros(c, h, w)
            }
        }
    }

    pub fn get_ref(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(c: usize, h: usize, w: usize, data: &[f64]) -> Tensor {
        Tensor::from_vec(c, h, w, data.to_vec()).unwrap()
    }

    #[test]
    fn square_at_three() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(&tape, x).data[0], 6.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros(1, 2, 2));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn untouched_leaf_gets_zero() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let unused = tape.param(t(1, 1, 3, &[1.0, 2.0, 3.0]));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(&tape, unused).data, alloc::vec![0.0; 3]);
    }

    #[test]
    fn softmax_cross_entropy_closed_form() {
        let mut tape = Tape::new();
        let logits = tape.param(t(3, 1, 2, &[0.2, -1.0, 1.5, 0.3, -0.4, 2.0]));
        let target = tape.constant(t(3, 1, 2, &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0]));
        let probs = tape.channel_softmax(logits);
        let loss = tape.cross_entropy(probs, target).unwrap();
        let g = tape.backward(loss).unwrap().get(&tape, logits);
        let p = tape.value(probs);
        for i in 0..6 {
            let expected = p.data[i] - tape.value(target).data[i];
            assert!((g.data[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn prefix_and_suffix_sums() {
        let mut tape = Tape::new();
        let x = tape.param(t(3, 1, 1, &[0.2, 0.3, 0.5]));
        let pre = tape.prefix_sum(x);
        let suf = tape.suffix_sum(x);
        let pv = &tape.value(pre).data;
        let sv = &tape.value(suf).data;
        let expect_pre = [0.0, 0.2, 0.5, 1.0];
        let expect_suf = [1.0, 0.8, 0.5, 0.0];
        for i in 0..4 {
            assert!((pv[i] - expect_pre[i]).abs() < 1e-12);
            assert!((sv[i] - expect_suf[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn min_plane_fix_restores_unit_sum() {
        let mut tape = Tape::new();
        let x = tape.param(t(3, 1, 1, &[0.5, 0.1, 0.3]));
        let y = tape.min_plane_fix(x);
        let v = &tape.value(y).data;
        assert!((v[1] - 0.2).abs() < 1e-12);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
