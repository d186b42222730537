//! Reverse-mode gradient tape.
//!
//! Operations append nodes in creation order; [`Tape::backward`] replays them
//! in reverse and accumulates gradients onto every reachable node. Tensors are
//! immutable once recorded and each tape has a single writer, so independent
//! samples can run on separate tapes concurrently.

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { input: Var, kernel: Var, padding: usize },
    SoftThreshold { input: Var, theta: Var },
    Relu { input: Var },
    AvgPool2 { input: Var },
    MaxPool2 { input: Var, argmax: Vec<usize> },
    BiasAdd { input: Var, bias: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Scale { input: Var, factor: f64 },
    ScaleByScalar { input: Var, scalar: Var },
    Clamp { input: Var, lo: f64, hi: f64 },
    ConcatChannels { parts: Vec<Var> },
    SliceChannels { input: Var, from: usize },
    Gram { input: Var },
    Sum { input: Var },
    SumSquares { input: Var },
    WeightedSum { terms: Vec<(f64, Var)> },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the seed w.r.t. `v`. Nodes the seed never touched get an
    /// exact zero tensor.
    pub fn grad(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("grad shape"),
            None => Tensor::zeros(self.shapes[v.0].clone()),
        }
    }

    pub fn grad_data(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers an input tensor. Leaves receive gradients on backward.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, padding: usize) -> Result<Var> {
        let out = ops::conv2d(self.value(input), self.value(kernel), padding)?;
        Ok(self.push(out, Op::Conv2d { input, kernel, padding }))
    }

    /// Per-channel shrinkage with a learnable threshold vector. The threshold
    /// is clamped nonnegative at use.
    pub fn soft_threshold(&mut self, input: Var, theta: Var) -> Result<Var> {
        let out = ops::soft_threshold(self.value(input), self.value(theta).data())?;
        Ok(self.push(out, Op::SoftThreshold { input, theta }))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = ops::relu(self.value(input));
        self.push(out, Op::Relu { input })
    }

    pub fn avg_pool2(&mut self, input: Var) -> Result<Var> {
        let out = ops::avg_pool2(self.value(input))?;
        Ok(self.push(out, Op::AvgPool2 { input }))
    }

    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = ops::max_pool2(self.value(input))?;
        Ok(self.push(out, Op::MaxPool2 { input, argmax }))
    }

    pub fn bias_add(&mut self, input: Var, bias: Var) -> Result<Var> {
        let out = ops::bias_add(self.value(input), self.value(bias))?;
        Ok(self.push(out, Op::BiasAdd { input, bias }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::sub(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Sub { a, b }))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let out = ops::scale(self.value(input), factor);
        self.push(out, Op::Scale { input, factor })
    }

    /// Multiplies a tensor by a scalar node (shape `[1]`).
    pub fn scale_by(&mut self, input: Var, scalar: Var) -> Result<Var> {
        let s = self.value(scalar).scalar_value()?;
        let out = ops::scale(self.value(input), s);
        Ok(self.push(out, Op::ScaleByScalar { input, scalar }))
    }

    pub fn clamp(&mut self, input: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(input).map(|v| v.clamp(lo, hi));
        self.push(out, Op::Clamp { input, lo, hi })
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ops::concat_channels(&tensors)?;
        Ok(self.push(out, Op::ConcatChannels { parts: parts.to_vec() }))
    }

    pub fn slice_channels(&mut self, input: Var, from: usize, to: usize) -> Result<Var> {
        let out = ops::slice_channels(self.value(input), from, to)?;
        Ok(self.push(out, Op::SliceChannels { input, from }))
    }

    pub fn gram(&mut self, input: Var) -> Result<Var> {
        let out = ops::gram(self.value(input))?;
        Ok(self.push(out, Op::Gram { input }))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let out = Tensor::scalar(ops::sum(self.value(input)));
        self.push(out, Op::Sum { input })
    }

    /// Squared Frobenius norm as a scalar node.
    pub fn sum_squares(&mut self, input: Var) -> Var {
        let out = Tensor::scalar(ops::sum_squares(self.value(input)));
        self.push(out, Op::SumSquares { input })
    }

    /// Weighted sum of scalar nodes, accumulated in argument order.
    /// Zero-weight terms contribute nothing to the value or the gradient.
    pub fn weighted_sum(&mut self, terms: &[(f64, Var)]) -> Result<Var> {
        let mut acc = 0.0;
        for &(w, v) in terms {
            let val = self.value(v).scalar_value()?;
            if w != 0.0 {
                acc += w * val;
            }
        }
        Ok(self.push(
            Tensor::scalar(acc),
            Op::WeightedSum { terms: terms.to_vec() },
        ))
    }

    /// Accumulates gradients of a scalar seed onto every reachable node.
    pub fn backward(&mut self, seed: Var) -> Result<Gradients> {
        if !self.value(seed).is_scalar() {
            return Err(Error::Contract(format!(
                "backward seed must be scalar, got shape {:?}",
                self.value(seed).shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[seed.0] = Some(vec![1.0]);

        for id in (0..n).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn add_into(grads: &mut Vec<Option<Vec<f64>>>, v: Var, numel: usize, f: impl FnOnce(&mut [f64])) {
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; numel]);
        f(slot);
    }

    fn accumulate(&self, id: usize, g: &[f64], grads: &mut Vec<Option<Vec<f64>>>) -> Result<()> {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, padding } => {
                let gt = Tensor::new(node.value.shape().to_vec(), g.to_vec())?;
                let in_t = self.value(*input);
                let k_t = self.value(*kernel);
                let gin = ops::conv2d_grad_input(&gt, k_t, in_t.shape(), *padding)?;
                let gk = ops::conv2d_grad_kernel(&gt, in_t, k_t.shape(), *padding)?;
                Self::add_into(grads, *input, in_t.numel(), |s| {
                    for (a, b) in s.iter_mut().zip(gin.data()) {
                        *a += b;
                    }
                });
                Self::add_into(grads, *kernel, k_t.numel(), |s| {
                    for (a, b) in s.iter_mut().zip(gk.data()) {
                        *a += b;
                    }
                });
            }
            Op::SoftThreshold { input, theta } => {
                let x = self.value(*input);
                let th = self.value(*theta);
                let channels = th.numel();
                let plane = x.numel() / channels;
                Self::add_into(grads, *input, x.numel(), |s| {
                    for c in 0..channels {
                        let eff = th.data()[c].max(0.0);
                        for i in 0..plane {
                            let idx = c * plane + i;
                            if x.data()[idx].abs() > eff {
                                s[idx] += g[idx];
                            }
                        }
                    }
                });
                Self::add_into(grads, *theta, channels, |s| {
                    for c in 0..channels {
                        let raw = th.data()[c];
                        if raw <= 0.0 {
                            continue; // clamped at zero, no gradient flows
                        }
                        let mut acc = 0.0;
                        for i in 0..plane {
                            let idx = c * plane + i;
                            let xv = x.data()[idx];
                            if xv.abs() > raw {
                                acc -= xv.signum() * g[idx];
                            }
                        }
                        s[c] += acc;
                    }
                });
            }
            Op::Relu { input } => {
                let x = self.value(*input);
                Self::add_into(grads, *input, x.numel(), |s| {
                    for i in 0..s.len() {
                        if x.data()[i] > 0.0 {
                            s[i] += g[i];
                        }
                    }
                });
            }
            Op::AvgPool2 { input } => {
                let x = self.value(*input);
                let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let (oh, ow) = (h / 2, w / 2);
                Self::add_into(grads, *input, x.numel(), |s| {
                    for ch in 0..c {
                        for y in 0..oh {
                            for xo in 0..ow {
                                let q = 0.25 * g[ch * oh * ow + y * ow + xo];
                                let i = ch * h * w + 2 * y * w + 2 * xo;
                                s[i] += q;
                                s[i + 1] += q;
                                s[i + w] += q;
                                s[i + w + 1] += q;
                            }
                        }
                    }
                });
            }
            Op::MaxPool2 { input, argmax } => {
                let numel = self.value(*input).numel();
                Self::add_into(grads, *input, numel, |s| {
                    for (o, &src) in argmax.iter().enumerate() {
                        s[src] += g[o];
                    }
                });
            }
            Op::BiasAdd { input, bias } => {
                let x = self.value(*input);
                let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                Self::add_into(grads, *input, x.numel(), |s| {
                    for (a, b) in s.iter_mut().zip(g) {
                        *a += b;
                    }
                });
                Self::add_into(grads, *bias, c, |s| {
                    for ch in 0..c {
                        let mut acc = 0.0;
                        for i in 0..h * w {
                            acc += g[ch * h * w + i];
                        }
                        s[ch] += acc;
                    }
                });
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    Self::add_into(grads, *v, g.len(), |s| {
                        for (x, y) in s.iter_mut().zip(g) {
                            *x += y;
                        }
                    });
                }
            }
            Op::Sub { a, b } => {
                Self::add_into(grads, *a, g.len(), |s| {
                    for (x, y) in s.iter_mut().zip(g) {
                        *x += y;
                    }
                });
                Self::add_into(grads, *b, g.len(), |s| {
                    for (x, y) in s.iter_mut().zip(g) {
                        *x -= y;
                    }
                });
            }
            Op::Scale { input, factor } => {
                Self::add_into(grads, *input, g.len(), |s| {
                    for (x, y) in s.iter_mut().zip(g) {
                        *x += factor * y;
                    }
                });
            }
            Op::ScaleByScalar { input, scalar } => {
                let x = self.value(*input);
                let sv = self.value(*scalar).data()[0];
                Self::add_into(grads, *input, x.numel(), |s| {
                    for (a, b) in s.iter_mut().zip(g) {
                        *a += sv * b;
                    }
                });
                Self::add_into(grads, *scalar, 1, |s| {
                    let mut acc = 0.0;
                    for (gv, xv) in g.iter().zip(x.data()) {
                        acc += gv * xv;
                    }
                    s[0] += acc;
                });
            }
            Op::Clamp { input, lo, hi } => {
                let x = self.value(*input);
                Self::add_into(grads, *input, x.numel(), |s| {
                    for i in 0..s.len() {
                        let v = x.data()[i];
                        if v > *lo && v < *hi {
                            s[i] += g[i];
                        }
                    }
                });
            }
            Op::ConcatChannels { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let numel = self.value(p).numel();
                    Self::add_into(grads, p, numel, |s| {
                        for (a, b) in s.iter_mut().zip(&g[offset..offset + numel]) {
                            *a += b;
                        }
                    });
                    offset += numel;
                }
            }
            Op::SliceChannels { input, from } => {
                let x = self.value(*input);
                let plane = x.shape()[1] * x.shape()[2];
                let offset = from * plane;
                Self::add_into(grads, *input, x.numel(), |s| {
                    for (i, b) in g.iter().enumerate() {
                        s[offset + i] += b;
                    }
                });
            }
            Op::Gram { input } => {
                let x = self.value(*input);
                let gt = Tensor::new(node.value.shape().to_vec(), g.to_vec())?;
                let gin = ops::gram_grad(&gt, x)?;
                Self::add_into(grads, *input, x.numel(), |s| {
                    for (a, b) in s.iter_mut().zip(gin.data()) {
                        *a += b;
                    }
                });
            }
            Op::Sum { input } => {
                let numel = self.value(*input).numel();
                Self::add_into(grads, *input, numel, |s| {
                    for a in s.iter_mut() {
                        *a += g[0];
                    }
                });
            }
            Op::SumSquares { input } => {
                let x = self.value(*input);
                Self::add_into(grads, *input, x.numel(), |s| {
                    for (a, xv) in s.iter_mut().zip(x.data()) {
                        *a += 2.0 * xv * g[0];
                    }
                });
            }
            Op::WeightedSum { terms } => {
                for &(w, v) in terms {
                    if w == 0.0 {
                        continue;
                    }
                    Self::add_into(grads, v, 1, |s| {
                        s[0] += w * g[0];
                    });
                }
            }
        }
        Ok(())
    }

    /// Smallest distance of any recorded value to a nondifferentiable point
    /// (shrinkage and clamp kinks, ramp zero crossings, pooling ties), each
    /// normalized by the RMS of the tensor it lives in so deep small-scale
    /// activations are judged on their own scale. Infinite when the tape
    /// holds only smooth operations.
    pub fn kink_margin(&self) -> f64 {
        fn rms(t: &Tensor) -> f64 {
            (t.sq_norm() / t.numel() as f64).sqrt().max(1e-12)
        }
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::SoftThreshold { input, theta } => {
                    let x = self.value(*input);
                    let th = self.value(*theta);
                    let scale = rms(x);
                    let plane = x.numel() / th.numel();
                    for (c, &raw) in th.data().iter().enumerate() {
                        let eff = raw.max(0.0);
                        margin = margin.min(raw.abs() / scale);
                        for i in 0..plane {
                            margin =
                                margin.min((x.data()[c * plane + i].abs() - eff).abs() / scale);
                        }
                    }
                }
                Op::Relu { input } => {
                    let x = self.value(*input);
                    let scale = rms(x);
                    for &v in x.data() {
                        margin = margin.min(v.abs() / scale);
                    }
                }
                Op::Clamp { input, lo, hi } => {
                    let x = self.value(*input);
                    let scale = rms(x);
                    for &v in x.data() {
                        margin = margin.min((v - lo).abs().min((v - hi).abs()) / scale);
                    }
                }
                Op::MaxPool2 { input, argmax } => {
                    let x = self.value(*input);
                    let d = x.data();
                    let scale = rms(x);
                    let (_, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                    for (o, &best) in argmax.iter().enumerate() {
                        let ow = w / 2;
                        let oh = h / 2;
                        let ch = o / (oh * ow);
                        let rem = o % (oh * ow);
                        let y = rem / ow;
                        let xo = rem % ow;
                        let i = ch * h * w + 2 * y * w + 2 * xo;
                        for j in [i, i + 1, i + w, i + w + 1] {
                            if j != best {
                                margin = margin.min((d[best] - d[j]) / scale);
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }
}

/// Central-difference check of the tape gradient for a scalar function of
/// several leaf tensors. Returns the worst relative error over every
/// coordinate of every leaf, with denominator `max(|a|, |b|, 1e-8)`.
pub fn finite_diff_check_multi(
    leaves: &[Tensor],
    eps: f64,
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Contract(format!(
            "finite difference eps must lie in [1e-7, 1e-3], got {eps}"
        )));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    if !tape.value(out).is_scalar() {
        return Err(Error::Contract("checked function must be scalar".into()));
    }
    let grads = tape.backward(out)?;

    let eval = |pts: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = pts.iter().map(|p| t.leaf(p.clone())).collect();
        let o = build(&mut t, &vs)?;
        t.value(o).scalar_value()
    };

    let mut worst = 0.0f64;
    for (li, leaf) in leaves.iter().enumerate() {
        let analytic = grads.grad(vars[li]);
        for i in 0..leaf.numel() {
            let mut plus = leaves.to_vec();
            plus[li].data_mut()[i] += eps;
            let mut minus = leaves.to_vec();
            minus[li].data_mut()[i] -= eps;
            let fd = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
            let a = analytic.data()[i];
            let denom = fd.abs().max(a.abs()).max(1e-8);
            worst = worst.max((fd - a).abs() / denom);
        }
    }
    Ok(worst)
}

/// Single-tensor form of [`finite_diff_check_multi`].
pub fn finite_diff_check(
    point: &Tensor,
    eps: f64,
    build: impl Fn(&mut Tape, Var) -> Result<Var>,
) -> Result<f64> {
    finite_diff_check_multi(std::slice::from_ref(point), eps, |tape, vars| {
        build(tape, vars[0])
    })
}
