//! Convolutional unrolled decomposition blocks.
//!
//! One block computes `Z_t = h_theta(C2 * (X - C1 * Z_prev) + lam3_hat * Z_prev)`
//! where `*` is a same-padded convolution. A stack maps one grayscale image to
//! a `2N x H x W` coefficient map whose first `N` channels are the low-rank
//! block and last `N` channels are the sparse block; projection kernels turn
//! the blocks back into image-domain parts.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::ops::{self, same_padding};
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Lower bound keeping the learnable residual weight inside `(0, 1]`.
pub const LAMBDA3_FLOOR: f64 = 1e-6;

pub const THETA_INIT: f64 = 0.01;
pub const LAMBDA3_INIT: f64 = 0.9;

/// Per-step trainable parameters of one block.
#[derive(Clone, Debug)]
pub struct LlrrBlockParams {
    /// Synthesis kernel `1 x 2N x k x k`; reconstructs the image from Z.
    pub c1: Tensor,
    /// Analysis kernel `2N x 1 x k x k`.
    pub c2: Tensor,
    /// Per-channel thresholds, clamped nonnegative at use.
    pub theta: Tensor,
    /// Residual weight, clamped to `(0, 1]` at use.
    pub lam3: Tensor,
}

/// Init convolution plus `T` untied blocks.
#[derive(Clone, Debug)]
pub struct LlrrStackParams {
    pub c0: Tensor,
    pub theta0: Tensor,
    pub blocks: Vec<LlrrBlockParams>,
    pub n: usize,
    pub k: usize,
}

/// Kernel entries drawn uniformly from `[-b, b]` with `b = (fan_in k^2)^(-1/2)`.
pub fn init_kernel(shape: Vec<usize>, rng: &mut impl RngCore) -> Tensor {
    let fan_in = shape[1];
    let k = shape[2];
    let bound = 1.0 / ((fan_in * k * k) as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| rng::uniform(rng, -bound, bound)).collect();
    let mut t = Tensor::new(shape, data).expect("kernel shape");
    t.quantize_f32();
    t
}

fn filled_f32(shape: Vec<usize>, value: f64) -> Tensor {
    let mut t = Tensor::filled(shape, value);
    t.quantize_f32();
    t
}

impl LlrrBlockParams {
    pub fn init(n: usize, k: usize, rng: &mut impl RngCore) -> Self {
        LlrrBlockParams {
            c1: init_kernel(vec![1, 2 * n, k, k], rng),
            c2: init_kernel(vec![2 * n, 1, k, k], rng),
            theta: filled_f32(vec![2 * n], THETA_INIT),
            lam3: filled_f32(vec![1], LAMBDA3_INIT),
        }
    }

    pub fn param_count(&self) -> usize {
        self.c1.numel() + self.c2.numel() + self.theta.numel() + self.lam3.numel()
    }
}

impl LlrrStackParams {
    pub fn init(n: usize, k: usize, t: usize, rng: &mut impl RngCore) -> Result<Self> {
        if n == 0 {
            return Err(Error::Contract("channel count per part must be positive".into()));
        }
        if k % 2 == 0 {
            return Err(Error::Contract(format!("kernel size must be odd, got {k}")));
        }
        if t == 0 {
            return Err(Error::Contract("stack needs at least one block".into()));
        }
        Ok(LlrrStackParams {
            c0: init_kernel(vec![2 * n, 1, k, k], rng),
            theta0: filled_f32(vec![2 * n], THETA_INIT),
            blocks: (0..t).map(|_| LlrrBlockParams::init(n, k, rng)).collect(),
            n,
            k,
        })
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn param_count(&self) -> usize {
        self.c0.numel()
            + self.theta0.numel()
            + self.blocks.iter().map(|b| b.param_count()).sum::<usize>()
    }
}

fn effective_lam3(lam3: &Tensor) -> f64 {
    lam3.data()[0].clamp(LAMBDA3_FLOOR, 1.0)
}

/// One block update on plain tensors.
pub fn block_forward(z_prev: &Tensor, x: &Tensor, p: &LlrrBlockParams) -> Result<Tensor> {
    let k = p.c1.shape()[2];
    let pad = same_padding(k);
    let recon = ops::conv2d(z_prev, &p.c1, pad)?;
    let resid = ops::sub(x, &recon)?;
    let analyzed = ops::conv2d(&resid, &p.c2, pad)?;
    let carried = ops::scale(z_prev, effective_lam3(&p.lam3));
    let pre = ops::add(&analyzed, &carried)?;
    ops::soft_threshold(&pre, p.theta.data())
}

/// Full stack: `Z_0 = h_theta0(C0 * X)` followed by every block in order.
pub fn stack_forward(x: &Tensor, p: &LlrrStackParams) -> Result<Tensor> {
    let pad = same_padding(p.k);
    let z0 = ops::conv2d(x, &p.c0, pad)?;
    let mut z = ops::soft_threshold(&z0, p.theta0.data())?;
    for block in &p.blocks {
        z = block_forward(&z, x, block)?;
    }
    Ok(z)
}

/// Projects the channel blocks of `Z` to the image-domain parts
/// `P_l = C_l * L` and `P_s = C_s * S`.
pub fn split_project(z: &Tensor, c_l: &Tensor, c_s: &Tensor) -> Result<(Tensor, Tensor)> {
    let n = c_l.shape()[1];
    let pad = same_padding(c_l.shape()[2]);
    let low = ops::slice_channels(z, 0, n)?;
    let sparse = ops::slice_channels(z, n, 2 * n)?;
    Ok((ops::conv2d(&low, c_l, pad)?, ops::conv2d(&sparse, c_s, pad)?))
}

/// Tape handles for one block's parameters.
#[derive(Clone, Copy, Debug)]
pub struct BlockVars {
    pub c1: Var,
    pub c2: Var,
    pub theta: Var,
    pub lam3: Var,
}

/// Tape handles for a stack's parameters, in serialization order.
#[derive(Clone, Debug)]
pub struct StackVars {
    pub c0: Var,
    pub theta0: Var,
    pub blocks: Vec<BlockVars>,
    pub k: usize,
}

impl StackVars {
    pub fn register(tape: &mut Tape, p: &LlrrStackParams) -> Self {
        StackVars {
            c0: tape.leaf(p.c0.clone()),
            theta0: tape.leaf(p.theta0.clone()),
            blocks: p
                .blocks
                .iter()
                .map(|b| BlockVars {
                    c1: tape.leaf(b.c1.clone()),
                    c2: tape.leaf(b.c2.clone()),
                    theta: tape.leaf(b.theta.clone()),
                    lam3: tape.leaf(b.lam3.clone()),
                })
                .collect(),
            k: p.k,
        }
    }
}

/// Differentiable block update. Mirrors [`block_forward`] bit for bit.
pub fn block_forward_taped(
    tape: &mut Tape,
    z_prev: Var,
    x: Var,
    vars: &BlockVars,
    k: usize,
) -> Result<Var> {
    let pad = same_padding(k);
    let recon = tape.conv2d(z_prev, vars.c1, pad)?;
    let resid = tape.sub(x, recon)?;
    let analyzed = tape.conv2d(resid, vars.c2, pad)?;
    let lam = tape.clamp(vars.lam3, LAMBDA3_FLOOR, 1.0);
    let carried = tape.scale_by(z_prev, lam)?;
    let pre = tape.add(analyzed, carried)?;
    tape.soft_threshold(pre, vars.theta)
}

/// Differentiable stack forward. Mirrors [`stack_forward`] bit for bit.
pub fn stack_forward_taped(tape: &mut Tape, x: Var, vars: &StackVars) -> Result<Var> {
    let pad = same_padding(vars.k);
    let z0 = tape.conv2d(x, vars.c0, pad)?;
    let mut z = tape.soft_threshold(z0, vars.theta0)?;
    for block in &vars.blocks {
        z = block_forward_taped(tape, z, x, block, vars.k)?;
    }
    Ok(z)
}

/// Differentiable split-and-project.
pub fn split_project_taped(
    tape: &mut Tape,
    z: Var,
    c_l: Var,
    c_s: Var,
) -> Result<(Var, Var)> {
    let n = tape.value(c_l).shape()[1];
    let pad = same_padding(tape.value(c_l).shape()[2]);
    let low = tape.slice_channels(z, 0, n)?;
    let sparse = tape.slice_channels(z, n, 2 * n)?;
    Ok((tape.conv2d(low, c_l, pad)?, tape.conv2d(sparse, c_s, pad)?))
}
