//! Two-branch fusion network.
//!
//! Each modality runs through its own block stack; four projection
//! convolutions produce per-modality low-rank and salient parts; the parts are
//! concatenated per type in (visible, infrared) channel order and fused by two
//! convolutions; the output is the plain sum `I_f = L_f + S_f`. No
//! nonlinearities follow the projection or fusion convolutions, and nothing is
//! clamped inside the network; clamping to `[0, 1]` happens only when images
//! are exported.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::container::Container;
use crate::error::{Error, Result};
use crate::llrr::{
    self, LlrrBlockParams, LlrrStackParams, StackVars,
};
use crate::ops::{self, same_padding};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_N: usize = 32;
pub const DEFAULT_K: usize = 3;
pub const DEFAULT_T: usize = 4;

/// Trainable-parameter budget for the default configuration.
pub const PARAM_BUDGET: usize = 49_200;

/// Full parameter set: two stacks, four projections, two fusion kernels.
#[derive(Clone, Debug)]
pub struct LrrNetParams {
    pub branch_vi: LlrrStackParams,
    pub branch_ir: LlrrStackParams,
    /// Visible projections (low-rank, sparse), each `1 x N x k x k`.
    pub c11: Tensor,
    pub c12: Tensor,
    /// Infrared projections.
    pub c21: Tensor,
    pub c22: Tensor,
    /// Fusion kernels over the 2-channel concatenations, each `1 x 2 x k x k`.
    pub cf1: Tensor,
    pub cf2: Tensor,
}

impl LrrNetParams {
    /// Seeded initialization; both branches share the structure but draw
    /// independent values.
    pub fn init(n: usize, k: usize, t: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let branch_vi = LlrrStackParams::init(n, k, t, &mut rng)?;
        let branch_ir = LlrrStackParams::init(n, k, t, &mut rng)?;
        let proj = |rng: &mut ChaCha8Rng| llrr::init_kernel(vec![1, n, k, k], rng);
        let c11 = proj(&mut rng);
        let c12 = proj(&mut rng);
        let c21 = proj(&mut rng);
        let c22 = proj(&mut rng);
        let cf1 = llrr::init_kernel(vec![1, 2, k, k], &mut rng);
        let cf2 = llrr::init_kernel(vec![1, 2, k, k], &mut rng);
        Ok(LrrNetParams {
            branch_vi,
            branch_ir,
            c11,
            c12,
            c21,
            c22,
            cf1,
            cf2,
        })
    }

    pub fn default_init(seed: u64) -> Result<Self> {
        LrrNetParams::init(DEFAULT_N, DEFAULT_K, DEFAULT_T, seed)
    }

    pub fn n(&self) -> usize {
        self.branch_vi.n
    }

    pub fn k(&self) -> usize {
        self.branch_vi.k
    }

    pub fn depth(&self) -> usize {
        self.branch_vi.depth()
    }

    /// Total scalar count across kernels, thresholds, and residual weights.
    pub fn param_count(&self) -> usize {
        self.branch_vi.param_count()
            + self.branch_ir.param_count()
            + self.c11.numel()
            + self.c12.numel()
            + self.c21.numel()
            + self.c22.numel()
            + self.cf1.numel()
            + self.cf2.numel()
    }

    /// FNV-1a over the structural configuration.
    pub fn config_hash(&self) -> String {
        let text = format!("lrrnet/n{}/k{}/t{}", self.n(), self.k(), self.depth());
        let mut h: u64 = 0xcbf29ce484222325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }

    /// Visits every parameter tensor in serialization order.
    pub fn for_each(&self, mut f: impl FnMut(&str, &Tensor)) {
        let stack = |prefix: &str, s: &LlrrStackParams, f: &mut dyn FnMut(&str, &Tensor)| {
            f(&format!("{prefix}.c0"), &s.c0);
            f(&format!("{prefix}.theta0"), &s.theta0);
            for (i, b) in s.blocks.iter().enumerate() {
                f(&format!("{prefix}.b{i}.c1"), &b.c1);
                f(&format!("{prefix}.b{i}.c2"), &b.c2);
                f(&format!("{prefix}.b{i}.theta"), &b.theta);
                f(&format!("{prefix}.b{i}.lam3"), &b.lam3);
            }
        };
        stack("vi", &self.branch_vi, &mut f);
        stack("ir", &self.branch_ir, &mut f);
        f("proj.c11", &self.c11);
        f("proj.c12", &self.c12);
        f("proj.c21", &self.c21);
        f("proj.c22", &self.c22);
        f("fuse.cf1", &self.cf1);
        f("fuse.cf2", &self.cf2);
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor)) {
        let stack = |prefix: &str, s: &mut LlrrStackParams, f: &mut dyn FnMut(&str, &mut Tensor)| {
            f(&format!("{prefix}.c0"), &mut s.c0);
            f(&format!("{prefix}.theta0"), &mut s.theta0);
            for (i, b) in s.blocks.iter_mut().enumerate() {
                f(&format!("{prefix}.b{i}.c1"), &mut b.c1);
                f(&format!("{prefix}.b{i}.c2"), &mut b.c2);
                f(&format!("{prefix}.b{i}.theta"), &mut b.theta);
                f(&format!("{prefix}.b{i}.lam3"), &mut b.lam3);
            }
        };
        stack("vi", &mut self.branch_vi, &mut f);
        stack("ir", &mut self.branch_ir, &mut f);
        f("proj.c11", &mut self.c11);
        f("proj.c12", &mut self.c12);
        f("proj.c21", &mut self.c21);
        f("proj.c22", &mut self.c22);
        f("fuse.cf1", &mut self.cf1);
        f("fuse.cf2", &mut self.cf2);
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.set_meta("model", "lrrnet");
        c.set_meta("n", self.n().to_string());
        c.set_meta("k", self.k().to_string());
        c.set_meta("t", self.depth().to_string());
        c.set_meta("config_hash", self.config_hash());
        self.for_each(|name, t| c.push(name, t.clone()));
        c
    }

    pub fn from_container(mut c: Container) -> Result<Self> {
        if c.meta("model") != Some("lrrnet") {
            return Err(Error::Manifest(format!(
                "container holds model {:?}, expected 'lrrnet'",
                c.meta("model")
            )));
        }
        let dim = |key: &str| -> Result<usize> {
            c.meta(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Manifest(format!("missing or invalid meta '{key}'")))
        };
        let (n, k, t) = (dim("n")?, dim("k")?, dim("t")?);

        let mut take = |name: String, shape: &[usize]| -> Result<Tensor> {
            let tensor = c
                .take(&name)
                .ok_or_else(|| Error::Manifest(format!("missing tensor '{name}'")))?;
            if tensor.shape() != shape {
                return Err(Error::Manifest(format!(
                    "tensor '{name}' has shape {:?}, expected {shape:?}",
                    tensor.shape()
                )));
            }
            Ok(tensor)
        };
        let mut stack = |prefix: &str| -> Result<LlrrStackParams> {
            let c0 = take(format!("{prefix}.c0"), &[2 * n, 1, k, k])?;
            let theta0 = take(format!("{prefix}.theta0"), &[2 * n])?;
            let mut blocks = Vec::with_capacity(t);
            for i in 0..t {
                blocks.push(LlrrBlockParams {
                    c1: take(format!("{prefix}.b{i}.c1"), &[1, 2 * n, k, k])?,
                    c2: take(format!("{prefix}.b{i}.c2"), &[2 * n, 1, k, k])?,
                    theta: take(format!("{prefix}.b{i}.theta"), &[2 * n])?,
                    lam3: take(format!("{prefix}.b{i}.lam3"), &[1])?,
                });
            }
            Ok(LlrrStackParams { c0, theta0, blocks, n, k })
        };
        let branch_vi = stack("vi")?;
        let branch_ir = stack("ir")?;
        let c11 = take("proj.c11".into(), &[1, n, k, k])?;
        let c12 = take("proj.c12".into(), &[1, n, k, k])?;
        let c21 = take("proj.c21".into(), &[1, n, k, k])?;
        let c22 = take("proj.c22".into(), &[1, n, k, k])?;
        let cf1 = take("fuse.cf1".into(), &[1, 2, k, k])?;
        let cf2 = take("fuse.cf2".into(), &[1, 2, k, k])?;
        Ok(LrrNetParams {
            branch_vi,
            branch_ir,
            c11,
            c12,
            c21,
            c22,
            cf1,
            cf2,
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        LrrNetParams::from_container(Container::load(path)?)
    }
}

/// Everything the forward pass produces, intermediates included.
#[derive(Clone, Debug)]
pub struct FusionOutput {
    pub fused: Tensor,
    pub low_rank: Tensor,
    pub salient: Tensor,
    /// Coefficient blocks `(L_x, S_x)` from the visible branch.
    pub vi_coeffs: (Tensor, Tensor),
    /// Coefficient blocks `(L_y, S_y)` from the infrared branch.
    pub ir_coeffs: (Tensor, Tensor),
    /// Projected parts from the visible branch.
    pub vi_parts: (Tensor, Tensor),
    /// Projected parts from the infrared branch.
    pub ir_parts: (Tensor, Tensor),
}

fn check_inputs(ir: &Tensor, vi: &Tensor) -> Result<()> {
    if ir.shape() != vi.shape() {
        return Err(Error::Shape(format!(
            "modality shapes differ: infrared {:?} vs visible {:?}",
            ir.shape(),
            vi.shape()
        )));
    }
    if ir.rank() != 3 || ir.shape()[0] != 1 {
        return Err(Error::Shape(format!(
            "inputs must be 1xHxW grayscale maps, got {:?}",
            ir.shape()
        )));
    }
    for (name, t) in [("infrared", ir), ("visible", vi)] {
        if t.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Contract(format!(
                "{name} image values must lie in [0, 1]"
            )));
        }
    }
    Ok(())
}

/// Fuses one infrared/visible pair.
pub fn fuse_forward(ir: &Tensor, vi: &Tensor, p: &LrrNetParams) -> Result<FusionOutput> {
    check_inputs(ir, vi)?;
    let n = p.n();
    let pad = same_padding(p.k());

    let z_x = llrr::stack_forward(vi, &p.branch_vi)?;
    let z_y = llrr::stack_forward(ir, &p.branch_ir)?;
    let vi_coeffs = (
        ops::slice_channels(&z_x, 0, n)?,
        ops::slice_channels(&z_x, n, 2 * n)?,
    );
    let ir_coeffs = (
        ops::slice_channels(&z_y, 0, n)?,
        ops::slice_channels(&z_y, n, 2 * n)?,
    );
    let vi_parts = llrr::split_project(&z_x, &p.c11, &p.c12)?;
    let ir_parts = llrr::split_project(&z_y, &p.c21, &p.c22)?;

    let cat_low = ops::concat_channels(&[&vi_parts.0, &ir_parts.0])?;
    let cat_sparse = ops::concat_channels(&[&vi_parts.1, &ir_parts.1])?;
    let low_rank = ops::conv2d(&cat_low, &p.cf1, pad)?;
    let salient = ops::conv2d(&cat_sparse, &p.cf2, pad)?;
    let fused = ops::add(&low_rank, &salient)?;

    Ok(FusionOutput {
        fused,
        low_rank,
        salient,
        vi_coeffs,
        ir_coeffs,
        vi_parts,
        ir_parts,
    })
}

/// Tape handles for every parameter, in serialization order.
#[derive(Clone, Debug)]
pub struct LrrNetVars {
    pub branch_vi: StackVars,
    pub branch_ir: StackVars,
    pub c11: Var,
    pub c12: Var,
    pub c21: Var,
    pub c22: Var,
    pub cf1: Var,
    pub cf2: Var,
    pub n: usize,
    pub k: usize,
}

impl LrrNetVars {
    pub fn register(tape: &mut Tape, p: &LrrNetParams) -> Self {
        LrrNetVars {
            branch_vi: StackVars::register(tape, &p.branch_vi),
            branch_ir: StackVars::register(tape, &p.branch_ir),
            c11: tape.leaf(p.c11.clone()),
            c12: tape.leaf(p.c12.clone()),
            c21: tape.leaf(p.c21.clone()),
            c22: tape.leaf(p.c22.clone()),
            cf1: tape.leaf(p.cf1.clone()),
            cf2: tape.leaf(p.cf2.clone()),
            n: p.n(),
            k: p.k(),
        }
    }

    /// `(name, var)` pairs matching [`LrrNetParams::for_each`] order.
    pub fn named(&self) -> Vec<(String, Var)> {
        let mut out = Vec::new();
        for (prefix, s) in [("vi", &self.branch_vi), ("ir", &self.branch_ir)] {
            out.push((format!("{prefix}.c0"), s.c0));
            out.push((format!("{prefix}.theta0"), s.theta0));
            for (i, b) in s.blocks.iter().enumerate() {
                out.push((format!("{prefix}.b{i}.c1"), b.c1));
                out.push((format!("{prefix}.b{i}.c2"), b.c2));
                out.push((format!("{prefix}.b{i}.theta"), b.theta));
                out.push((format!("{prefix}.b{i}.lam3"), b.lam3));
            }
        }
        out.push(("proj.c11".into(), self.c11));
        out.push(("proj.c12".into(), self.c12));
        out.push(("proj.c21".into(), self.c21));
        out.push(("proj.c22".into(), self.c22));
        out.push(("fuse.cf1".into(), self.cf1));
        out.push(("fuse.cf2".into(), self.cf2));
        out
    }
}

/// Fusion outputs as tape handles.
#[derive(Clone, Copy, Debug)]
pub struct FusedVars {
    pub fused: Var,
    pub low_rank: Var,
    pub salient: Var,
}

/// Differentiable forward pass. Mirrors [`fuse_forward`] bit for bit.
pub fn fuse_forward_taped(
    tape: &mut Tape,
    ir: Var,
    vi: Var,
    vars: &LrrNetVars,
) -> Result<FusedVars> {
    check_inputs(tape.value(ir), tape.value(vi))?;
    let pad = same_padding(vars.k);

    let z_x = llrr::stack_forward_taped(tape, vi, &vars.branch_vi)?;
    let z_y = llrr::stack_forward_taped(tape, ir, &vars.branch_ir)?;
    let (pl_vi, ps_vi) = llrr::split_project_taped(tape, z_x, vars.c11, vars.c12)?;
    let (pl_ir, ps_ir) = llrr::split_project_taped(tape, z_y, vars.c21, vars.c22)?;

    let cat_low = tape.concat_channels(&[pl_vi, pl_ir])?;
    let cat_sparse = tape.concat_channels(&[ps_vi, ps_ir])?;
    let low_rank = tape.conv2d(cat_low, vars.cf1, pad)?;
    let salient = tape.conv2d(cat_sparse, vars.cf2, pad)?;
    let fused = tape.add(low_rank, salient)?;
    Ok(FusedVars {
        fused,
        low_rank,
        salient,
    })
}
