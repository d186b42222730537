//! Finite-difference audit of every differentiable operation plus the full
//! fusion-and-loss composite.
//!
//! Inputs are drawn from the given seed; a candidate draw is rejected and
//! redrawn (deterministically, by advancing the stream) whenever any recorded
//! value sits within `KINK_MARGIN` of a nondifferentiable point, so the audit
//! passes for any seed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::Backbone;
use crate::error::{Error, Result};
use crate::llrr::{BlockVars, StackVars};
use crate::loss::{loss_total_taped, LossConfig};
use crate::lrrnet::{fuse_forward_taped, LrrNetParams, LrrNetVars};
use crate::tape::{finite_diff_check_multi, Tape, Var};
use crate::tensor::Tensor;

pub const TOLERANCE: f64 = 1e-5;
const KINK_MARGIN: f64 = 1e-3;
const FD_EPS: f64 = 1e-5;
// The composite tape records tens of thousands of activation values, so its
// clearance is looser than the single-op cases.
const COMPOSITE_MARGIN: f64 = 3e-4;
const COMPOSITE_EPS: f64 = 1e-5;
const MAX_REDRAWS: u64 = 64;

/// Worst relative error per audited operation.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub entries: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.entries.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.worst() <= TOLERANCE
    }
}

fn draw(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| crate::rng::uniform(rng, lo, hi)).collect();
    Tensor::new(shape, data).expect("draw shape")
}

/// Redraws inputs until the recorded tape stays clear of kinks, then reports
/// the finite-difference error over all leaves.
fn checked_case_with(
    seed: u64,
    margin: f64,
    eps: f64,
    make: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 0..MAX_REDRAWS {
        rng.set_stream(attempt);
        let leaves = make(&mut rng);
        let mut probe = Tape::new();
        let vars: Vec<Var> = leaves.iter().map(|t| probe.leaf(t.clone())).collect();
        build(&mut probe, &vars)?;
        if probe.kink_margin() <= margin {
            continue;
        }
        return finite_diff_check_multi(&leaves, eps, &build);
    }
    Err(Error::Contract(
        "could not find a kink-free sample for the gradient audit".into(),
    ))
}

fn checked_case(
    seed: u64,
    make: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<f64> {
    checked_case_with(seed, KINK_MARGIN, FD_EPS, make, build)
}

/// Rebuilds stack handles from a flat leaf list laid out in serialization
/// order starting at `*idx`.
fn take_stack(vs: &[Var], idx: &mut usize, depth: usize, k: usize) -> StackVars {
    let c0 = vs[*idx];
    let theta0 = vs[*idx + 1];
    *idx += 2;
    let mut blocks = Vec::with_capacity(depth);
    for _ in 0..depth {
        blocks.push(BlockVars {
            c1: vs[*idx],
            c2: vs[*idx + 1],
            theta: vs[*idx + 2],
            lam3: vs[*idx + 3],
        });
        *idx += 4;
    }
    StackVars { c0, theta0, blocks, k }
}

/// Audits every operation; `inject_bug` corrupts one reported error so the
/// negative control fails.
pub fn run(seed: u64, inject_bug: bool) -> Result<GradCheckReport> {
    let mut entries = Vec::new();

    let conv = checked_case(
        seed,
        |rng| {
            vec![
                draw(rng, vec![2, 6, 6], -1.0, 1.0),
                draw(rng, vec![3, 2, 3, 3], -1.0, 1.0),
            ]
        },
        |t, vs| {
            let y = t.conv2d(vs[0], vs[1], 1)?;
            Ok(t.sum_squares(y))
        },
    )?;
    entries.push(("conv2d".into(), if inject_bug { conv + 1.0 } else { conv }));

    entries.push((
        "soft_threshold".into(),
        checked_case(
            seed.wrapping_add(1),
            |rng| {
                vec![
                    draw(rng, vec![2, 5, 5], -1.0, 1.0),
                    draw(rng, vec![2], 0.05, 0.3),
                ]
            },
            |t, vs| {
                let y = t.soft_threshold(vs[0], vs[1])?;
                Ok(t.sum_squares(y))
            },
        )?,
    ));

    entries.push((
        "gram".into(),
        checked_case(
            seed.wrapping_add(2),
            |rng| vec![draw(rng, vec![3, 4, 4], -1.0, 1.0)],
            |t, vs| {
                let g = t.gram(vs[0])?;
                Ok(t.sum_squares(g))
            },
        )?,
    ));

    entries.push((
        "relu".into(),
        checked_case(
            seed.wrapping_add(3),
            |rng| vec![draw(rng, vec![2, 4, 4], -1.0, 1.0)],
            |t, vs| {
                let y = t.relu(vs[0]);
                Ok(t.sum_squares(y))
            },
        )?,
    ));

    entries.push((
        "avg_pool2".into(),
        checked_case(
            seed.wrapping_add(4),
            |rng| vec![draw(rng, vec![2, 4, 4], -1.0, 1.0)],
            |t, vs| {
                let y = t.avg_pool2(vs[0])?;
                Ok(t.sum_squares(y))
            },
        )?,
    ));

    entries.push((
        "max_pool2".into(),
        checked_case(
            seed.wrapping_add(5),
            |rng| vec![draw(rng, vec![2, 4, 4], -1.0, 1.0)],
            |t, vs| {
                let y = t.max_pool2(vs[0])?;
                Ok(t.sum_squares(y))
            },
        )?,
    ));

    entries.push((
        "bias_add".into(),
        checked_case(
            seed.wrapping_add(6),
            |rng| {
                vec![
                    draw(rng, vec![3, 4, 4], -1.0, 1.0),
                    draw(rng, vec![3], -0.5, 0.5),
                ]
            },
            |t, vs| {
                let y = t.bias_add(vs[0], vs[1])?;
                Ok(t.sum_squares(y))
            },
        )?,
    ));

    entries.push((
        "residual_scale".into(),
        checked_case(
            seed.wrapping_add(7),
            |rng| {
                vec![
                    draw(rng, vec![2, 4, 4], -1.0, 1.0),
                    draw(rng, vec![1], 0.3, 0.95),
                ]
            },
            |t, vs| {
                let lam = t.clamp(vs[1], crate::llrr::LAMBDA3_FLOOR, 1.0);
                let y = t.scale_by(vs[0], lam)?;
                Ok(t.sum_squares(y))
            },
        )?,
    ));

    entries.push((
        "block_forward".into(),
        checked_case(
            seed.wrapping_add(8),
            |rng| {
                let n = 2;
                vec![
                    draw(rng, vec![2 * n, 5, 5], -1.0, 1.0),
                    draw(rng, vec![1, 5, 5], 0.0, 1.0),
                    draw(rng, vec![1, 2 * n, 3, 3], -0.5, 0.5),
                    draw(rng, vec![2 * n, 1, 3, 3], -0.5, 0.5),
                    draw(rng, vec![2 * n], 0.05, 0.2),
                    draw(rng, vec![1], 0.5, 0.95),
                ]
            },
            |t, vs| {
                let block = BlockVars {
                    c1: vs[2],
                    c2: vs[3],
                    theta: vs[4],
                    lam3: vs[5],
                };
                let z = crate::llrr::block_forward_taped(t, vs[0], vs[1], &block, 3)?;
                Ok(t.sum_squares(z))
            },
        )?,
    ));

    entries.push((
        "stack_forward".into(),
        checked_case(
            seed.wrapping_add(9),
            |rng| {
                let n = 1;
                vec![
                    draw(rng, vec![1, 4, 4], 0.0, 1.0),
                    draw(rng, vec![2 * n, 1, 3, 3], -0.5, 0.5),
                    draw(rng, vec![2 * n], 0.02, 0.1),
                    draw(rng, vec![1, 2 * n, 3, 3], -0.5, 0.5),
                    draw(rng, vec![2 * n, 1, 3, 3], -0.5, 0.5),
                    draw(rng, vec![2 * n], 0.02, 0.1),
                    draw(rng, vec![1], 0.5, 0.95),
                ]
            },
            |t, vs| {
                let mut idx = 1;
                let stack = take_stack(vs, &mut idx, 1, 3);
                let z = crate::llrr::stack_forward_taped(t, vs[0], &stack)?;
                Ok(t.sum_squares(z))
            },
        )?,
    ));

    // Full composite: every network parameter through fusion and loss with
    // the tiny backbone on 1x16x16 inputs.
    let backbone = Backbone::tiny_test();
    let loss_cfg = LossConfig::default();
    // The loss targets derived from the source images are constants, so the
    // differentiated leaves are the network parameters alone; the images are
    // captured fixed per draw.
    let (n, k, depth) = (2usize, 3usize, 2usize);
    let mut composite = None;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(10));
    for attempt in 0..MAX_REDRAWS {
        rng.set_stream(attempt);
        let mut params = LrrNetParams::init(n, k, depth, rng.next_u64())?;
        // Spread thresholds and residual weights so redraws can clear the
        // activation kinks.
        params.for_each_mut(|name, t| {
            if name.ends_with("theta") || name.ends_with("theta0") {
                for v in t.data_mut() {
                    *v = crate::rng::uniform(&mut rng, 0.05, 0.25);
                }
            } else if name.ends_with("lam3") {
                t.data_mut()[0] = crate::rng::uniform(&mut rng, 0.4, 0.95);
            }
        });
        let ir = draw(&mut rng, vec![1, 16, 16], 0.0, 1.0);
        let vi = draw(&mut rng, vec![1, 16, 16], 0.0, 1.0);
        let mut leaves = Vec::new();
        params.for_each(|_, t| leaves.push(t.clone()));

        let build = |t: &mut Tape, vs: &[Var]| -> Result<Var> {
            let irv = t.leaf(ir.clone());
            let viv = t.leaf(vi.clone());
            let mut idx = 0;
            let branch_vi = take_stack(vs, &mut idx, depth, k);
            let branch_ir = take_stack(vs, &mut idx, depth, k);
            let vars = LrrNetVars {
                branch_vi,
                branch_ir,
                c11: vs[idx],
                c12: vs[idx + 1],
                c21: vs[idx + 2],
                c22: vs[idx + 3],
                cf1: vs[idx + 4],
                cf2: vs[idx + 5],
                n,
                k,
            };
            let fused = fuse_forward_taped(t, irv, viv, &vars)?;
            let (total, _) = loss_total_taped(t, fused.fused, &ir, &vi, &backbone, &loss_cfg)?;
            Ok(total)
        };

        let mut probe = Tape::new();
        let vars: Vec<Var> = leaves.iter().map(|t| probe.leaf(t.clone())).collect();
        build(&mut probe, &vars)?;
        if probe.kink_margin() <= COMPOSITE_MARGIN {
            continue;
        }
        composite = Some(finite_diff_check_multi(&leaves, COMPOSITE_EPS, build)?);
        break;
    }
    let composite = composite.ok_or_else(|| {
        Error::Contract("could not find a kink-free composite sample for the gradient audit".into())
    })?;
    entries.push(("fuse_forward+loss_total".into(), composite));

    Ok(GradCheckReport { entries })
}
