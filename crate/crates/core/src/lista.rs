//! Matrix-form solver for the low-rank plus sparse decomposition
//! `X ~ D1 L + D2 S` by unrolled shrinkage-thresholding steps, together with
//! the classical per-step reference iteration and the nuclear-norm
//! factorization identity `||L||_* = min 1/2(||A||_F^2 + ||B||_F^2)` over
//! `A B = L`.

use crate::error::{Error, Result};
use crate::mat::{self, Mat};
use crate::ops::shrink;

/// Base (low-rank) and salient (sparse) dictionaries with a shared patch
/// dimension.
#[derive(Clone, Debug)]
pub struct DictionaryPair {
    d1: Mat,
    d2: Mat,
}

impl DictionaryPair {
    pub fn new(d1: Mat, d2: Mat) -> Result<Self> {
        if d1.rows() != d2.rows() {
            return Err(Error::Shape(format!(
                "dictionaries disagree on patch dimension: {} vs {}",
                d1.rows(),
                d2.rows()
            )));
        }
        if !d1.all_finite() || !d2.all_finite() {
            return Err(Error::NonFinite("dictionary entries".into()));
        }
        Ok(DictionaryPair { d1, d2 })
    }

    pub fn d1(&self) -> &Mat {
        &self.d1
    }

    pub fn d2(&self) -> &Mat {
        &self.d2
    }

    pub fn patch_dim(&self) -> usize {
        self.d1.rows()
    }

    pub fn m1(&self) -> usize {
        self.d1.cols()
    }

    pub fn m2(&self) -> usize {
        self.d2.cols()
    }

    /// Stacked dictionary `D = (D1, D2)`.
    pub fn stacked(&self) -> Mat {
        self.d1.hcat(&self.d2).expect("rows checked at construction")
    }
}

/// One decomposition instance: data, regularization weights, step size, and
/// iteration count.
#[derive(Clone, Debug)]
pub struct LlrrProblem {
    pub x: Mat,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub mu: f64,
    pub iterations: usize,
    /// When set, the full objective (nuclear-norm term included) is recorded
    /// per iterate. Off by default; the cheap surrogate trace is always kept.
    pub record_objective: bool,
}

impl LlrrProblem {
    pub fn new(
        x: Mat,
        lambda1: f64,
        lambda2: f64,
        lambda3: f64,
        mu: f64,
        iterations: usize,
    ) -> Result<Self> {
        if lambda1 < 0.0 || lambda2 < 0.0 {
            return Err(Error::Contract("lambda1 and lambda2 must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&lambda3) {
            return Err(Error::Contract(format!(
                "lambda3 must lie in [0, 1) so that 1 - lambda3 is in (0, 1], got {lambda3}"
            )));
        }
        if mu <= 0.0 {
            return Err(Error::Contract(format!("step size mu must be positive, got {mu}")));
        }
        if iterations == 0 {
            return Err(Error::Contract("iteration count must be at least 1".into()));
        }
        Ok(LlrrProblem {
            x,
            lambda1,
            lambda2,
            lambda3,
            mu,
            iterations,
            record_objective: false,
        })
    }

    pub fn lambda3_hat(&self) -> f64 {
        1.0 - self.lambda3
    }
}

/// Step size `0.9 / ||D^T D||_2` estimated by 50 power-iteration steps.
pub fn default_step_size(dict: &DictionaryPair) -> f64 {
    let d = dict.stacked();
    let gram = d.t().matmul(&d).expect("square gram");
    let top = mat::spectral_norm_sym(&gram, 50);
    if top < 1e-12 {
        1.0
    } else {
        0.9 / top
    }
}

/// Coefficients `Z` stacked as `(L; S)` with the split index fixed by the
/// dictionary widths.
#[derive(Clone, Debug)]
pub struct CoefficientSplit {
    z: Mat,
    m1: usize,
}

impl CoefficientSplit {
    pub fn new(z: Mat, m1: usize) -> Result<Self> {
        if m1 > z.rows() {
            return Err(Error::Shape(format!(
                "split index {m1} exceeds {} coefficient rows",
                z.rows()
            )));
        }
        Ok(CoefficientSplit { z, m1 })
    }

    pub fn z(&self) -> &Mat {
        &self.z
    }

    pub fn m1(&self) -> usize {
        self.m1
    }

    /// Low-rank block `L` (rows `[0, m1)`).
    pub fn low_rank(&self) -> Mat {
        self.z.row_block(0, self.m1).expect("checked at construction")
    }

    /// Sparse block `S` (rows `[m1, end)`).
    pub fn sparse(&self) -> Mat {
        self.z.row_block(self.m1, self.z.rows()).expect("checked at construction")
    }
}

/// Precomputed iteration operators `W_e = mu D^T` and
/// `H = lambda3_hat I - mu D^T D`.
#[derive(Clone, Debug)]
pub struct ListaOperators {
    pub w_e: Mat,
    pub h: Mat,
}

pub fn lista_operators(dict: &DictionaryPair, mu: f64, lambda3: f64) -> Result<ListaOperators> {
    let d = dict.stacked();
    let dt = d.t();
    let w_e = dt.scale(mu);
    let gram = dt.matmul(&d)?;
    let h = Mat::identity(gram.rows()).scale(1.0 - lambda3).sub(&gram.scale(mu))?;
    Ok(ListaOperators { w_e, h })
}

/// Threshold vector `mu * (lambda1 repeated m1; lambda2 repeated m2)`.
pub fn threshold_vector(dict: &DictionaryPair, mu: f64, lambda1: f64, lambda2: f64) -> Vec<f64> {
    let mut theta = vec![mu * lambda1; dict.m1()];
    theta.extend(vec![mu * lambda2; dict.m2()]);
    theta
}

fn shrink_rows(m: &Mat, theta: &[f64]) -> Result<Mat> {
    if theta.len() != m.rows() {
        return Err(Error::Shape(format!(
            "threshold vector has {} entries for {} rows",
            theta.len(),
            m.rows()
        )));
    }
    let mut out = m.clone();
    for i in 0..m.rows() {
        let t = theta[i].max(0.0);
        for j in 0..m.cols() {
            out.set(i, j, shrink(m.get(i, j), t));
        }
    }
    Ok(out)
}

/// One iteration `Z_t = h_theta(B + H Z_prev)`.
pub fn lista_step(z_prev: &Mat, b: &Mat, h: &Mat, theta: &[f64]) -> Result<Mat> {
    let pre = b.add(&h.matmul(z_prev)?)?;
    shrink_rows(&pre, theta)
}

/// Initial iterate `Z_0 = h_theta(W_e X)`.
pub fn lista_init(b: &Mat, theta: &[f64]) -> Result<Mat> {
    shrink_rows(b, theta)
}

/// Result of a matrix-mode decomposition run.
#[derive(Clone, Debug)]
pub struct MatrixDecomposition {
    pub p_l: Mat,
    pub p_s: Mat,
    pub split: CoefficientSplit,
    /// The objective the iteration itself descends, recorded per iterate:
    /// `1/2 ||X - D Z||_F^2 + (lambda3 / 2 mu) ||Z||_F^2 + lambda1 ||L||_1
    /// + lambda2 ||S||_1 + lambda3 (||D1||_F^2 + ||D2||_F^2)`. Non-increasing
    /// whenever `mu <= (1 - lambda3) / ||D^T D||_2`.
    pub iteration_objective_trace: Vec<f64>,
    /// Nuclear-norm objective per iterate when `record_objective` is set.
    pub objective_trace: Vec<f64>,
}

const DIVERGENCE_GROWTH: f64 = 1e6;

fn iteration_objective(
    x: &Mat,
    dict: &DictionaryPair,
    d: &Mat,
    z: &Mat,
    m1: usize,
    problem: &LlrrProblem,
) -> Result<f64> {
    let resid = x.sub(&d.matmul(z)?)?;
    let low = z.row_block(0, m1)?;
    let sparse = z.row_block(m1, z.rows())?;
    Ok(0.5 * resid.frob_sq()
        + (problem.lambda3 / (2.0 * problem.mu)) * z.frob_sq()
        + problem.lambda1 * low.l1_norm()
        + problem.lambda2 * sparse.l1_norm()
        + problem.lambda3 * (dict.d1.frob_sq() + dict.d2.frob_sq()))
}

fn run_iterations(
    problem: &LlrrProblem,
    dict: &DictionaryPair,
    recompute_operators: bool,
) -> Result<MatrixDecomposition> {
    let d = dict.stacked();
    if problem.x.rows() != d.rows() {
        return Err(Error::Shape(format!(
            "data has {} rows, dictionaries expect {}",
            problem.x.rows(),
            d.rows()
        )));
    }
    let m1 = dict.m1();
    let theta = threshold_vector(dict, problem.mu, problem.lambda1, problem.lambda2);
    let ops = lista_operators(dict, problem.mu, problem.lambda3)?;
    let b = ops.w_e.matmul(&problem.x)?;

    let mut z = lista_init(&b, &theta)?;
    let mut iteration_objective_trace = Vec::with_capacity(problem.iterations + 1);
    let mut objective_trace = Vec::new();
    let record = |z: &Mat, trace: &mut Vec<f64>, obj: &mut Vec<f64>| -> Result<f64> {
        let s = iteration_objective(&problem.x, dict, &d, z, m1, problem)?;
        trace.push(s);
        if problem.record_objective {
            let split = CoefficientSplit::new(z.clone(), m1)?;
            obj.push(objective_value(
                &problem.x,
                dict,
                &split,
                problem.lambda1,
                problem.lambda2,
                problem.lambda3,
            )?);
        }
        Ok(s)
    };
    let s0 = record(&z, &mut iteration_objective_trace, &mut objective_trace)?;
    let guard = DIVERGENCE_GROWTH * s0.max(1e-12);

    for t in 1..=problem.iterations {
        z = if recompute_operators {
            let fresh = lista_operators(dict, problem.mu, problem.lambda3)?;
            let fresh_b = fresh.w_e.matmul(&problem.x)?;
            lista_step(&z, &fresh_b, &fresh.h, &theta)?
        } else {
            lista_step(&z, &b, &ops.h, &theta)?
        };
        if !z.all_finite() {
            return Err(Error::Divergence {
                iteration: t,
                detail: "non-finite coefficient".into(),
            });
        }
        let s = record(&z, &mut iteration_objective_trace, &mut objective_trace)?;
        if s > guard {
            return Err(Error::Divergence {
                iteration: t,
                detail: format!("objective grew from {s0:.3e} to {s:.3e}"),
            });
        }
    }

    let split = CoefficientSplit::new(z, m1)?;
    let p_l = dict.d1.matmul(&split.low_rank())?;
    let p_s = dict.d2.matmul(&split.sparse())?;
    Ok(MatrixDecomposition {
        p_l,
        p_s,
        split,
        iteration_objective_trace,
        objective_trace,
    })
}

/// Runs `T` precomputed-operator steps from `Z_0 = h_theta(W_e X)` and
/// projects the blocks back through the dictionaries.
pub fn llrr_decompose_matrix(
    problem: &LlrrProblem,
    dict: &DictionaryPair,
) -> Result<MatrixDecomposition> {
    run_iterations(problem, dict, false)
}

/// Classical reference iteration: the same update rule with `W_e` and `H`
/// re-derived from the dictionary at every step.
pub fn ista_reference(problem: &LlrrProblem, dict: &DictionaryPair) -> Result<MatrixDecomposition> {
    run_iterations(problem, dict, true)
}

/// Objective `1/2 ||X - D Z||_F^2 + lambda3 (||D1||_F^2 + ||D2||_F^2)
/// + lambda1 ||L||_* + lambda2 ||S||_1`.
pub fn objective_value(
    x: &Mat,
    dict: &DictionaryPair,
    split: &CoefficientSplit,
    lambda1: f64,
    lambda2: f64,
    lambda3: f64,
) -> Result<f64> {
    if split.m1() != dict.m1() || split.z().rows() != dict.m1() + dict.m2() {
        return Err(Error::Shape(format!(
            "split ({} rows, m1={}) inconsistent with dictionaries (m1={}, m2={})",
            split.z().rows(),
            split.m1(),
            dict.m1(),
            dict.m2()
        )));
    }
    let d = dict.stacked();
    let resid = x.sub(&d.matmul(split.z())?)?;
    let data_term = 0.5 * resid.frob_sq();
    let dict_term = lambda3 * (dict.d1.frob_sq() + dict.d2.frob_sq());
    let low_term = lambda1 * mat::nuclear_norm(&split.low_rank());
    let sparse_term = lambda2 * split.sparse().l1_norm();
    Ok(data_term + dict_term + low_term + sparse_term)
}

/// Minimizes `1/2 ||A||_F^2 + 1/2 ||B||_F^2` subject to `A B = L` by
/// alternating ridge solves under a growing quadratic penalty; the minimum
/// equals the nuclear norm of `L`. `growth` scales the penalty weight between
/// sweeps. Returns the best value and whether the sweep-to-sweep change fell
/// below tolerance within the iteration budget.
pub fn nuclear_norm_via_factorization(
    l: &Mat,
    r: usize,
    iters: usize,
    growth: f64,
) -> Result<(f64, bool)> {
    if r == 0 || iters == 0 {
        return Err(Error::Contract("factor rank and iteration budget must be positive".into()));
    }
    if growth <= 1.0 {
        return Err(Error::Contract(format!(
            "penalty growth must exceed 1, got {growth}"
        )));
    }
    let scale = l.frob_sq().sqrt();
    if scale == 0.0 {
        return Ok((0.0, true));
    }
    let ln = l.scale(1.0 / scale);
    let (m, n) = (ln.rows(), ln.cols());

    // Dense deterministic start keeps both factors generic.
    let mut lcg: u64 = 0x9e3779b97f4a7c15;
    let mut next = || {
        lcg = lcg.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((lcg >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
    };
    let mut b = Mat::from_fn(r, n, |_, _| next());
    let mut a;

    const RHO_MAX: f64 = 1e6;
    let mut rho: f64 = 1.0;
    let mut value = f64::INFINITY;
    let mut converged = false;

    for _ in 0..iters {
        // A-step: (I + rho B B^T) A^T = rho B L^T, solved row by row of A.
        let m_a = Mat::identity(r).add(&b.matmul(&b.t())?.scale(rho))?;
        let rhs_a = ln.matmul(&b.t())?.scale(rho); // m x r
        let mut a_new = Mat::zeros(m, r);
        for i in 0..m {
            let row = rhs_a.data()[i * r..(i + 1) * r].to_vec();
            let sol = mat::solve_spd(m_a.clone(), row)?;
            a_new.data_mut()[i * r..(i + 1) * r].copy_from_slice(&sol);
        }
        a = a_new;

        // B-step: (I + rho A^T A) B = rho A^T L, solved column by column.
        let m_b = Mat::identity(r).add(&a.t().matmul(&a)?.scale(rho))?;
        let rhs_b = a.t().matmul(&ln)?.scale(rho); // r x n
        let mut b_new = Mat::zeros(r, n);
        for j in 0..n {
            let col: Vec<f64> = (0..r).map(|i| rhs_b.get(i, j)).collect();
            let sol = mat::solve_spd(m_b.clone(), col)?;
            for i in 0..r {
                b_new.set(i, j, sol[i]);
            }
        }
        b = b_new;

        // Re-balance the factors: the alternating solves leave the product
        // nearly unchanged but split its energy unevenly, and that imbalance
        // decays only at rate 1/rho on its own.
        let (a_bal, b_bal) = balance_factors(&a, &b)?;
        a = a_bal;
        b = b_bal;

        let v = 0.5 * (a.frob_sq() + b.frob_sq());
        if rho >= RHO_MAX && (value - v).abs() <= 1e-8 * v.max(1.0) {
            value = v;
            converged = true;
            break;
        }
        value = v;
        rho = (rho * growth).min(RHO_MAX);
    }

    Ok((value * scale, converged))
}

fn symmetrize(m: &Mat) -> Mat {
    m.add(&m.t()).expect("square").scale(0.5)
}

/// Inverse of a small SPD matrix by Cholesky column solves, with a jittered
/// retry ladder for near-singular inputs.
fn inv_spd(m: &Mat) -> Mat {
    let r = m.rows();
    let tr: f64 = (0..r).map(|i| m.get(i, i)).sum::<f64>().abs().max(1e-300);
    let mut work = m.clone();
    for attempt in 0..6 {
        let mut out = Mat::zeros(r, r);
        let mut ok = true;
        for j in 0..r {
            let mut e = vec![0.0; r];
            e[j] = 1.0;
            match mat::solve_spd(work.clone(), e) {
                Ok(col) => {
                    for i in 0..r {
                        out.set(i, j, col[i]);
                    }
                }
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return out;
        }
        let jitter = 1e-12 * 10f64.powi(attempt) * tr / r as f64;
        work = m.add(&Mat::identity(r).scale(jitter)).expect("square");
    }
    Mat::identity(r)
}

/// Denman-Beavers iteration: returns `(M^(1/2), M^(-1/2))` for SPD `M`.
fn db_sqrt(m: &Mat, iters: usize) -> (Mat, Mat) {
    let r = m.rows();
    let tr: f64 = (0..r).map(|i| m.get(i, i)).sum::<f64>().max(1e-300);
    let s = tr / r as f64;
    let mut y = m.scale(1.0 / s);
    let mut z = Mat::identity(r);
    for _ in 0..iters {
        let y_inv = inv_spd(&y);
        let z_inv = inv_spd(&z);
        let y_next = y.add(&z_inv).expect("square").scale(0.5);
        let z_next = z.add(&y_inv).expect("square").scale(0.5);
        y = symmetrize(&y_next);
        z = symmetrize(&z_next);
    }
    (y.scale(s.sqrt()), z.scale(1.0 / s.sqrt()))
}

/// Minimizes `1/2 ||A T||_F^2 + 1/2 ||T^-1 B||_F^2` over invertible `T`
/// without touching the product: with `X = T T^T` the optimum solves the
/// Riccati identity `X (A^T A) X = B B^T`, here via matrix square roots.
fn balance_factors(a: &Mat, b: &Mat) -> Result<(Mat, Mat)> {
    let r = a.cols();
    let reg = |g: &Mat| {
        let tr: f64 = (0..r).map(|i| g.get(i, i)).sum::<f64>().max(1e-300);
        g.add(&Mat::identity(r).scale(1e-9 * tr / r as f64)).expect("square")
    };
    let ga = reg(&symmetrize(&a.t().matmul(a)?));
    let gb = reg(&symmetrize(&b.matmul(&b.t())?));
    let (s_half, s_inv) = db_sqrt(&ga, 40);
    let w = reg(&symmetrize(&s_half.matmul(&gb)?.matmul(&s_half)?));
    let (w_half, _) = db_sqrt(&w, 40);
    let x = reg(&symmetrize(&s_inv.matmul(&w_half)?.matmul(&s_inv)?));
    let (t, t_inv) = db_sqrt(&x, 40);
    Ok((a.matmul(&t)?, t_inv.matmul(b)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn random_dict(rng: &mut ChaCha8Rng, n: usize, m1: usize, m2: usize) -> DictionaryPair {
        DictionaryPair::new(random_mat(rng, n, m1), random_mat(rng, n, m2)).unwrap()
    }

    /// Gram-Schmidt columns of a random square matrix.
    fn orthonormal_dict(rng: &mut ChaCha8Rng, n: usize) -> DictionaryPair {
        let mut cols: Vec<Vec<f64>> = Vec::new();
        while cols.len() < n {
            let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for c in &cols {
                let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                for (vi, ci) in v.iter_mut().zip(c) {
                    *vi -= dot * ci;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                for vi in &mut v {
                    *vi /= norm;
                }
                cols.push(v);
            }
        }
        let m1 = n / 2;
        let d1 = Mat::from_fn(n, m1, |i, j| cols[j][i]);
        let d2 = Mat::from_fn(n, n - m1, |i, j| cols[m1 + j][i]);
        DictionaryPair::new(d1, d2).unwrap()
    }

    #[test]
    fn first_step_from_zero_equals_shrunk_b() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let dict = random_dict(&mut rng, 6, 3, 3);
        let x = random_mat(&mut rng, 6, 2);
        let mu = default_step_size(&dict);
        let ops = lista_operators(&dict, mu, 0.1).unwrap();
        let theta = threshold_vector(&dict, mu, 0.2, 0.3);
        let b = ops.w_e.matmul(&x).unwrap();
        let z0 = Mat::zeros(6, 2);
        let stepped = lista_step(&z0, &b, &ops.h, &theta).unwrap();
        let init = lista_init(&b, &theta).unwrap();
        assert_eq!(stepped.data(), init.data());
    }

    #[test]
    fn zero_threshold_gives_pure_linear_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let dict = random_dict(&mut rng, 5, 2, 3);
        let x = random_mat(&mut rng, 5, 2);
        let mu = default_step_size(&dict);
        let ops = lista_operators(&dict, mu, 0.05).unwrap();
        let b = ops.w_e.matmul(&x).unwrap();
        let z = random_mat(&mut rng, 5, 2);
        let out = lista_step(&z, &b, &ops.h, &[0.0; 5]).unwrap();
        let linear = b.add(&ops.h.matmul(&z).unwrap()).unwrap();
        assert_eq!(out.data(), linear.data());
    }

    #[test]
    fn step_matches_expanded_residual_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let dict = random_dict(&mut rng, 6, 3, 3);
        let x = random_mat(&mut rng, 6, 2);
        let mu = 0.35;
        let lambda3 = 0.1;
        let ops = lista_operators(&dict, mu, lambda3).unwrap();
        let theta = threshold_vector(&dict, mu, 0.2, 0.4);
        let b = ops.w_e.matmul(&x).unwrap();
        let z = random_mat(&mut rng, 6, 2);
        let direct = lista_step(&z, &b, &ops.h, &theta).unwrap();

        // h_theta(W_e (X - D Z) + lambda3_hat Z)
        let d = dict.stacked();
        let resid = x.sub(&d.matmul(&z).unwrap()).unwrap();
        let pre = ops
            .w_e
            .matmul(&resid)
            .unwrap()
            .add(&z.scale(1.0 - lambda3))
            .unwrap();
        let expanded = shrink_rows(&pre, &theta).unwrap();
        for (a, b) in direct.data().iter().zip(expanded.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_data_decomposes_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let dict = random_dict(&mut rng, 6, 3, 3);
        let problem =
            LlrrProblem::new(Mat::zeros(6, 3), 0.1, 0.1, 0.1, default_step_size(&dict), 5).unwrap();
        let out = llrr_decompose_matrix(&problem, &dict).unwrap();
        assert!(out.p_l.data().iter().all(|&v| v == 0.0));
        assert!(out.p_s.data().iter().all(|&v| v == 0.0));
        assert!(out.split.z().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn orthonormal_dictionary_reconstructs_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let dict = orthonormal_dict(&mut rng, 8);
        let x = random_mat(&mut rng, 8, 4);
        let problem = LlrrProblem::new(x.clone(), 1e-6, 1e-6, 0.0, 1.0, 50).unwrap();
        let out = llrr_decompose_matrix(&problem, &dict).unwrap();
        let recon = out.p_l.add(&out.p_s).unwrap();
        let err = recon.sub(&x).unwrap().frob_sq().sqrt() / x.frob_sq().sqrt();
        assert!(err <= 1e-3, "reconstruction error {err}");
    }

    #[test]
    fn objective_trace_is_non_increasing_with_safe_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let dict = random_dict(&mut rng, 8, 4, 4);
        let x = random_mat(&mut rng, 8, 4);
        let mut problem =
            LlrrProblem::new(x, 0.1, 0.1, 0.1, default_step_size(&dict), 20).unwrap();
        problem.record_objective = true;
        let out = llrr_decompose_matrix(&problem, &dict).unwrap();
        for w in out.objective_trace.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0),
                "objective increased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn objective_value_special_cases_and_duplicate_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let dict = random_dict(&mut rng, 6, 3, 2);
        let zero_split = CoefficientSplit::new(Mat::zeros(5, 3), 3).unwrap();
        let v = objective_value(&Mat::zeros(6, 3), &dict, &zero_split, 0.3, 0.4, 0.25).unwrap();
        let expect = 0.25 * (dict.d1().frob_sq() + dict.d2().frob_sq());
        assert!((v - expect).abs() <= 1e-12);

        let x = random_mat(&mut rng, 6, 3);
        let z = random_mat(&mut rng, 5, 3);
        let split = CoefficientSplit::new(z.clone(), 3).unwrap();
        let pure = objective_value(&x, &dict, &split, 0.0, 0.0, 0.0).unwrap();
        let resid = x.sub(&dict.stacked().matmul(&z).unwrap()).unwrap();
        assert!((pure - 0.5 * resid.frob_sq()).abs() <= 1e-12);

        // Independently assembled formula.
        let (l1, l2, l3) = (0.7, 0.2, 0.05);
        let v = objective_value(&x, &dict, &split, l1, l2, l3).unwrap();
        let mut dup = 0.5 * resid.frob_sq();
        dup += l3 * (dict.d1().frob_sq() + dict.d2().frob_sq());
        dup += l1 * crate::mat::nuclear_norm(&split.low_rank());
        dup += l2 * split.sparse().l1_norm();
        assert!((v - dup).abs() <= 1e-12 * dup.max(1.0));
    }

    #[test]
    fn factorization_recovers_simple_nuclear_norms() {
        let (v, ok) = nuclear_norm_via_factorization(&Mat::identity(2), 2, 60, 10.0).unwrap();
        assert!(ok);
        assert!((v - 2.0).abs() <= 2e-3, "identity nuclear norm {v}");

        let u = [1.0, -2.0, 0.5];
        let w = [3.0, 1.0];
        let m = Mat::from_fn(3, 2, |i, j| u[i] * w[j]);
        let expect = (5.25f64).sqrt() * (10.0f64).sqrt();
        let (v, ok) = nuclear_norm_via_factorization(&m, 2, 60, 10.0).unwrap();
        assert!(ok);
        assert!((v - expect).abs() <= 1e-3 * expect, "{v} vs {expect}");
    }

    #[test]
    fn factorization_matches_svd_oracle_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        for _ in 0..10 {
            let m = random_mat(&mut rng, 8, 8);
            let oracle = crate::mat::nuclear_norm(&m);
            let (v, _) = nuclear_norm_via_factorization(&m, 8, 80, 10.0).unwrap();
            assert!(
                (v - oracle).abs() <= 1e-3 * oracle,
                "factorization {v} vs svd {oracle}"
            );
            assert!(v >= oracle - 1e-3 * oracle);
        }
    }

    #[test]
    fn reference_iteration_matches_precomputed_operators() {
        let mut rng = ChaCha8Rng::seed_from_u64(49);
        for _ in 0..5 {
            let dict = random_dict(&mut rng, 6, 3, 3);
            let x = random_mat(&mut rng, 6, 3);
            let problem =
                LlrrProblem::new(x, 0.2, 0.15, 0.1, default_step_size(&dict), 8).unwrap();
            let fast = llrr_decompose_matrix(&problem, &dict).unwrap();
            let slow = ista_reference(&problem, &dict).unwrap();
            for (a, b) in fast.split.z().data().iter().zip(slow.split.z().data()) {
                assert!((a - b).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn huge_sparsity_penalty_zeroes_sparse_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let dict = random_dict(&mut rng, 6, 3, 3);
        let x = random_mat(&mut rng, 6, 2);
        let problem = LlrrProblem::new(x, 0.1, 1e12, 0.1, default_step_size(&dict), 10).unwrap();
        let out = ista_reference(&problem, &dict).unwrap();
        assert!(out.split.sparse().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spectral_bound_violation_raises_divergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        // Ill-conditioned dictionary with a huge step size.
        let base = random_mat(&mut rng, 6, 3).scale(50.0);
        let dict = DictionaryPair::new(base.clone(), base.scale(0.9)).unwrap();
        let x = random_mat(&mut rng, 6, 2);
        let problem = LlrrProblem::new(x, 0.0, 0.0, 0.0, 1.0, 100).unwrap();
        match ista_reference(&problem, &dict) {
            Err(Error::Divergence { iteration, .. }) => assert!(iteration >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn power_of_two_scaling_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let dict = random_dict(&mut rng, 6, 3, 3);
        let x = random_mat(&mut rng, 6, 3);
        let mu = default_step_size(&dict);
        let base = LlrrProblem::new(x.clone(), 0.1, 0.2, 0.1, mu, 6).unwrap();
        let scaled = LlrrProblem::new(x.scale(2.0), 0.2, 0.4, 0.1, mu, 6).unwrap();
        let a = llrr_decompose_matrix(&base, &dict).unwrap();
        let b = llrr_decompose_matrix(&scaled, &dict).unwrap();
        for (u, v) in a.p_l.data().iter().zip(b.p_l.data()) {
            assert_eq!(2.0 * u, *v);
        }
        for (u, v) in a.p_s.data().iter().zip(b.p_s.data()) {
            assert_eq!(2.0 * u, *v);
        }
    }
}

