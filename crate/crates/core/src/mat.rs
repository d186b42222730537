//! Small dense matrices for the matrix-form solver.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn t(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let row = &other.data[k * other.cols..(k + 1) * other.cols];
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in orow.iter_mut().zip(row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Mat) -> Result<Mat> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Mat) -> Result<Mat> {
        self.zip(other, |a, b| a - b)
    }

    fn zip(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Result<Mat> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::Shape(format!(
                "elementwise op on {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Mat { rows: self.rows, cols: self.cols, data })
    }

    pub fn scale(&self, c: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| c * v).collect(),
        }
    }

    pub fn frob_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hcat(&self, other: &Mat) -> Result<Mat> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "hcat row mismatch {} vs {}",
                self.rows, other.rows
            )));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(&self.data[i * self.cols..(i + 1) * self.cols]);
            data.extend_from_slice(&other.data[i * other.cols..(i + 1) * other.cols]);
        }
        Ok(Mat { rows: self.rows, cols, data })
    }

    /// Vertical concatenation.
    pub fn vcat(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.cols {
            return Err(Error::Shape(format!(
                "vcat col mismatch {} vs {}",
                self.cols, other.cols
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Mat { rows: self.rows + other.rows, cols: self.cols, data })
    }

    /// Rows `[from, to)` as a new matrix.
    pub fn row_block(&self, from: usize, to: usize) -> Result<Mat> {
        if from > to || to > self.rows {
            return Err(Error::Shape(format!(
                "row block [{from}, {to}) out of range for {} rows",
                self.rows
            )));
        }
        Ok(Mat {
            rows: to - from,
            cols: self.cols,
            data: self.data[from * self.cols..to * self.cols].to_vec(),
        })
    }
}

/// Singular values by one-sided Jacobi rotations, descending order.
pub fn singular_values(m: &Mat) -> Vec<f64> {
    // Rotate columns; keep the column count small by transposing tall-thin free.
    let mut a = if m.rows >= m.cols { m.clone() } else { m.t() };
    let (rows, cols) = (a.rows, a.cols);
    let col = |a: &Mat, j: usize, i: usize| a.data[i * cols + j];

    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..rows {
                    let x = col(&a, p, i);
                    let y = col(&a, q, i);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt().max(1e-300));
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let x = col(&a, p, i);
                    let y = col(&a, q, i);
                    a.data[i * cols + p] = c * x - s * y;
                    a.data[i * cols + q] = s * x + c * y;
                }
            }
        }
        if off <= 1e-14 {
            break;
        }
    }

    let mut sv: Vec<f64> = (0..cols)
        .map(|j| (0..rows).map(|i| col(&a, j, i).powi(2)).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|x, y| y.partial_cmp(x).unwrap());
    sv
}

/// Nuclear norm (sum of singular values).
pub fn nuclear_norm(m: &Mat) -> f64 {
    singular_values(m).iter().sum()
}

/// Largest eigenvalue of the symmetric PSD matrix `m` by power iteration.
pub fn spectral_norm_sym(m: &Mat, iters: usize) -> f64 {
    let n = m.rows;
    if n == 0 {
        return 0.0;
    }
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = 0.0;
    for _ in 0..iters {
        let mut w = vec![0.0; n];
        for i in 0..n {
            let row = &m.data[i * n..(i + 1) * n];
            w[i] = row.iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-300 {
            return 0.0;
        }
        for x in &mut w {
            *x /= norm;
        }
        lambda = norm;
        v = w;
    }
    lambda
}

/// Solves the SPD system `m x = b` in place via Cholesky. `m` is consumed.
pub fn solve_spd(mut m: Mat, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = m.rows;
    if m.cols != n || b.len() != n {
        return Err(Error::Shape("solve_spd expects square system".into()));
    }
    // Lower Cholesky factor written into m.
    for j in 0..n {
        let mut d = m.get(j, j);
        for k in 0..j {
            d -= m.get(j, k) * m.get(j, k);
        }
        if d <= 0.0 {
            return Err(Error::Contract("matrix is not positive definite".into()));
        }
        let d = d.sqrt();
        m.set(j, j, d);
        for i in (j + 1)..n {
            let mut v = m.get(i, j);
            for k in 0..j {
                v -= m.get(i, k) * m.get(j, k);
            }
            m.set(i, j, v / d);
        }
    }
    // Forward then backward substitution.
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= m.get(i, k) * b[k];
        }
        b[i] = v / m.get(i, i);
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in (i + 1)..n {
            v -= m.get(k, i) * b[k];
        }
        b[i] = v / m.get(i, i);
    }
    Ok(b)
}
