//! Forward kernels and their gradient counterparts.
//!
//! Every kernel is a pure function over [`Tensor`] values. The tape in
//! [`crate::tape`] records which kernel produced each node and replays the
//! matching gradient kernel during the backward pass, so both execution paths
//! share one set of numerics.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Padding that preserves spatial size for an odd kernel width.
pub fn same_padding(k: usize) -> usize {
    (k - 1) / 2
}

fn expect_map(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        s => Err(Error::Shape(format!("{what} must be CxHxW, got {s:?}"))),
    }
}

fn expect_kernel(t: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    match t.shape() {
        [o, c, kh, kw] => Ok((*o, *c, *kh, *kw)),
        s => Err(Error::Shape(format!(
            "{what} must be C_out x C_in x k x k, got {s:?}"
        ))),
    }
}

/// 2-D cross-correlation, stride 1, zero padding, no bias.
///
/// Input `C_in x H x W`, kernel `C_out x C_in x k x k`, output
/// `C_out x H' x W'` with `H' = H + 2*padding - k + 1`.
pub fn conv2d(input: &Tensor, kernel: &Tensor, padding: usize) -> Result<Tensor> {
    let (ci, h, w) = expect_map(input, "conv2d input")?;
    let (co, kc, kh, kw) = expect_kernel(kernel, "conv2d kernel")?;
    if kh != kw {
        return Err(Error::Shape(format!("kernel must be square, got {kh}x{kw}")));
    }
    if kh % 2 == 0 {
        return Err(Error::Contract(format!("kernel size must be odd, got {kh}")));
    }
    if kc != ci {
        return Err(Error::Shape(format!(
            "channel mismatch: input has {ci}, kernel expects {kc}"
        )));
    }
    let k = kh;
    let oh = (h + 2 * padding).checked_sub(k - 1).filter(|&v| v > 0);
    let ow = (w + 2 * padding).checked_sub(k - 1).filter(|&v| v > 0);
    let (oh, ow) = match (oh, ow) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Shape(format!(
                "conv2d output would be empty for input {h}x{w}, kernel {k}, padding {padding}"
            )))
        }
    };

    let x = input.data();
    let kd = kernel.data();
    let mut out = vec![0.0; co * oh * ow];
    // Each input channel is accumulated into a scratch plane first, so the
    // per-pixel sum is a plain sum of per-channel partials.
    let mut plane = vec![0.0; oh * ow];
    for o in 0..co {
        let out_base = o * oh * ow;
        for c in 0..ci {
            plane.iter_mut().for_each(|v| *v = 0.0);
            let in_base = c * h * w;
            let k_base = (o * ci + c) * k * k;
            for ky in 0..k {
                for kx in 0..k {
                    let wgt = kd[k_base + ky * k + kx];
                    if wgt == 0.0 {
                        continue;
                    }
                    // input row iy = y + ky - padding must lie in [0, h)
                    let y_lo = padding.saturating_sub(ky);
                    let y_hi = (h + padding - ky).min(oh);
                    let x_lo = padding.saturating_sub(kx);
                    let x_hi = (w + padding - kx).min(ow);
                    if x_lo >= x_hi {
                        continue;
                    }
                    for y in y_lo..y_hi {
                        let iy = y + ky - padding;
                        let src_start = in_base + iy * w + x_lo + kx - padding;
                        let src = &x[src_start..src_start + (x_hi - x_lo)];
                        let dst = &mut plane[y * ow + x_lo..y * ow + x_hi];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wgt * s;
                        }
                    }
                }
            }
            for (acc, p) in out[out_base..out_base + oh * ow].iter_mut().zip(&plane) {
                *acc += p;
            }
        }
    }
    Tensor::new(vec![co, oh, ow], out)
}

/// Gradient of conv2d w.r.t. its input.
pub fn conv2d_grad_input(
    grad_out: &Tensor,
    kernel: &Tensor,
    input_shape: &[usize],
    padding: usize,
) -> Result<Tensor> {
    let (co, oh, ow) = expect_map(grad_out, "conv2d grad_out")?;
    let (ko, ci, k, _) = expect_kernel(kernel, "conv2d kernel")?;
    debug_assert_eq!(co, ko);
    let (h, w) = (input_shape[1], input_shape[2]);
    let g = grad_out.data();
    let kd = kernel.data();
    let mut gin = vec![0.0; ci * h * w];
    for o in 0..co {
        let out_base = o * oh * ow;
        for c in 0..ci {
            let in_base = c * h * w;
            let k_base = (o * ci + c) * k * k;
            for ky in 0..k {
                for kx in 0..k {
                    let wgt = kd[k_base + ky * k + kx];
                    if wgt == 0.0 {
                        continue;
                    }
                    let y_lo = padding.saturating_sub(ky);
                    let y_hi = (h + padding - ky).min(oh);
                    let x_lo = padding.saturating_sub(kx);
                    let x_hi = (w + padding - kx).min(ow);
                    if x_lo >= x_hi {
                        continue;
                    }
                    for y in y_lo..y_hi {
                        let iy = y + ky - padding;
                        let src = &g[out_base + y * ow + x_lo..out_base + y * ow + x_hi];
                        let dst_start = in_base + iy * w + x_lo + kx - padding;
                        let dst = &mut gin[dst_start..dst_start + (x_hi - x_lo)];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wgt * s;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(input_shape.to_vec(), gin)
}

/// Gradient of conv2d w.r.t. its kernel.
pub fn conv2d_grad_kernel(
    grad_out: &Tensor,
    input: &Tensor,
    kernel_shape: &[usize],
    padding: usize,
) -> Result<Tensor> {
    let (co, oh, ow) = expect_map(grad_out, "conv2d grad_out")?;
    let (ci, h, w) = expect_map(input, "conv2d input")?;
    let k = kernel_shape[2];
    let g = grad_out.data();
    let x = input.data();
    let mut gk = vec![0.0; co * ci * k * k];
    for o in 0..co {
        let out_base = o * oh * ow;
        for c in 0..ci {
            let in_base = c * h * w;
            let k_base = (o * ci + c) * k * k;
            for ky in 0..k {
                for kx in 0..k {
                    let y_lo = padding.saturating_sub(ky);
                    let y_hi = (h + padding - ky).min(oh);
                    let x_lo = padding.saturating_sub(kx);
                    let x_hi = (w + padding - kx).min(ow);
                    if x_lo >= x_hi {
                        continue;
                    }
                    let mut acc = 0.0;
                    for y in y_lo..y_hi {
                        let iy = y + ky - padding;
                        let grad_row = &g[out_base + y * ow + x_lo..out_base + y * ow + x_hi];
                        let src_start = in_base + iy * w + x_lo + kx - padding;
                        let src = &x[src_start..src_start + (x_hi - x_lo)];
                        for (gv, xv) in grad_row.iter().zip(src) {
                            acc += gv * xv;
                        }
                    }
                    gk[k_base + ky * k + kx] += acc;
                }
            }
        }
    }
    Tensor::new(kernel_shape.to_vec(), gk)
}

/// Scalar shrinkage `sign(x) * max(|x| - theta, 0)`.
#[inline]
pub fn shrink(x: f64, theta: f64) -> f64 {
    let m = x.abs() - theta;
    if m > 0.0 {
        m.copysign(x)
    } else {
        0.0
    }
}

/// Per-channel soft threshold over a `C x H x W` map (or a flat vector when
/// `theta` has a single entry). Negative thresholds are clamped to zero at use.
pub fn soft_threshold(x: &Tensor, theta: &[f64]) -> Result<Tensor> {
    let plane = match x.shape() {
        [c, h, w] => {
            if theta.len() != *c {
                return Err(Error::Shape(format!(
                    "theta has {} entries, map has {c} channels",
                    theta.len()
                )));
            }
            h * w
        }
        _ if theta.len() == 1 => x.numel(),
        s => {
            return Err(Error::Shape(format!(
                "soft_threshold expects CxHxW or a single threshold, got shape {s:?}"
            )))
        }
    };
    let mut out = vec![0.0; x.numel()];
    for (c, &t_raw) in theta.iter().enumerate() {
        let t = t_raw.max(0.0);
        let base = c * plane;
        for i in 0..plane {
            out[base + i] = shrink(x.data()[base + i], t);
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Ramp activation `max(x, 0)`.
pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// 2x2 average pooling with stride 2. Requires even spatial dims.
pub fn avg_pool2(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = expect_map(x, "avg_pool2 input")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Size(format!(
            "avg_pool2 needs even spatial dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let d = x.data();
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for xo in 0..ow {
                let i = ch * h * w + 2 * y * w + 2 * xo;
                out[ch * oh * ow + y * ow + xo] = 0.25 * (d[i] + d[i + 1] + d[i + w] + d[i + w + 1]);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// 2x2 max pooling with stride 2. Returns the pooled map and the flat input
/// index chosen per cell (first maximum in scan order on ties).
pub fn max_pool2(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = expect_map(x, "max_pool2 input")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Size(format!(
            "max_pool2 needs even spatial dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let d = x.data();
    let mut out = vec![0.0; c * oh * ow];
    let mut arg = vec![0usize; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for xo in 0..ow {
                let i = ch * h * w + 2 * y * w + 2 * xo;
                let cand = [i, i + 1, i + w, i + w + 1];
                let mut best = cand[0];
                for &j in &cand[1..] {
                    if d[j] > d[best] {
                        best = j;
                    }
                }
                let o = ch * oh * ow + y * ow + xo;
                out[o] = d[best];
                arg[o] = best;
            }
        }
    }
    Ok((Tensor::new(vec![c, oh, ow], out)?, arg))
}

/// Adds a per-channel bias to a `C x H x W` map.
pub fn bias_add(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (c, h, w) = expect_map(x, "bias_add input")?;
    if bias.shape() != [c] {
        return Err(Error::Shape(format!(
            "bias shape {:?} does not match {c} channels",
            bias.shape()
        )));
    }
    let mut out = x.data().to_vec();
    for ch in 0..c {
        let b = bias.data()[ch];
        for v in &mut out[ch * h * w..(ch + 1) * h * w] {
            *v += b;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

fn check_same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape(a, b, "add operands")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape(a, b, "sub operands")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn scale(x: &Tensor, factor: f64) -> Tensor {
    x.map(|v| factor * v)
}

/// Concatenates `C_i x H x W` maps along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::Contract("concat of zero maps".into()));
    }
    let (_, h, w) = expect_map(parts[0], "concat part")?;
    let mut c_total = 0;
    for p in parts {
        let (c, ph, pw) = expect_map(p, "concat part")?;
        if (ph, pw) != (h, w) {
            return Err(Error::Shape(format!(
                "concat spatial mismatch: {h}x{w} vs {ph}x{pw}"
            )));
        }
        c_total += c;
    }
    let mut data = Vec::with_capacity(c_total * h * w);
    for p in parts {
        data.extend_from_slice(p.data());
    }
    Tensor::new(vec![c_total, h, w], data)
}

/// Extracts channels `[from, to)` of a `C x H x W` map.
pub fn slice_channels(x: &Tensor, from: usize, to: usize) -> Result<Tensor> {
    let (c, h, w) = expect_map(x, "slice input")?;
    if from >= to || to > c {
        return Err(Error::Shape(format!(
            "channel slice [{from}, {to}) out of range for {c} channels"
        )));
    }
    let data = x.data()[from * h * w..to * h * w].to_vec();
    Tensor::new(vec![to - from, h, w], data)
}

/// Gram matrix of a `C x H x W` feature map: flatten to `C x (H*W)` rows `F`
/// and return `F F^T / (H*W)`. Symmetric by construction; no mean subtraction.
pub fn gram(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = expect_map(x, "gram input")?;
    let n = h * w;
    if n == 0 || c == 0 {
        return Err(Error::Shape("gram input is empty".into()));
    }
    let d = x.data();
    let inv = 1.0 / n as f64;
    let mut out = vec![0.0; c * c];
    for i in 0..c {
        for j in i..c {
            let (ri, rj) = (&d[i * n..(i + 1) * n], &d[j * n..(j + 1) * n]);
            let dot: f64 = ri.iter().zip(rj).map(|(a, b)| a * b).sum();
            let v = dot * inv;
            out[i * c + j] = v;
            out[j * c + i] = v;
        }
    }
    Tensor::new(vec![c, c], out)
}

/// Gradient of `gram` w.r.t. the feature map.
pub fn gram_grad(grad_out: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = match x.shape() {
        [c, h, w] => (*c, *h, *w),
        s => return Err(Error::Shape(format!("gram input must be CxHxW, got {s:?}"))),
    };
    let n = h * w;
    let inv = 1.0 / n as f64;
    let g = grad_out.data();
    let d = x.data();
    // dF = (G + G^T) F / n
    let mut out = vec![0.0; c * n];
    for i in 0..c {
        for j in 0..c {
            let coef = (g[i * c + j] + g[j * c + i]) * inv;
            if coef == 0.0 {
                continue;
            }
            let rj = &d[j * n..(j + 1) * n];
            let ri = &mut out[i * n..(i + 1) * n];
            for (o, &v) in ri.iter_mut().zip(rj) {
                *o += coef * v;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub fn sum(x: &Tensor) -> f64 {
    x.data().iter().sum()
}

pub fn sum_squares(x: &Tensor) -> f64 {
    x.data().iter().map(|v| v * v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(shape, data).unwrap()
    }

    /// Direct six-loop cross-correlation used as the conv oracle.
    fn conv2d_naive(input: &Tensor, kernel: &Tensor, padding: usize) -> Tensor {
        let (ci, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (co, k) = (kernel.shape()[0], kernel.shape()[2]);
        let oh = h + 2 * padding - k + 1;
        let ow = w + 2 * padding - k + 1;
        let mut out = Tensor::zeros(vec![co, oh, ow]);
        for o in 0..co {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = y as isize + ky as isize - padding as isize;
                                let ix = x as isize + kx as isize - padding as isize;
                                if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                                    acc += input.data()[c * h * w + iy as usize * w + ix as usize]
                                        * kernel.data()[((o * ci + c) * k + ky) * k + kx];
                                }
                            }
                        }
                    }
                    out.data_mut()[o * oh * ow + y * ow + x] = acc;
                }
            }
        }
        out
    }

    fn identity_kernel(c: usize, k: usize) -> Tensor {
        let mut t = Tensor::zeros(vec![c, c, k, k]);
        let mid = (k / 2) * k + k / 2;
        for ch in 0..c {
            t.data_mut()[(ch * c + ch) * k * k + mid] = 1.0;
        }
        t
    }

    #[test]
    fn conv_identity_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let c = rng.gen_range(1..=4);
            let h = rng.gen_range(1..=8);
            let w = rng.gen_range(1..=8);
            let x = random_tensor(&mut rng, vec![c, h, w]);
            for k in [1usize, 3] {
                let out = conv2d(&x, &identity_kernel(c, k), same_padding(k)).unwrap();
                assert_eq!(out, x);
            }
        }
    }

    #[test]
    fn conv_1x1_kernel_is_per_pixel_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random_tensor(&mut rng, vec![3, 4, 5]);
        let k = random_tensor(&mut rng, vec![2, 3, 1, 1]);
        let out = conv2d(&x, &k, 0).unwrap();
        for o in 0..2 {
            for p in 0..20 {
                let mut acc = 0.0;
                for c in 0..3 {
                    acc += k.data()[o * 3 + c] * x.data()[c * 20 + p];
                }
                assert!((out.data()[o * 20 + p] - acc).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random_tensor(&mut rng, vec![2, 4, 4]);
        let k = random_tensor(&mut rng, vec![3, 2, 3, 3]);
        for pad in [0usize, 1, 2] {
            let fast = conv2d(&x, &k, pad).unwrap();
            let slow = conv2d_naive(&x, &k, pad);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn conv_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = random_tensor(&mut rng, vec![2, 5, 5]);
        let y = random_tensor(&mut rng, vec![2, 5, 5]);
        let k = random_tensor(&mut rng, vec![3, 2, 3, 3]);
        let (a, b) = (0.7, -1.3);
        let mixed = Tensor::new(
            vec![2, 5, 5],
            x.data()
                .iter()
                .zip(y.data())
                .map(|(u, v)| a * u + b * v)
                .collect(),
        )
        .unwrap();
        let lhs = conv2d(&mixed, &k, 1).unwrap();
        let cx = conv2d(&x, &k, 1).unwrap();
        let cy = conv2d(&y, &k, 1).unwrap();
        for i in 0..lhs.numel() {
            let rhs = a * cx.data()[i] + b * cy.data()[i];
            assert!((lhs.data()[i] - rhs).abs() <= 1e-12);
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::zeros(vec![2, 4, 4]);
        let k = Tensor::zeros(vec![1, 3, 3, 3]);
        assert!(matches!(conv2d(&x, &k, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn shrink_cases() {
        assert_eq!(shrink(1.2, 0.5), 0.7);
        assert_eq!(shrink(0.0, 3.0), 0.0);
        assert_eq!(shrink(-0.5, 1.0), 0.0);
        assert_eq!(shrink(-2.0, 0.5), -1.5);
    }

    #[test]
    fn soft_threshold_is_odd_nonexpansive_and_fixes_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..200 {
            let x: f64 = rng.gen_range(-3.0..3.0);
            let y: f64 = rng.gen_range(-3.0..3.0);
            let t: f64 = rng.gen_range(0.0..1.5);
            assert_eq!(shrink(-x, t), -shrink(x, t));
            assert!((shrink(x, t) - shrink(y, t)).abs() <= (x - y).abs() + 1e-15);
        }
        assert_eq!(shrink(0.0, 0.0), 0.0);
    }

    #[test]
    fn soft_threshold_clamps_negative_theta() {
        let x = Tensor::new(vec![1, 1, 2], vec![0.4, -0.4]).unwrap();
        let out = soft_threshold(&x, &[-1.0]).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn gram_constant_map() {
        let x = Tensor::filled(vec![1, 2, 2], 1.0);
        let g = gram(&x).unwrap();
        assert_eq!(g.shape(), [1, 1]);
        assert_eq!(g.data()[0], 1.0);
    }

    #[test]
    fn gram_orthogonal_rows_give_zero_off_diagonal() {
        let x = Tensor::new(vec![2, 2, 2], vec![1.0, 1.0, -1.0, -1.0, 1.0, -1.0, 1.0, -1.0]).unwrap();
        let g = gram(&x).unwrap();
        assert_eq!(g.data()[1], 0.0);
        assert_eq!(g.data()[2], 0.0);
    }

    #[test]
    fn gram_matches_dense_matmul_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x = random_tensor(&mut rng, vec![4, 3, 3]);
        let g = gram(&x).unwrap();
        let n = 9.0;
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = 0.0;
                for p in 0..9 {
                    acc += x.data()[i * 9 + p] * x.data()[j * 9 + p];
                }
                assert!((g.data()[i * 4 + j] - acc / n).abs() <= 1e-12);
            }
        }
        // symmetry
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(g.data()[i * 4 + j], g.data()[j * 4 + i]);
            }
        }
    }

    #[test]
    fn pools_and_bias() {
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let a = avg_pool2(&x).unwrap();
        assert_eq!(a.data(), &[2.5]);
        let (m, arg) = max_pool2(&x).unwrap();
        assert_eq!(m.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
        let b = bias_add(&x, &Tensor::new(vec![1], vec![0.5]).unwrap()).unwrap();
        assert_eq!(b.data(), &[1.5, 2.5, 3.5, 4.5]);
        assert!(avg_pool2(&Tensor::zeros(vec![1, 3, 4])).is_err());
    }

    #[test]
    fn concat_slice_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = random_tensor(&mut rng, vec![2, 3, 3]);
        let b = random_tensor(&mut rng, vec![3, 3, 3]);
        let cat = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(slice_channels(&cat, 0, 2).unwrap(), a);
        assert_eq!(slice_channels(&cat, 2, 5).unwrap(), b);
        assert!(slice_channels(&cat, 4, 4).is_err());
    }
}
