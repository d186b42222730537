//! Seeded synthetic infrared/visible pair generator.
//!
//! Both modalities share a smooth base structure; the visible image adds
//! fine oscillating texture, the infrared image adds bright salient blobs.
//! Everything is a pure function of `(seed, index, size)`, so tests and the
//! training acceptance run need no external dataset.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::imageio;
use crate::rng::uniform;
use crate::tensor::Tensor;

/// One infrared/visible pair as `[0, 1]` maps of shape `1 x size x size`.
pub fn synth_pair(seed: u64, index: u64, size: usize) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));

    let s = size as f64;
    // Shared smooth structure: a gentle gradient plus three wide bumps.
    let grad_x = uniform(&mut rng, -0.2, 0.2);
    let grad_y = uniform(&mut rng, -0.2, 0.2);
    let mut bumps = Vec::new();
    for _ in 0..3 {
        bumps.push((
            uniform(&mut rng, 0.2, 0.8) * s,
            uniform(&mut rng, 0.2, 0.8) * s,
            uniform(&mut rng, 0.15, 0.35) * s,
            uniform(&mut rng, -0.25, 0.35),
        ));
    }
    // Visible texture: three oriented sinusoids.
    let mut waves = Vec::new();
    for _ in 0..3 {
        waves.push((
            uniform(&mut rng, 2.0, 6.0) / s,
            uniform(&mut rng, 2.0, 6.0) / s,
            uniform(&mut rng, 0.0, std::f64::consts::TAU),
            uniform(&mut rng, 0.02, 0.05),
        ));
    }
    // Infrared salient spots: two hot, tight blobs.
    let mut spots = Vec::new();
    for _ in 0..2 {
        spots.push((
            uniform(&mut rng, 0.25, 0.75) * s,
            uniform(&mut rng, 0.25, 0.75) * s,
            uniform(&mut rng, 0.04, 0.10) * s,
            uniform(&mut rng, 0.35, 0.55),
        ));
    }

    let mut ir = Vec::with_capacity(size * size);
    let mut vi = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (xf, yf) = (x as f64, y as f64);
            let mut base = 0.4 + grad_x * (xf / s - 0.5) + grad_y * (yf / s - 0.5);
            for &(cx, cy, sigma, amp) in &bumps {
                let d2 = (xf - cx).powi(2) + (yf - cy).powi(2);
                base += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }

            let mut texture = 0.0;
            for &(fx, fy, phase, amp) in &waves {
                texture += amp * (std::f64::consts::TAU * (fx * xf + fy * yf) + phase).sin();
            }

            let mut salient = 0.0;
            for &(cx, cy, sigma, amp) in &spots {
                let d2 = (xf - cx).powi(2) + (yf - cy).powi(2);
                salient += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }

            vi.push((base + texture).clamp(0.0, 1.0));
            ir.push((0.85 * base + salient).clamp(0.0, 1.0));
        }
    }
    (
        Tensor::new(vec![1, size, size], ir).expect("synth shape"),
        Tensor::new(vec![1, size, size], vi).expect("synth shape"),
    )
}

/// Writes `count` pairs as PNGs named `pair0000.png`, `pair0001.png`, ...
pub fn write_synth_dataset(
    ir_dir: impl AsRef<Path>,
    vi_dir: impl AsRef<Path>,
    count: usize,
    size: usize,
    seed: u64,
) -> Result<()> {
    std::fs::create_dir_all(ir_dir.as_ref())?;
    std::fs::create_dir_all(vi_dir.as_ref())?;
    for i in 0..count {
        let (ir, vi) = synth_pair(seed, i as u64, size);
        let name = format!("pair{i:04}.png");
        imageio::write_gray(ir_dir.as_ref().join(&name), &ir)?;
        imageio::write_gray(vi_dir.as_ref().join(&name), &vi)?;
    }
    Ok(())
}
