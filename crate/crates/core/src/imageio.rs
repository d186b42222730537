//! 8-bit grayscale image input and output (PNG and PGM).
//!
//! Images live in memory as `1 x H x W` tensors scaled to `[0, 1]`. Color
//! sources are reduced with Rec.601 luma. Export clamps to `[0, 1]` and
//! quantizes with round-half-up.

use std::path::Path;

use image::{DynamicImage, ImageFormat};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Rec.601 luma for one RGB triple, in `[0, 1]`.
fn luma601(r: u8, g: u8, b: u8) -> f64 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0
}

/// Reads a PNG or PGM file as a `[0, 1]` grayscale map.
pub fn read_gray(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|e| Error::ImageFormat(format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::ImageFormat(format!("{}: empty image", path.display())));
    }
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(gray) => {
            gray.into_raw().into_iter().map(|v| v as f64 / 255.0).collect()
        }
        other => {
            let rgb = other.into_rgb8();
            rgb.pixels().map(|p| luma601(p[0], p[1], p[2])).collect()
        }
    };
    Tensor::new(vec![1, h, w], data)
}

/// Clamps to `[0, 1]` and quantizes to 8-bit, rounding halves up.
pub fn quantize8(map: &Tensor) -> Result<(usize, usize, Vec<u8>)> {
    let (h, w) = match map.shape() {
        [1, h, w] => (*h, *w),
        s => return Err(Error::Shape(format!("expected 1xHxW map, got {s:?}"))),
    };
    let bytes = map
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    Ok((h, w, bytes))
}

/// Writes a `[0, 1]` map as an 8-bit grayscale PNG or PGM, chosen by the
/// file extension (`.png` default).
pub fn write_gray(path: impl AsRef<Path>, map: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let (h, w, bytes) = quantize8(map)?;
    let buf = image::GrayImage::from_raw(w as u32, h as u32, bytes)
        .ok_or_else(|| Error::ImageFormat("buffer size mismatch".into()))?;
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => ImageFormat::Pnm,
        _ => ImageFormat::Png,
    };
    buf.save_with_format(path, format)
        .map_err(|e| Error::ImageFormat(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Bilinear resize with edge clamping.
pub fn resize_bilinear(map: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w) = match map.shape() {
        [1, h, w] => (*h, *w),
        s => return Err(Error::Shape(format!("expected 1xHxW map, got {s:?}"))),
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::Size("resize target must be nonempty".into()));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(map.clone());
    }
    let d = map.data();
    let mut out = Vec::with_capacity(out_h * out_w);
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            let top = d[y0 * w + x0] * (1.0 - tx) + d[y0 * w + x1] * tx;
            let bot = d[y1 * w + x0] * (1.0 - tx) + d[y1 * w + x1] * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    Tensor::new(vec![1, out_h, out_w], out)
}
