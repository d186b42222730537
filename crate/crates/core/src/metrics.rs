//! Fusion quality metrics over 8-bit grayscale images: entropy (En), standard
//! deviation (SD), mutual information (MI), modified structural similarity
//! (SSIMm), modified visual information fidelity (VIFm), and the
//! gradient-based fusion-artifact measure (Nabf). Higher is better for all
//! except Nabf.
//!
//! Histogram metrics use 256 bins after round-half-up quantization. SSIM uses
//! the standard 11x11 Gaussian window (sigma 1.5) with `C1 = (0.01*255)^2`,
//! `C2 = (0.03*255)^2`. VIF is the pixel-domain multi-scale form with noise
//! variance 2. Nabf weighs gradient-preservation scores at locations where
//! the fused gradient exceeds both source gradients.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imageio;
use crate::tensor::Tensor;

/// Quantized 8-bit grayscale image.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayU8 {
    pub w: usize,
    pub h: usize,
    pub data: Vec<u8>,
}

impl GrayU8 {
    pub fn new(w: usize, h: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != w * h {
            return Err(Error::Shape(format!(
                "gray image data length {} does not match {w}x{h}",
                data.len()
            )));
        }
        Ok(GrayU8 { w, h, data })
    }

    /// Quantizes a `[0, 1]` map (clamp, round half up).
    pub fn from_unit(map: &Tensor) -> Result<Self> {
        let (h, w, data) = imageio::quantize8(map)?;
        GrayU8::new(w, h, data)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        GrayU8::from_unit(&imageio::read_gray(path)?)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

fn check_nonempty(img: &GrayU8) -> Result<()> {
    if img.is_empty() {
        return Err(Error::Size("empty image".into()));
    }
    Ok(())
}

fn check_same_dims(a: &GrayU8, b: &GrayU8) -> Result<()> {
    if (a.w, a.h) != (b.w, b.h) {
        return Err(Error::Shape(format!(
            "image dims differ: {}x{} vs {}x{}",
            a.w, a.h, b.w, b.h
        )));
    }
    Ok(())
}

fn entropy_of_counts(counts: &[f64], n: f64) -> f64 {
    let mut h = 0.0;
    for &c in counts {
        if c > 0.0 {
            let p = c / n;
            h -= p * p.log2();
        }
    }
    h
}

/// Shannon entropy of the 256-bin histogram, in bits.
pub fn entropy(img: &GrayU8) -> Result<f64> {
    check_nonempty(img)?;
    let mut counts = [0.0f64; 256];
    for &v in &img.data {
        counts[v as usize] += 1.0;
    }
    Ok(entropy_of_counts(&counts, img.len() as f64))
}

/// Population standard deviation of pixel intensities.
pub fn std_dev(img: &GrayU8) -> Result<f64> {
    check_nonempty(img)?;
    let n = img.len() as f64;
    let mean = img.data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = img
        .data
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    Ok(var.sqrt())
}

fn mi_pair(a: &GrayU8, b: &GrayU8) -> Result<f64> {
    check_nonempty(a)?;
    check_same_dims(a, b)?;
    let n = a.len() as f64;
    let mut joint = vec![0.0f64; 256 * 256];
    let mut ha = [0.0f64; 256];
    let mut hb = [0.0f64; 256];
    for (&x, &y) in a.data.iter().zip(&b.data) {
        joint[x as usize * 256 + y as usize] += 1.0;
        ha[x as usize] += 1.0;
        hb[y as usize] += 1.0;
    }
    Ok(entropy_of_counts(&ha, n) + entropy_of_counts(&hb, n) - entropy_of_counts(&joint, n))
}

/// `MI(fused, ir) + MI(fused, vi)` from 256-bin joint histograms.
pub fn mutual_information(fused: &GrayU8, ir: &GrayU8, vi: &GrayU8) -> Result<f64> {
    Ok(mi_pair(fused, ir)? + mi_pair(fused, vi)?)
}

fn gaussian1d(n: usize, sigma: f64) -> Vec<f64> {
    let mid = (n as f64 - 1.0) / 2.0;
    let mut w: Vec<f64> = (0..n)
        .map(|i| (-((i as f64 - mid).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Separable valid-region filtering with a normalized 1-D kernel.
fn filter_valid(img: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let ow = w - n + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * img[y * w + x + i];
            }
            rows[y * ow + x] = acc;
        }
    }
    let oh = h - n + 1;
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * rows[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    (out, oh, ow)
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

/// Windowed SSIM between two images on the 0..255 intensity scale.
pub fn ssim(a: &GrayU8, b: &GrayU8) -> Result<f64> {
    check_same_dims(a, b)?;
    if a.w < SSIM_WINDOW || a.h < SSIM_WINDOW {
        return Err(Error::Size(format!(
            "image {}x{} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window",
            a.w, a.h
        )));
    }
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let k = gaussian1d(SSIM_WINDOW, SSIM_SIGMA);
    let (x, y) = (a.to_f64(), b.to_f64());
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u * v).collect();

    let (mu1, oh, ow) = filter_valid(&x, a.h, a.w, &k);
    let (mu2, _, _) = filter_valid(&y, a.h, a.w, &k);
    let (sxx, _, _) = filter_valid(&xx, a.h, a.w, &k);
    let (syy, _, _) = filter_valid(&yy, a.h, a.w, &k);
    let (sxy, _, _) = filter_valid(&xy, a.h, a.w, &k);

    let mut acc = 0.0;
    for i in 0..oh * ow {
        let (m1, m2) = (mu1[i], mu2[i]);
        let v1 = sxx[i] - m1 * m1;
        let v2 = syy[i] - m2 * m2;
        let cov = sxy[i] - m1 * m2;
        acc += ((2.0 * m1 * m2 + c1) * (2.0 * cov + c2))
            / ((m1 * m1 + m2 * m2 + c1) * (v1 + v2 + c2));
    }
    Ok(acc / (oh * ow) as f64)
}

/// `(SSIM(fused, ir) + SSIM(fused, vi)) / 2`.
pub fn ssim_m(fused: &GrayU8, ir: &GrayU8, vi: &GrayU8) -> Result<f64> {
    Ok((ssim(fused, ir)? + ssim(fused, vi)?) / 2.0)
}

const VIF_NOISE: f64 = 2.0;
const VIF_EPS: f64 = 1e-10;
pub const VIF_MIN_SIZE: usize = 48;

/// Pixel-domain multi-scale visual information fidelity of `dist` given the
/// reference image `reference`.
pub fn vif(reference: &GrayU8, dist: &GrayU8) -> Result<f64> {
    check_same_dims(reference, dist)?;
    if reference.w < VIF_MIN_SIZE || reference.h < VIF_MIN_SIZE {
        return Err(Error::Size(format!(
            "image {}x{} is below the {VIF_MIN_SIZE} pixel minimum for four scales",
            reference.w, reference.h
        )));
    }
    let mut r = reference.to_f64();
    let mut d = dist.to_f64();
    let (mut h, mut w) = (reference.h, reference.w);
    let mut num = 0.0;
    let mut den = 0.0;

    for scale in 1..=4u32 {
        let n = 2usize.pow(5 - scale) + 1;
        let k = gaussian1d(n, n as f64 / 5.0);
        if scale > 1 {
            let (rf, oh, ow) = filter_valid(&r, h, w, &k);
            let (df, _, _) = filter_valid(&d, h, w, &k);
            // take every other sample
            let (sh, sw) = ((oh + 1) / 2, (ow + 1) / 2);
            let mut rs = Vec::with_capacity(sh * sw);
            let mut ds = Vec::with_capacity(sh * sw);
            for y in (0..oh).step_by(2) {
                for x in (0..ow).step_by(2) {
                    rs.push(rf[y * ow + x]);
                    ds.push(df[y * ow + x]);
                }
            }
            r = rs;
            d = ds;
            h = sh;
            w = sw;
        }

        let rr: Vec<f64> = r.iter().map(|v| v * v).collect();
        let dd: Vec<f64> = d.iter().map(|v| v * v).collect();
        let rd: Vec<f64> = r.iter().zip(&d).map(|(a, b)| a * b).collect();
        let (mu1, oh, ow) = filter_valid(&r, h, w, &k);
        let (mu2, _, _) = filter_valid(&d, h, w, &k);
        let (srr, _, _) = filter_valid(&rr, h, w, &k);
        let (sdd, _, _) = filter_valid(&dd, h, w, &k);
        let (srd, _, _) = filter_valid(&rd, h, w, &k);

        for i in 0..oh * ow {
            let mut s1 = (srr[i] - mu1[i] * mu1[i]).max(0.0);
            let s2 = (sdd[i] - mu2[i] * mu2[i]).max(0.0);
            let s12 = srd[i] - mu1[i] * mu2[i];

            let mut g = s12 / (s1 + VIF_EPS);
            let mut sv = s2 - g * s12;
            if s1 < VIF_EPS {
                g = 0.0;
                sv = s2;
                s1 = 0.0;
            }
            if s2 < VIF_EPS {
                g = 0.0;
                sv = 0.0;
            }
            if g < 0.0 {
                sv = s2;
                g = 0.0;
            }
            if sv < VIF_EPS {
                sv = VIF_EPS;
            }
            num += (1.0 + g * g * s1 / (sv + VIF_NOISE)).log10();
            den += (1.0 + s1 / VIF_NOISE).log10();
        }
    }
    if den == 0.0 {
        return Ok(1.0);
    }
    Ok(num / den)
}

/// Mean of `VIF` against each source.
pub fn vif_m(fused: &GrayU8, ir: &GrayU8, vi: &GrayU8) -> Result<f64> {
    Ok((vif(ir, fused)? + vif(vi, fused)?) / 2.0)
}

fn sobel(img: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    const KX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    const KY: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (mut ax, mut ay) = (0.0, 0.0);
            for dy in 0..3usize {
                for dx in 0..3usize {
                    let iy = y as isize + dy as isize - 1;
                    let ix = x as isize + dx as isize - 1;
                    if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                        let v = img[iy as usize * w + ix as usize];
                        ax += KX[dy][dx] * v;
                        ay += KY[dy][dx] * v;
                    }
                }
            }
            gx[y * w + x] = ax;
            gy[y * w + x] = ay;
        }
    }
    (gx, gy)
}

fn gradient_strength_angle(img: &GrayU8) -> (Vec<f64>, Vec<f64>) {
    let f = img.to_f64();
    let (gx, gy) = sobel(&f, img.h, img.w);
    let n = f.len();
    let mut g = Vec::with_capacity(n);
    let mut alpha = Vec::with_capacity(n);
    for i in 0..n {
        g.push((gx[i] * gx[i] + gy[i] * gy[i]).sqrt());
        alpha.push(if gx[i] == 0.0 && gy[i] == 0.0 {
            0.0
        } else {
            (gy[i] / gx[i]).atan()
        });
    }
    (g, alpha)
}

// Gradient-preservation sigmoid constants.
const NABF_TG: f64 = 0.9994;
const NABF_KG: f64 = -15.0;
const NABF_DG: f64 = 0.5;
const NABF_TA: f64 = 0.9879;
const NABF_KA: f64 = -22.0;
const NABF_DA: f64 = 0.8;
const NABF_L: f64 = 1.5;

fn preservation(g_src: f64, a_src: f64, g_f: f64, a_f: f64) -> f64 {
    let g_rel = if g_src == 0.0 && g_f == 0.0 {
        0.0
    } else if g_src > g_f {
        g_f / g_src
    } else {
        g_src / g_f
    };
    let a_rel = 1.0 - (a_src - a_f).abs() / (std::f64::consts::PI / 2.0);
    let qg = NABF_TG / (1.0 + (NABF_KG * (g_rel - NABF_DG)).exp());
    let qa = NABF_TA / (1.0 + (NABF_KA * (a_rel - NABF_DA)).exp());
    qg * qa
}

/// Fusion-artifact measure: artifacts are locations where the fused gradient
/// exceeds both source gradients; their unpreserved, strength-weighted share
/// of the total gradient weight is reported. Zero when nothing was injected.
pub fn nabf(fused: &GrayU8, ir: &GrayU8, vi: &GrayU8) -> Result<f64> {
    check_nonempty(fused)?;
    check_same_dims(fused, ir)?;
    check_same_dims(fused, vi)?;
    let (gf, af) = gradient_strength_angle(fused);
    let (ga, aa) = gradient_strength_angle(ir);
    let (gb, ab) = gradient_strength_angle(vi);

    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..gf.len() {
        let wa = ga[i].powf(NABF_L);
        let wb = gb[i].powf(NABF_L);
        den += wa + wb;
        if gf[i] > ga[i] && gf[i] > gb[i] {
            let qaf = preservation(ga[i], aa[i], gf[i], af[i]);
            let qbf = preservation(gb[i], ab[i], gf[i], af[i]);
            num += (1.0 - qaf) * wa + (1.0 - qbf) * wb;
        }
    }
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(num / den)
}

/// One evaluated image (or the mean row).
#[derive(Clone, Debug)]
pub struct MetricsRow {
    pub name: String,
    pub en: f64,
    pub sd: f64,
    pub mi: f64,
    pub ssim_m: f64,
    pub vif_m: f64,
    pub nabf: f64,
}

/// Per-image rows plus their arithmetic mean.
#[derive(Clone, Debug, Default)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub mean: Option<MetricsRow>,
}

/// All six metrics for one fused/ir/vi triple.
pub fn evaluate_triple(
    name: &str,
    fused: &GrayU8,
    ir: &GrayU8,
    vi: &GrayU8,
) -> Result<MetricsRow> {
    Ok(MetricsRow {
        name: name.to_string(),
        en: entropy(fused)?,
        sd: std_dev(fused)?,
        mi: mutual_information(fused, ir, vi)?,
        ssim_m: ssim_m(fused, ir, vi)?,
        vif_m: vif_m(fused, ir, vi)?,
        nabf: nabf(fused, ir, vi)?,
    })
}

fn mean_row(rows: &[MetricsRow]) -> MetricsRow {
    let n = rows.len() as f64;
    let avg = |f: fn(&MetricsRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    MetricsRow {
        name: "mean".into(),
        en: avg(|r| r.en),
        sd: avg(|r| r.sd),
        mi: avg(|r| r.mi),
        ssim_m: avg(|r| r.ssim_m),
        vif_m: avg(|r| r.vif_m),
        nabf: avg(|r| r.nabf),
    }
}

/// Evaluates every stem-matched fused/ir/vi triple across three directories.
pub fn evaluate_dirs(
    fused_dir: impl AsRef<Path>,
    ir_dir: impl AsRef<Path>,
    vi_dir: impl AsRef<Path>,
) -> Result<MetricsReport> {
    let list = |dir: &Path| -> Result<BTreeMap<String, std::path::PathBuf>> {
        let mut out = BTreeMap::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            let ext = path
                .extension()
                .and_then(|e| e.to_str())
                .map(|e| e.to_ascii_lowercase());
            if matches!(ext.as_deref(), Some("png") | Some("pgm")) {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    out.insert(stem.to_string(), path.clone());
                }
            }
        }
        Ok(out)
    };
    let fused = list(fused_dir.as_ref())?;
    let ir = list(ir_dir.as_ref())?;
    let vi = list(vi_dir.as_ref())?;

    let mut rows = Vec::new();
    for (stem, fpath) in &fused {
        let ipath = ir
            .get(stem)
            .ok_or_else(|| Error::Pairing(format!("missing infrared image for '{stem}'")))?;
        let vpath = vi
            .get(stem)
            .ok_or_else(|| Error::Pairing(format!("missing visible image for '{stem}'")))?;
        let f = GrayU8::from_file(fpath)?;
        let i = GrayU8::from_file(ipath)?;
        let v = GrayU8::from_file(vpath)?;
        rows.push(evaluate_triple(stem, &f, &i, &v)?);
    }
    let mean = if rows.is_empty() {
        None
    } else {
        Some(mean_row(&rows))
    };
    Ok(MetricsReport { rows, mean })
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,En,SD,MI,SSIMm,VIFm,Nabf\n");
        for r in self.rows.iter().chain(self.mean.iter()) {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.name, r.en, r.sd, r.mi, r.ssim_m, r.vif_m, r.nabf
            ));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let name_width = self
            .rows
            .iter()
            .chain(self.mean.iter())
            .map(|r| r.name.len())
            .max()
            .unwrap_or(4)
            .max(4);
        let mut out = format!(
            "{:<name_width$}  {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
            "name", "En\u{2191}", "SD\u{2191}", "MI\u{2191}", "SSIMm\u{2191}", "VIFm\u{2191}", "Nabf\u{2193}"
        );
        for r in self.rows.iter().chain(self.mean.iter()) {
            out.push_str(&format!(
                "{:<name_width$}  {:>10.5} {:>10.5} {:>10.5} {:>10.5} {:>10.5} {:>10.5}\n",
                r.name, r.en, r.sd, r.mi, r.ssim_m, r.vif_m, r.nabf
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::uniform;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_gray(seed: u64, w: usize, h: usize) -> GrayU8 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayU8::new(
            w,
            h,
            (0..w * h).map(|_| (uniform(&mut rng, 0.0, 1.0) * 255.0) as u8).collect(),
        )
        .unwrap()
    }

    /// Smooth synthetic image so SSIM/VIF see structure rather than noise.
    fn structured_gray(seed: u64, w: usize, h: usize) -> GrayU8 {
        let (ir, _) = crate::synth::synth_pair(seed, 0, w.max(h));
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                data.push((ir.data()[y * w.max(h) + x] * 255.0).round() as u8);
            }
        }
        GrayU8::new(w, h, data).unwrap()
    }

    #[test]
    fn entropy_cases() {
        let constant = GrayU8::new(8, 8, vec![37; 64]).unwrap();
        assert_eq!(entropy(&constant).unwrap(), 0.0);

        let uniform256 = GrayU8::new(16, 16, (0..=255u8).collect()).unwrap();
        assert_eq!(entropy(&uniform256).unwrap(), 8.0);

        let img = random_gray(1, 16, 16);
        let mut counts = [0usize; 256];
        for &v in &img.data {
            counts[v as usize] += 1;
        }
        let oracle: f64 = counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / 256.0;
                -p * p.log2()
            })
            .sum();
        assert!((entropy(&img).unwrap() - oracle).abs() <= 1e-10);

        assert!(entropy(&GrayU8::new(0, 0, vec![]).unwrap()).is_err());
    }

    #[test]
    fn std_dev_cases() {
        let constant = GrayU8::new(4, 4, vec![99; 16]).unwrap();
        assert_eq!(std_dev(&constant).unwrap(), 0.0);

        let mut two = vec![0u8; 8];
        two.extend(vec![255u8; 8]);
        assert_eq!(std_dev(&GrayU8::new(4, 4, two).unwrap()).unwrap(), 127.5);

        let img = random_gray(2, 16, 16);
        let n = 256.0;
        let mean: f64 = img.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        let oracle = (img.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std_dev(&img).unwrap() - oracle).abs() <= 1e-10);
    }

    #[test]
    fn mutual_information_cases() {
        let f = random_gray(3, 16, 16);
        let mi = mutual_information(&f, &f, &f).unwrap();
        let en = entropy(&f).unwrap();
        assert!((mi - 2.0 * en).abs() <= 1e-9);

        // Constant sources carry no information about a checkerboard.
        let mut checker = vec![0u8; 256];
        for i in 0..256 {
            checker[i] = if (i / 16 + i % 16) % 2 == 0 { 0 } else { 255 };
        }
        let f = GrayU8::new(16, 16, checker).unwrap();
        let c = GrayU8::new(16, 16, vec![128; 256]).unwrap();
        assert!(mutual_information(&f, &c, &c).unwrap().abs() <= 1e-12);

        // Duplicate joint-histogram formula.
        let a = random_gray(4, 16, 16);
        let b = random_gray(5, 16, 16);
        let got = mi_pair(&a, &b).unwrap();
        let n = 256.0;
        let mut joint = std::collections::HashMap::new();
        let mut ha = std::collections::HashMap::new();
        let mut hb = std::collections::HashMap::new();
        for (&x, &y) in a.data.iter().zip(&b.data) {
            *joint.entry((x, y)).or_insert(0.0) += 1.0;
            *ha.entry(x).or_insert(0.0) += 1.0;
            *hb.entry(y).or_insert(0.0) += 1.0;
        }
        let h = |m: &std::collections::HashMap<_, f64>| -> f64 {
            m.values()
                .map(|&c| {
                    let p = c / n;
                    -p * p.log2()
                })
                .sum()
        };
        let mut keys: Vec<_> = joint.keys().copied().collect();
        keys.sort();
        let hj: f64 = keys
            .iter()
            .map(|k| {
                let p = joint[k] / n;
                -p * p.log2()
            })
            .sum();
        let oracle = h(&ha) + h(&hb) - hj;
        assert!((got - oracle).abs() <= 1e-10);
    }

    #[test]
    fn relabeling_invariance_of_entropy_and_mi() {
        // Bijective gray-level relabeling applied to all inputs.
        let lut: Vec<u8> = (0..=255u8).map(|v| v.wrapping_add(97).rotate_left(3)).collect();
        let relabel = |img: &GrayU8| {
            GrayU8::new(img.w, img.h, img.data.iter().map(|&v| lut[v as usize]).collect()).unwrap()
        };
        let f = random_gray(6, 16, 16);
        let a = random_gray(7, 16, 16);
        let b = random_gray(8, 16, 16);
        assert!((entropy(&f).unwrap() - entropy(&relabel(&f)).unwrap()).abs() <= 1e-12);
        let before = mutual_information(&f, &a, &b).unwrap();
        let after = mutual_information(&relabel(&f), &relabel(&a), &relabel(&b)).unwrap();
        assert!((before - after).abs() <= 1e-9);
    }

    #[test]
    fn ssim_cases() {
        let f = structured_gray(9, 32, 32);
        assert!((ssim(&f, &f).unwrap() - 1.0).abs() <= 1e-9);

        let inverted = GrayU8::new(32, 32, f.data.iter().map(|&v| 255 - v).collect()).unwrap();
        assert!(ssim(&f, &inverted).unwrap() < 0.2);

        // Direct per-window oracle.
        let a = random_gray(10, 16, 16);
        let b = random_gray(11, 16, 16);
        let got = ssim(&a, &b).unwrap();
        let k1 = gaussian1d(11, 1.5);
        let mut win = vec![0.0; 121];
        for i in 0..11 {
            for j in 0..11 {
                win[i * 11 + j] = k1[i] * k1[j];
            }
        }
        let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
        let (af, bf) = (a.to_f64(), b.to_f64());
        let mut acc = 0.0;
        for y in 0..6 {
            for x in 0..6 {
                let (mut m1, mut m2, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wv = win[i * 11 + j];
                        let u = af[(y + i) * 16 + x + j];
                        let v = bf[(y + i) * 16 + x + j];
                        m1 += wv * u;
                        m2 += wv * v;
                        sxx += wv * u * u;
                        syy += wv * v * v;
                        sxy += wv * u * v;
                    }
                }
                let v1 = sxx - m1 * m1;
                let v2 = syy - m2 * m2;
                let cov = sxy - m1 * m2;
                acc += ((2.0 * m1 * m2 + c1) * (2.0 * cov + c2))
                    / ((m1 * m1 + m2 * m2 + c1) * (v1 + v2 + c2));
            }
        }
        let oracle = acc / 36.0;
        assert!((got - oracle).abs() <= 1e-6, "{got} vs {oracle}");
    }

    #[test]
    fn ssim_m_properties() {
        let f = structured_gray(12, 32, 32);
        let v = structured_gray(13, 32, 32);
        assert!((ssim_m(&f, &f, &f).unwrap() - 1.0).abs() <= 1e-9);
        // Collapses to plain SSIM when both sources coincide.
        assert_eq!(ssim_m(&f, &v, &v).unwrap(), ssim(&f, &v).unwrap());
        // Symmetric in the sources.
        let a = structured_gray(14, 32, 32);
        assert_eq!(ssim_m(&f, &a, &v).unwrap(), ssim_m(&f, &v, &a).unwrap());
    }

    #[test]
    fn vif_cases() {
        let f = structured_gray(15, 64, 64);
        assert!((vif(&f, &f).unwrap() - 1.0).abs() <= 1e-6);
        assert!((vif_m(&f, &f, &f).unwrap() - 1.0).abs() <= 1e-6);

        // Pure noise against a structured reference carries little information.
        let noise = random_gray(16, 64, 64);
        let v = vif(&f, &noise).unwrap();
        assert!(v < 0.35, "noise vif {v}");

        // Size guard.
        let small = structured_gray(17, 32, 32);
        assert!(matches!(vif(&small, &small), Err(Error::Size(_))));

        // Symmetry of the modified form in the sources.
        let a = structured_gray(18, 64, 64);
        let b = structured_gray(19, 64, 64);
        assert_eq!(vif_m(&f, &a, &b).unwrap(), vif_m(&f, &b, &a).unwrap());
    }

    #[test]
    fn vif_matches_direct_window_oracle() {
        // Independent implementation with explicit 2-D windows.
        fn filter2_valid(img: &[f64], h: usize, w: usize, win: &[f64], n: usize) -> (Vec<f64>, usize, usize) {
            let (oh, ow) = (h - n + 1, w - n + 1);
            let mut out = vec![0.0; oh * ow];
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = 0.0;
                    for i in 0..n {
                        for j in 0..n {
                            acc += win[i * n + j] * img[(y + i) * w + x + j];
                        }
                    }
                    out[y * ow + x] = acc;
                }
            }
            (out, oh, ow)
        }
        fn vif_direct(reference: &GrayU8, dist: &GrayU8) -> f64 {
            let mut r = reference.to_f64();
            let mut d = dist.to_f64();
            let (mut h, mut w) = (reference.h, reference.w);
            let (mut num, mut den) = (0.0, 0.0);
            for scale in 1..=4u32 {
                let n = 2usize.pow(5 - scale) + 1;
                let k1 = gaussian1d(n, n as f64 / 5.0);
                let mut win = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        win[i * n + j] = k1[i] * k1[j];
                    }
                }
                if scale > 1 {
                    let (rf, oh, ow) = filter2_valid(&r, h, w, &win, n);
                    let (df, _, _) = filter2_valid(&d, h, w, &win, n);
                    let (sh, sw) = ((oh + 1) / 2, (ow + 1) / 2);
                    let mut rs = Vec::new();
                    let mut ds = Vec::new();
                    for y in (0..oh).step_by(2) {
                        for x in (0..ow).step_by(2) {
                            rs.push(rf[y * ow + x]);
                            ds.push(df[y * ow + x]);
                        }
                    }
                    r = rs;
                    d = ds;
                    h = sh;
                    w = sw;
                }
                let rr: Vec<f64> = r.iter().map(|v| v * v).collect();
                let dd: Vec<f64> = d.iter().map(|v| v * v).collect();
                let rd: Vec<f64> = r.iter().zip(&d).map(|(a, b)| a * b).collect();
                let (mu1, oh, ow) = filter2_valid(&r, h, w, &win, n);
                let (mu2, _, _) = filter2_valid(&d, h, w, &win, n);
                let (srr, _, _) = filter2_valid(&rr, h, w, &win, n);
                let (sdd, _, _) = filter2_valid(&dd, h, w, &win, n);
                let (srd, _, _) = filter2_valid(&rd, h, w, &win, n);
                for i in 0..oh * ow {
                    let mut s1 = (srr[i] - mu1[i] * mu1[i]).max(0.0);
                    let s2 = (sdd[i] - mu2[i] * mu2[i]).max(0.0);
                    let s12 = srd[i] - mu1[i] * mu2[i];
                    let mut g = s12 / (s1 + VIF_EPS);
                    let mut sv = s2 - g * s12;
                    if s1 < VIF_EPS {
                        g = 0.0;
                        sv = s2;
                        s1 = 0.0;
                    }
                    if s2 < VIF_EPS {
                        g = 0.0;
                        sv = 0.0;
                    }
                    if g < 0.0 {
                        sv = s2;
                        g = 0.0;
                    }
                    if sv < VIF_EPS {
                        sv = VIF_EPS;
                    }
                    num += (1.0 + g * g * s1 / (sv + VIF_NOISE)).log10();
                    den += (1.0 + s1 / VIF_NOISE).log10();
                }
            }
            num / den
        }

        let a = structured_gray(20, 64, 64);
        let b = structured_gray(21, 64, 64);
        let got = vif(&a, &b).unwrap();
        let oracle = vif_direct(&a, &b);
        assert!((got - oracle).abs() <= 1e-4, "{got} vs {oracle}");
    }

    #[test]
    fn nabf_cases() {
        let f = structured_gray(22, 64, 64);
        assert!(nabf(&f, &f, &f).unwrap() <= 1e-6);

        // Injecting noise strictly increases the artifact measure.
        let a = structured_gray(23, 64, 64);
        let b = structured_gray(24, 64, 64);
        let clean: Vec<u8> = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| ((x as u16 + y as u16) / 2) as u8)
            .collect();
        let clean = GrayU8::new(64, 64, clean).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let noisy: Vec<u8> = clean
            .data
            .iter()
            .map(|&v| {
                let bump = (uniform(&mut rng, -60.0, 60.0)) as i16;
                (v as i16 + bump).clamp(0, 255) as u8
            })
            .collect();
        let noisy = GrayU8::new(64, 64, noisy).unwrap();
        let base = nabf(&clean, &a, &b).unwrap();
        let corrupted = nabf(&noisy, &a, &b).unwrap();
        assert!(corrupted > base, "{corrupted} vs {base}");
        assert!(base >= 0.0);
    }

    #[test]
    fn nabf_golden_value() {
        let a = structured_gray(26, 64, 64);
        let b = structured_gray(27, 64, 64);
        let f = structured_gray(28, 64, 64);
        let got = nabf(&f, &a, &b).unwrap();
        // Frozen after cross-checking the measure against an independent
        // implementation of the gradient-preservation framework.
        let golden = 0.14882813230134298;
        assert!((got - golden).abs() <= 1e-9, "nabf {got}");
    }

    #[test]
    fn report_means_and_formats() {
        let dir = tempfile::tempdir().unwrap();
        let (fd, id, vd) = (
            dir.path().join("fused"),
            dir.path().join("ir"),
            dir.path().join("vi"),
        );
        for d in [&fd, &id, &vd] {
            std::fs::create_dir_all(d).unwrap();
        }

        // Empty directories produce an empty report.
        let empty = evaluate_dirs(&fd, &id, &vd).unwrap();
        assert!(empty.rows.is_empty() && empty.mean.is_none());
        assert_eq!(empty.to_csv(), "name,En,SD,MI,SSIMm,VIFm,Nabf\n");

        for i in 0..3u64 {
            let (ir, vi) = crate::synth::synth_pair(30 + i, 0, 64);
            let fused = crate::ops::add(&crate::ops::scale(&ir, 0.5), &crate::ops::scale(&vi, 0.5))
                .unwrap();
            let name = format!("t{i}.png");
            imageio::write_gray(id.join(&name), &ir).unwrap();
            imageio::write_gray(vd.join(&name), &vi).unwrap();
            imageio::write_gray(fd.join(&name), &fused).unwrap();
        }
        let report = evaluate_dirs(&fd, &id, &vd).unwrap();
        assert_eq!(report.rows.len(), 3);
        let mean = report.mean.as_ref().unwrap();
        let manual: f64 = report.rows.iter().map(|r| r.en).sum::<f64>() / 3.0;
        assert!((mean.en - manual).abs() <= 1e-12);
        let manual: f64 = report.rows.iter().map(|r| r.nabf).sum::<f64>() / 3.0;
        assert!((mean.nabf - manual).abs() <= 1e-12);

        let csv = report.to_csv();
        assert!(csv.starts_with("name,En,SD,MI,SSIMm,VIFm,Nabf\n"));
        assert_eq!(csv.lines().count(), 5);
        let table = report.to_table();
        assert!(table.contains("Nabf\u{2193}"));

        // A missing triple member is a pairing error.
        std::fs::remove_file(id.join("t1.png")).unwrap();
        assert!(matches!(
            evaluate_dirs(&fd, &id, &vd),
            Err(Error::Pairing(_))
        ));
    }

    #[test]
    fn identical_triple_row_is_self_consistent() {
        let dir = tempfile::tempdir().unwrap();
        let (fd, id, vd) = (
            dir.path().join("fused"),
            dir.path().join("ir"),
            dir.path().join("vi"),
        );
        for d in [&fd, &id, &vd] {
            std::fs::create_dir_all(d).unwrap();
        }
        let (img, _) = crate::synth::synth_pair(40, 0, 64);
        for d in [&fd, &id, &vd] {
            imageio::write_gray(d.join("same.png"), &img).unwrap();
        }
        let report = evaluate_dirs(&fd, &id, &vd).unwrap();
        let row = &report.rows[0];
        let f = GrayU8::from_unit(&img).unwrap();
        assert_eq!(row.en, entropy(&f).unwrap());
        assert!((row.ssim_m - 1.0).abs() <= 1e-9);
        assert!(row.nabf <= 1e-6);
        assert!((row.mi - 2.0 * row.en).abs() <= 1e-9);
    }
}


