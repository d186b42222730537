//! Detail-to-semantic training loss.
//!
//! `total = gamma1 * pixel + gamma2 * shallow + middle + gamma4 * deep` where
//! the pixel and shallow terms pull the fusion toward the visible image, the
//! middle term (taps 2 and 3, weighted `beta2`/`beta3`) pulls toward a
//! `w_ir`/`w_vi` blend favoring the infrared features, and the deep term
//! matches Gram statistics of tap 4 against the infrared image.

use std::path::PathBuf;

use crate::backbone::{backbone_features, backbone_features_taped, Backbone, FeatureTaps};
use crate::error::{Error, Result};
use crate::ops;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Backbone selection for the feature taps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BackboneSpec {
    TinyTest,
    Vgg16File(PathBuf),
}

impl BackboneSpec {
    pub fn resolve(&self) -> Result<Backbone> {
        match self {
            BackboneSpec::TinyTest => Ok(Backbone::tiny_test()),
            BackboneSpec::Vgg16File(path) => Backbone::vgg16_from_file(path),
        }
    }
}

/// Loss weights. Defaults follow the tuned configuration.
#[derive(Clone, Debug)]
pub struct LossConfig {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma4: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub w_ir: f64,
    pub w_vi: f64,
    pub backbone: BackboneSpec,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma1: 10.0,
            gamma2: 1.5,
            gamma4: 2000.0,
            beta2: 0.01,
            beta3: 0.5,
            w_ir: 3.0,
            w_vi: 0.5,
            backbone: BackboneSpec::TinyTest,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("gamma4", self.gamma4),
            ("beta2", self.beta2),
            ("beta3", self.beta3),
            ("w_ir", self.w_ir),
            ("w_vi", self.w_vi),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::Contract(format!(
                    "loss weight {name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if self.w_vi >= self.w_ir {
            return Err(Error::Contract(format!(
                "w_vi ({}) must stay below w_ir ({})",
                self.w_vi, self.w_ir
            )));
        }
        Ok(())
    }
}

/// Per-term values; `total` repeats the weighted sum in the same
/// accumulation order the tape uses.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossBreakdown {
    pub pixel: f64,
    pub shallow: f64,
    pub middle: f64,
    pub deep: f64,
    pub total: f64,
}

/// Weighted accumulation matching `Tape::weighted_sum` exactly.
fn weighted_sum(terms: &[(f64, f64)]) -> f64 {
    let mut acc = 0.0;
    for &(w, v) in terms {
        if w != 0.0 {
            acc += w * v;
        }
    }
    acc
}

/// `||I_f - I_vi||_F^2`.
pub fn loss_pixel(i_f: &Tensor, i_vi: &Tensor) -> Result<f64> {
    Ok(ops::sum_squares(&ops::sub(i_f, i_vi)?))
}

/// `||tap1(I_f) - tap1(I_vi)||_F^2`.
pub fn loss_shallow(taps_f: &FeatureTaps, taps_vi: &FeatureTaps) -> Result<f64> {
    Ok(ops::sum_squares(&ops::sub(&taps_f.taps[0], &taps_vi.taps[0])?))
}

fn middle_target(ir: &Tensor, vi: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    if ir.shape() != vi.shape() {
        return Err(Error::Shape(format!(
            "middle-level taps disagree: {:?} vs {:?}",
            ir.shape(),
            vi.shape()
        )));
    }
    let data = ir
        .data()
        .iter()
        .zip(vi.data())
        .map(|(a, b)| cfg.w_ir * a + cfg.w_vi * b)
        .collect();
    Tensor::new(ir.shape().to_vec(), data)
}

/// `sum_{k=2,3} beta^k ||tap_k(I_f) - (w_ir tap_k(I_ir) + w_vi tap_k(I_vi))||_F^2`.
pub fn loss_middle(
    taps_f: &FeatureTaps,
    taps_ir: &FeatureTaps,
    taps_vi: &FeatureTaps,
    cfg: &LossConfig,
) -> Result<f64> {
    let mut terms = [0.0; 2];
    for (slot, k) in [1usize, 2].iter().enumerate() {
        let target = middle_target(&taps_ir.taps[*k], &taps_vi.taps[*k], cfg)?;
        terms[slot] = ops::sum_squares(&ops::sub(&taps_f.taps[*k], &target)?);
    }
    Ok(weighted_sum(&[(cfg.beta2, terms[0]), (cfg.beta3, terms[1])]))
}

/// `||Gram(tap4(I_f)) - Gram(tap4(I_ir))||_F^2`.
pub fn loss_deep(taps_f: &FeatureTaps, taps_ir: &FeatureTaps) -> Result<f64> {
    let gf = ops::gram(&taps_f.taps[3])?;
    let gi = ops::gram(&taps_ir.taps[3])?;
    Ok(ops::sum_squares(&ops::sub(&gf, &gi)?))
}

/// Full loss over plain tensors.
pub fn loss_total(
    i_f: &Tensor,
    i_ir: &Tensor,
    i_vi: &Tensor,
    backbone: &Backbone,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let taps_f = backbone_features(i_f, backbone)?;
    let taps_ir = backbone_features(i_ir, backbone)?;
    let taps_vi = backbone_features(i_vi, backbone)?;
    let pixel = loss_pixel(i_f, i_vi)?;
    let shallow = loss_shallow(&taps_f, &taps_vi)?;
    let middle = loss_middle(&taps_f, &taps_ir, &taps_vi, cfg)?;
    let deep = loss_deep(&taps_f, &taps_ir)?;
    let total = weighted_sum(&[
        (cfg.gamma1, pixel),
        (cfg.gamma2, shallow),
        (1.0, middle),
        (cfg.gamma4, deep),
    ]);
    Ok(LossBreakdown {
        pixel,
        shallow,
        middle,
        deep,
        total,
    })
}

/// Differentiable loss. `i_f` lives on the tape; the source images enter as
/// constants, so only the fusion path receives gradients. Matches
/// [`loss_total`] bit for bit.
pub fn loss_total_taped(
    tape: &mut Tape,
    i_f: Var,
    i_ir: &Tensor,
    i_vi: &Tensor,
    backbone: &Backbone,
    cfg: &LossConfig,
) -> Result<(Var, LossBreakdown)> {
    let taps_f = backbone_features_taped(tape, i_f, backbone)?;
    let taps_ir = backbone_features(i_ir, backbone)?;
    let taps_vi = backbone_features(i_vi, backbone)?;

    let vi_leaf = tape.leaf(i_vi.clone());
    let pixel_diff = tape.sub(i_f, vi_leaf)?;
    let pixel = tape.sum_squares(pixel_diff);

    let shallow_target = tape.leaf(taps_vi.taps[0].clone());
    let shallow_diff = tape.sub(taps_f.taps[0], shallow_target)?;
    let shallow = tape.sum_squares(shallow_diff);

    let mut middle_terms = Vec::with_capacity(2);
    for k in [1usize, 2] {
        let target = middle_target(&taps_ir.taps[k], &taps_vi.taps[k], cfg)?;
        let target_leaf = tape.leaf(target);
        let diff = tape.sub(taps_f.taps[k], target_leaf)?;
        middle_terms.push(tape.sum_squares(diff));
    }
    let middle = tape.weighted_sum(&[(cfg.beta2, middle_terms[0]), (cfg.beta3, middle_terms[1])])?;

    let gram_f = tape.gram(taps_f.taps[3])?;
    let gram_ir = tape.leaf(ops::gram(&taps_ir.taps[3])?);
    let deep_diff = tape.sub(gram_f, gram_ir)?;
    let deep = tape.sum_squares(deep_diff);

    let total = tape.weighted_sum(&[
        (cfg.gamma1, pixel),
        (cfg.gamma2, shallow),
        (1.0, middle),
        (cfg.gamma4, deep),
    ])?;

    let breakdown = LossBreakdown {
        pixel: tape.value(pixel).scalar_value()?,
        shallow: tape.value(shallow).scalar_value()?,
        middle: tape.value(middle).scalar_value()?,
        deep: tape.value(deep).scalar_value()?,
        total: tape.value(total).scalar_value()?,
    };
    Ok((total, breakdown))
}
