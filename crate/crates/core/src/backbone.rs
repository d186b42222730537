//! Four-tap feature backbone for the multi-level loss.
//!
//! Two variants share one forward path: a tiny deterministic backbone whose
//! weights are drawn once from seed 42 (hermetic tests, no external files),
//! and a 16-layer classification backbone loaded from an LRRW weight file
//! (see `docs/vgg16-weights.md` for the offline conversion recipe). Taps are
//! the activation output of each conv block, taken before pooling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::container::Container;
use crate::error::{Error, Result};
use crate::llrr::init_kernel;
use crate::ops::{self, same_padding};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const TINY_SEED: u64 = 42;
pub const TINY_CHANNELS: [usize; 4] = [4, 8, 16, 32];

/// Per-channel normalization constants of the pretrained backbone's original
/// training corpus.
pub const RGB_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const RGB_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Avg,
    Max,
}

#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

#[derive(Clone, Debug)]
pub struct Backbone {
    /// Four conv blocks; the tap for block `i` is its final activation.
    pub blocks: Vec<Vec<ConvLayer>>,
    pub pool: PoolKind,
    /// Replicate grayscale to three channels and normalize before block 1.
    pub normalize_rgb: bool,
    pub name: String,
}

/// Activations of conv blocks 1..=4.
#[derive(Clone, Debug)]
pub struct FeatureTaps {
    pub taps: [Tensor; 4],
}

/// Tap handles on a tape.
#[derive(Clone, Copy, Debug)]
pub struct FeatureTapVars {
    pub taps: [Var; 4],
}

impl Backbone {
    /// Deterministic bias-free test backbone: four blocks of one 3x3
    /// convolution (channels 4/8/16/32), ramp activation, 2x2 average pool.
    pub fn tiny_test() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(TINY_SEED);
        let mut blocks = Vec::with_capacity(4);
        let mut in_ch = 1;
        for out_ch in TINY_CHANNELS {
            blocks.push(vec![ConvLayer {
                weight: init_kernel(vec![out_ch, in_ch, 3, 3], &mut rng),
                bias: None,
            }]);
            in_ch = out_ch;
        }
        Backbone {
            blocks,
            pool: PoolKind::Avg,
            normalize_rgb: false,
            name: "tiny-test".into(),
        }
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.set_meta("model", format!("backbone-{}", self.name));
        for (bi, block) in self.blocks.iter().enumerate() {
            for (li, layer) in block.iter().enumerate() {
                c.push(format!("b{}.conv{}.weight", bi + 1, li), layer.weight.clone());
                if let Some(bias) = &layer.bias {
                    c.push(format!("b{}.conv{}.bias", bi + 1, li), bias.clone());
                }
            }
        }
        c
    }

    /// Loads the 16-layer backbone's first four blocks from an LRRW file.
    /// Expects tensors `conv{b}_{i}.weight` / `.bias` for blocks 1..=4 with
    /// layer counts 2/2/3/3; any extra tensors (deeper layers) are ignored.
    pub fn vgg16_from_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let c = Container::load(path)?;
        Self::vgg16_from_container(&c)
    }

    pub fn vgg16_from_container(c: &Container) -> Result<Self> {
        const LAYOUT: [(usize, usize); 4] = [(2, 64), (2, 128), (3, 256), (3, 512)];
        let mut blocks = Vec::with_capacity(4);
        let mut in_ch = 3;
        for (bi, (layers, out_ch)) in LAYOUT.iter().enumerate() {
            let mut block = Vec::with_capacity(*layers);
            for li in 0..*layers {
                let base = format!("conv{}_{}", bi + 1, li + 1);
                let weight = c
                    .get(&format!("{base}.weight"))
                    .ok_or_else(|| Error::Manifest(format!("missing tensor '{base}.weight'")))?;
                let expect = [*out_ch, in_ch, 3, 3];
                if weight.shape() != expect {
                    return Err(Error::Manifest(format!(
                        "'{base}.weight' has shape {:?}, expected {expect:?}",
                        weight.shape()
                    )));
                }
                let bias = c
                    .get(&format!("{base}.bias"))
                    .ok_or_else(|| Error::Manifest(format!("missing tensor '{base}.bias'")))?;
                if bias.shape() != [*out_ch] {
                    return Err(Error::Manifest(format!(
                        "'{base}.bias' has shape {:?}, expected [{out_ch}]",
                        bias.shape()
                    )));
                }
                block.push(ConvLayer {
                    weight: weight.clone(),
                    bias: Some(bias.clone()),
                });
                in_ch = *out_ch;
            }
            blocks.push(block);
        }
        Ok(Backbone {
            blocks,
            pool: PoolKind::Max,
            normalize_rgb: true,
            name: "vgg16".into(),
        })
    }

    /// Diagonal 1x1 kernel and bias implementing `(x - mean) / std` on the
    /// replicated three-channel input.
    fn normalization_pair(&self) -> (Tensor, Tensor) {
        let mut w = Tensor::zeros(vec![3, 3, 1, 1]);
        let mut b = Tensor::zeros(vec![3]);
        for ch in 0..3 {
            w.data_mut()[ch * 3 + ch] = 1.0 / RGB_STD[ch];
            b.data_mut()[ch] = -RGB_MEAN[ch] / RGB_STD[ch];
        }
        (w, b)
    }
}

fn check_input(image: &Tensor) -> Result<()> {
    match image.shape() {
        [1, h, w] if *h >= 16 && *w >= 16 && h % 16 == 0 && w % 16 == 0 => Ok(()),
        [1, h, w] => Err(Error::Size(format!(
            "backbone input must have spatial dims divisible by 16 (four pooling stages), got {h}x{w}"
        ))),
        s => Err(Error::Shape(format!("backbone input must be 1xHxW, got {s:?}"))),
    }
}

/// Deterministic forward pass over plain tensors.
pub fn backbone_features(image: &Tensor, backbone: &Backbone) -> Result<FeatureTaps> {
    check_input(image)?;
    let mut x = if backbone.normalize_rgb {
        let rgb = ops::concat_channels(&[image, image, image])?;
        let (w, b) = backbone.normalization_pair();
        ops::bias_add(&ops::conv2d(&rgb, &w, 0)?, &b)?
    } else {
        image.clone()
    };

    let mut taps = Vec::with_capacity(4);
    for (bi, block) in backbone.blocks.iter().enumerate() {
        for layer in block {
            let pad = same_padding(layer.weight.shape()[2]);
            x = ops::conv2d(&x, &layer.weight, pad)?;
            if let Some(bias) = &layer.bias {
                x = ops::bias_add(&x, bias)?;
            }
            x = ops::relu(&x);
        }
        taps.push(x.clone());
        if bi + 1 < backbone.blocks.len() {
            x = match backbone.pool {
                PoolKind::Avg => ops::avg_pool2(&x)?,
                PoolKind::Max => ops::max_pool2(&x)?.0,
            };
        }
    }
    let taps: [Tensor; 4] = taps.try_into().expect("four blocks");
    Ok(FeatureTaps { taps })
}

/// Differentiable forward pass; gradients flow back to the input image.
/// Mirrors [`backbone_features`] bit for bit.
pub fn backbone_features_taped(
    tape: &mut Tape,
    image: Var,
    backbone: &Backbone,
) -> Result<FeatureTapVars> {
    check_input(tape.value(image))?;
    let mut x = if backbone.normalize_rgb {
        let rgb = tape.concat_channels(&[image, image, image])?;
        let (w, b) = backbone.normalization_pair();
        let wv = tape.leaf(w);
        let bv = tape.leaf(b);
        let y = tape.conv2d(rgb, wv, 0)?;
        tape.bias_add(y, bv)?
    } else {
        image
    };

    let mut taps = Vec::with_capacity(4);
    for (bi, block) in backbone.blocks.iter().enumerate() {
        for layer in block {
            let pad = same_padding(layer.weight.shape()[2]);
            let wv = tape.leaf(layer.weight.clone());
            x = tape.conv2d(x, wv, pad)?;
            if let Some(bias) = &layer.bias {
                let bv = tape.leaf(bias.clone());
                x = tape.bias_add(x, bv)?;
            }
            x = tape.relu(x);
        }
        taps.push(x);
        if bi + 1 < backbone.blocks.len() {
            x = match backbone.pool {
                PoolKind::Avg => tape.avg_pool2(x)?,
                PoolKind::Max => tape.max_pool2(x)?,
            };
        }
    }
    let taps: [Var; 4] = taps.try_into().expect("four blocks");
    Ok(FeatureTapVars { taps })
}
