//! Learned low-rank representation decomposition and infrared-visible image
//! fusion.
//!
//! The crate provides, bottom to top:
//!
//! - [`tensor`] / [`ops`] / [`tape`]: a small dense tensor, its forward
//!   kernels, and a reverse-mode gradient tape with a finite-difference
//!   checker.
//! - [`mat`] / [`lista`]: the matrix-form decomposition solver (unrolled
//!   shrinkage-thresholding with precomputed operators, a per-step reference
//!   iteration, objective evaluation, and the nuclear-norm factorization
//!   identity).
//! - [`llrr`] / [`lrrnet`]: the convolutional block stack and the two-branch
//!   fusion network with its LRRW parameter container.
//! - [`backbone`] / [`loss`]: four-tap feature extraction (tiny deterministic
//!   backbone or loaded VGG-16 weights) and the detail-to-semantic loss.
//! - [`trainer`] / [`synth`]: seeded end-to-end training over paired
//!   grayscale datasets and a synthetic pair generator.
//! - [`metrics`]: six fusion quality metrics with CSV and table reporting.
//! - [`checkgrad`]: a finite-difference audit over every differentiable
//!   operation and the full fusion-loss composite.

pub mod backbone;
pub mod checkgrad;
pub mod container;
pub mod error;
pub mod imageio;
pub mod lista;
pub mod llrr;
pub mod loss;
pub mod lrrnet;
pub mod mat;
pub mod metrics;
pub mod ops;
pub mod rng;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
