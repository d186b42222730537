//! Seeded sampling helpers.
//!
//! Values are derived from the raw 64-bit stream so that generated numbers
//! stay stable across dependency upgrades.

use rand::RngCore;

/// Uniform in `[0, 1)` from the top 53 bits of the next word.
pub fn unit_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in `[lo, hi)`.
pub fn uniform(rng: &mut impl RngCore, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit_f64(rng)
}
