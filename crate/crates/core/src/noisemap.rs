//! Template bits to Gaussian noise and back.
//!
//! Each bit selects a half of N(0, 1): bit 0 draws from `(-inf, 0]`, bit 1
//! from `(0, inf)`, each with density `2 f(x)` on its half. With balanced
//! bits the marginal is exactly N(0, 1). Recovery is the sign.

use crate::gaussian;
use crate::tensor::{BitGrid4D, LatentTensor, SeededRng};

/// Draws one value from the half of N(0, 1) selected by `bit`.
///
/// Computes `ppf((bit + u) / 2)` for `u ~ U(0, 1)`. The positive half is
/// evaluated through the reflection `-ppf((1 - u) / 2)`, which is the same
/// value without rounding `(1 + u) / 2` back onto 0.5 for tiny `u`.
#[inline]
pub fn sample_half(bit: u8, rng: &mut SeededRng) -> f64 {
    let u = rng.uniform_open();
    if bit == 0 {
        gaussian::ppf(0.5 * u)
    } else {
        -gaussian::ppf(0.5 * (1.0 - u))
    }
}

/// Watermarked noise conditioned on template bits.
pub fn sample_noise(tp: &BitGrid4D, rng: &mut SeededRng) -> LatentTensor {
    let data = tp.bits().iter().map(|&b| sample_half(b, rng)).collect();
    LatentTensor::new(tp.shape(), data).expect("finite by construction")
}

/// Inverted bits: 0 where `z <= 0`, 1 where `z > 0`.
pub fn invert_bits(z: &LatentTensor) -> BitGrid4D {
    let bits = z.data().iter().map(|&v| u8::from(v > 0.0)).collect();
    BitGrid4D::new(z.shape(), bits).expect("binary by construction")
}
