//! Dense row-major tensors over `(frames, channels, height, width)` and the
//! seeded random source every stochastic operation draws from.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Extent of a latent video tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape4 {
    pub f: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub fn new(f: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        let shape = Shape4 { f, c, h, w };
        shape.validate()?;
        Ok(shape)
    }

    fn validate(&self) -> Result<()> {
        if self.f == 0 || self.c == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::InvalidShape(format!("{self} has a zero dimension")));
        }
        self.checked_len().map(|_| ())
    }

    /// Element count, computed in 64-bit arithmetic.
    pub fn checked_len(&self) -> Result<usize> {
        let n = (self.f as u64)
            .checked_mul(self.c as u64)
            .and_then(|n| n.checked_mul(self.h as u64))
            .and_then(|n| n.checked_mul(self.w as u64))
            .ok_or(Error::DimensionOverflow)?;
        usize::try_from(n).map_err(|_| Error::DimensionOverflow)
    }

    pub fn len(&self) -> usize {
        self.f * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Elements per frame (`c * h * w`).
    pub fn frame_len(&self) -> usize {
        self.c * self.h * self.w
    }

    #[inline]
    pub fn index(&self, q: usize, i: usize, j: usize, k: usize) -> usize {
        ((q * self.c + i) * self.h + j) * self.w + k
    }

    pub fn with_frames(&self, f: usize) -> Result<Self> {
        Shape4::new(f, self.c, self.h, self.w)
    }
}

impl std::fmt::Display for Shape4 {
    fn fmt(&self, fmt: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(fmt, "{}x{}x{}x{}", self.f, self.c, self.h, self.w)
    }
}

impl std::str::FromStr for Shape4 {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let dims = parse_dims(s)?;
        Shape4::new(dims[0], dims[1], dims[2], dims[3])
    }
}

/// Parses `"a,b,c,d"` into four positive integers.
pub(crate) fn parse_dims(s: &str) -> Result<[usize; 4]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(Error::InvalidShape(format!(
            "expected 4 comma-separated values, got {s:?}"
        )));
    }
    let mut dims = [0usize; 4];
    for (d, p) in dims.iter_mut().zip(&parts) {
        *d = p
            .parse()
            .map_err(|_| Error::InvalidShape(format!("not a positive integer: {p:?}")))?;
    }
    Ok(dims)
}

/// Real-valued latent, 64-bit in memory. Every element is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    shape: Shape4,
    data: Vec<f64>,
}

impl LatentTensor {
    pub fn new(shape: Shape4, data: Vec<f64>) -> Result<Self> {
        let n = shape.checked_len()?;
        if data.len() != n {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: n,
            });
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NotFinite(idx));
        }
        Ok(LatentTensor { shape, data })
    }

    pub fn zeros(shape: Shape4) -> Self {
        LatentTensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn frame(&self, q: usize) -> &[f64] {
        let n = self.shape.frame_len();
        &self.data[q * n..(q + 1) * n]
    }

    /// Builds a tensor from frames of identical per-frame extent.
    pub(crate) fn from_frames(template: Shape4, frames: Vec<Vec<f64>>) -> Result<Self> {
        let shape = template.with_frames(frames.len())?;
        let data: Vec<f64> = frames.into_iter().flatten().collect();
        LatentTensor::new(shape, data)
    }
}

/// Binary tensor; every element is 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitGrid4D {
    shape: Shape4,
    bits: Vec<u8>,
}

impl BitGrid4D {
    pub fn new(shape: Shape4, bits: Vec<u8>) -> Result<Self> {
        let n = shape.checked_len()?;
        if bits.len() != n {
            return Err(Error::LengthMismatch {
                left: bits.len(),
                right: n,
            });
        }
        if let Some(index) = bits.iter().position(|&b| b > 1) {
            return Err(Error::NotBinary {
                index,
                value: bits[index],
            });
        }
        Ok(BitGrid4D { shape, bits })
    }

    pub fn zeros(shape: Shape4) -> Self {
        BitGrid4D {
            shape,
            bits: vec![0; shape.len()],
        }
    }

    pub fn random(shape: Shape4, rng: &mut SeededRng) -> Self {
        let bits = (0..shape.len()).map(|_| rng.bit()).collect();
        BitGrid4D { shape, bits }
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn into_bits(self) -> Vec<u8> {
        self.bits
    }

    pub fn frame(&self, q: usize) -> &[u8] {
        let n = self.shape.frame_len();
        &self.bits[q * n..(q + 1) * n]
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    /// Packs bits eight per byte, most significant bit first, zero-padded.
    pub fn pack_msb(&self) -> Vec<u8> {
        pack_bits_msb(&self.bits)
    }

    pub fn unpack_msb(shape: Shape4, bytes: &[u8]) -> Result<Self> {
        let n = shape.checked_len()?;
        let need = n.div_ceil(8);
        if bytes.len() != need {
            return Err(Error::LengthMismatch {
                left: bytes.len(),
                right: need,
            });
        }
        let bits = (0..n).map(|i| (bytes[i / 8] >> (7 - i % 8)) & 1).collect();
        Ok(BitGrid4D { shape, bits })
    }
}

pub(crate) fn pack_bits_msb(bits: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        out[i / 8] |= (b & 1) << (7 - i % 8);
    }
    out
}

/// Reproducible random source identified by `(seed, stream)`.
///
/// Backed by ChaCha20 with the stream id as the cipher's stream selector, so
/// the draw sequence is identical on every platform.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha20Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    /// Uniform draw on the open interval (0, 1), on a 2^-53 grid offset by half a step.
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn bit(&mut self) -> u8 {
        (self.next_u64() >> 63) as u8
    }

    /// Standard normal draw by inverse-CDF.
    pub fn standard_normal(&mut self) -> f64 {
        crate::gaussian::ppf(self.uniform_open())
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        // Lemire's multiply-shift; bias is below 2^-64 * n.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}
