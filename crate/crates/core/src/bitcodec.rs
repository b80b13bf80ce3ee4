//! Payload replication, stream-cipher template bits and majority-vote
//! recovery.
//!
//! A payload of `n_bits` is laid out as a small `(f/k_f, c/k_c, h/k_h, w/k_w)`
//! grid and block-replicated to the latent shape, so each payload bit owns a
//! contiguous `k_f x k_c x k_h x k_w` block. The replicated grid is packed
//! MSB-first in row-major order and XORed with the ChaCha20 (RFC 8439)
//! keystream starting at block counter 0, giving the template bits.

use chacha20::cipher::{KeyIvInit, StreamCipher};
use chacha20::ChaCha20;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{parse_dims, BitGrid4D, SeededRng, Shape4};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WatermarkPayload {
    bits: Vec<u8>,
}

impl WatermarkPayload {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(index) = bits.iter().position(|&b| b > 1) {
            return Err(Error::NotBinary {
                index,
                value: bits[index],
            });
        }
        Ok(WatermarkPayload { bits })
    }

    pub fn random(n_bits: usize, rng: &mut SeededRng) -> Self {
        WatermarkPayload {
            bits: (0..n_bits).map(|_| rng.bit()).collect(),
        }
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// The payload as a bit grid over the reduced shape, for `VSBT` export.
    pub fn to_grid(&self, reduced: Shape4) -> Result<BitGrid4D> {
        BitGrid4D::new(reduced, self.bits.clone())
    }

    pub fn from_grid(grid: &BitGrid4D) -> Self {
        WatermarkPayload {
            bits: grid.bits().to_vec(),
        }
    }
}

/// Per-axis repetition factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepeatFactors {
    pub k_f: usize,
    pub k_c: usize,
    pub k_h: usize,
    pub k_w: usize,
}

impl RepeatFactors {
    pub fn new(k_f: usize, k_c: usize, k_h: usize, k_w: usize) -> Result<Self> {
        if k_f == 0 || k_c == 0 || k_h == 0 || k_w == 0 {
            return Err(Error::FactorMismatch(
                "repeat factors must be positive".into(),
            ));
        }
        Ok(RepeatFactors { k_f, k_c, k_h, k_w })
    }

    pub fn k_all(&self) -> usize {
        self.k_f * self.k_c * self.k_h * self.k_w
    }

    /// Payload grid shape for `shape`, checking divisibility.
    pub fn reduced(&self, shape: Shape4) -> Result<Shape4> {
        let pairs = [
            (shape.f, self.k_f, 'f'),
            (shape.c, self.k_c, 'c'),
            (shape.h, self.k_h, 'h'),
            (shape.w, self.k_w, 'w'),
        ];
        for (dim, k, name) in pairs {
            if k == 0 || dim % k != 0 {
                return Err(Error::FactorMismatch(format!(
                    "factor {k} does not divide {name} = {dim} (shape {shape})"
                )));
            }
        }
        Shape4::new(
            shape.f / self.k_f,
            shape.c / self.k_c,
            shape.h / self.k_h,
            shape.w / self.k_w,
        )
    }

    pub fn n_bits(&self, shape: Shape4) -> Result<usize> {
        Ok(self.reduced(shape)?.len())
    }
}

impl std::str::FromStr for RepeatFactors {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let d = parse_dims(s).map_err(|e| Error::FactorMismatch(e.to_string()))?;
        RepeatFactors::new(d[0], d[1], d[2], d[3])
    }
}

/// 256-bit ChaCha20 key and 96-bit nonce.
#[derive(Clone, PartialEq, Eq)]
pub struct WatermarkKey {
    pub key: [u8; 32],
    pub nonce: [u8; 12],
}

impl std::fmt::Debug for WatermarkKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WatermarkKey")
            .field("nonce", &hex::encode(self.nonce))
            .finish_non_exhaustive()
    }
}

#[derive(Serialize, Deserialize)]
struct KeyJson {
    key: String,
    nonce: String,
}

impl WatermarkKey {
    pub fn new(key: [u8; 32], nonce: [u8; 12]) -> Self {
        WatermarkKey { key, nonce }
    }

    /// Draws key and nonce from any byte source.
    pub fn generate<R: rand::RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut key = [0u8; 32];
        let mut nonce = [0u8; 12];
        rng.fill_bytes(&mut key);
        rng.fill_bytes(&mut nonce);
        WatermarkKey { key, nonce }
    }

    pub fn to_json(&self) -> String {
        let j = KeyJson {
            key: hex::encode(self.key),
            nonce: hex::encode(self.nonce),
        };
        serde_json::to_string_pretty(&j).expect("key json")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: KeyJson = serde_json::from_str(s)?;
        let mut key = [0u8; 32];
        let mut nonce = [0u8; 12];
        hex::decode_to_slice(&j.key, &mut key)
            .map_err(|e| Error::InvalidKey(format!("key: {e} (need 64 hex chars)")))?;
        hex::decode_to_slice(&j.nonce, &mut nonce)
            .map_err(|e| Error::InvalidKey(format!("nonce: {e} (need 24 hex chars)")))?;
        Ok(WatermarkKey { key, nonce })
    }

    fn apply_keystream(&self, buf: &mut [u8]) {
        let mut cipher = ChaCha20::new(&self.key.into(), &self.nonce.into());
        cipher.apply_keystream(buf);
    }
}

/// Block-replicates `m` over `shape`: `m_d[q,i,j,k] = m[q/k_f, i/k_c, j/k_h, k/k_w]`.
pub fn expand_payload(
    m: &WatermarkPayload,
    shape: Shape4,
    factors: RepeatFactors,
) -> Result<BitGrid4D> {
    let reduced = factors.reduced(shape)?;
    if m.len() != reduced.len() {
        return Err(Error::FactorMismatch(format!(
            "payload has {} bits, shape {shape} with factors needs {}",
            m.len(),
            reduced.len()
        )));
    }
    let mut bits = Vec::with_capacity(shape.len());
    for q in 0..shape.f {
        for i in 0..shape.c {
            for j in 0..shape.h {
                let row = reduced.index(q / factors.k_f, i / factors.k_c, j / factors.k_h, 0);
                bits.extend((0..shape.w).map(|k| m.bits[row + k / factors.k_w]));
            }
        }
    }
    BitGrid4D::new(shape, bits)
}

fn xor_keystream(grid: &BitGrid4D, key: &WatermarkKey) -> BitGrid4D {
    let mut bytes = grid.pack_msb();
    key.apply_keystream(&mut bytes);
    // Padding bits of the last byte carry keystream; unpack ignores them.
    BitGrid4D::unpack_msb(grid.shape(), &bytes).expect("same length")
}

/// Template bits `TP` from the replicated payload.
pub fn encrypt_template(m_d: &BitGrid4D, key: &WatermarkKey) -> BitGrid4D {
    xor_keystream(m_d, key)
}

pub fn decrypt_template(iv: &BitGrid4D, key: &WatermarkKey) -> BitGrid4D {
    xor_keystream(iv, key)
}

/// Majority vote over each payload bit's `k_all` replicas; ties decode to 0.
pub fn majority_extract(m_d_ext: &BitGrid4D, factors: RepeatFactors) -> Result<WatermarkPayload> {
    let shape = m_d_ext.shape();
    let reduced = factors.reduced(shape)?;
    let mut ones = vec![0usize; reduced.len()];
    let bits = m_d_ext.bits();
    for q in 0..shape.f {
        for i in 0..shape.c {
            for j in 0..shape.h {
                let row = reduced.index(q / factors.k_f, i / factors.k_c, j / factors.k_h, 0);
                let src = shape.index(q, i, j, 0);
                for k in 0..shape.w {
                    ones[row + k / factors.k_w] += bits[src + k] as usize;
                }
            }
        }
    }
    let k_all = factors.k_all();
    let bits = ones.into_iter().map(|n| u8::from(2 * n > k_all)).collect();
    Ok(WatermarkPayload { bits })
}

/// Fraction of positions where `a` and `b` agree.
pub fn bit_accuracy(a: &WatermarkPayload, b: &WatermarkPayload) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::InvalidParameter("empty payloads".into()));
    }
    let same = a.bits.iter().zip(&b.bits).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.len() as f64)
}
