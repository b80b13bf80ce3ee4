//! `VSLT` (latent) and `VSBT` (bit grid) binary files.
//!
//! Both share a 24-byte header: four magic bytes, a little-endian `u32`
//! format version (currently 1), then `f, c, h, w` as little-endian `u32`.
//! Latent payloads are little-endian `f32` in row-major `(f, c, h, w)` order.
//! Bit payloads are packed eight per byte, MSB first, with the final byte
//! zero-padded.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{BitGrid4D, LatentTensor, Shape4};

pub const LATENT_MAGIC: [u8; 4] = *b"VSLT";
pub const BITS_MAGIC: [u8; 4] = *b"VSBT";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

fn header(magic: [u8; 4], shape: Shape4) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for d in [shape.f, shape.c, shape.h, shape.w] {
        let d = u32::try_from(d).map_err(|_| Error::DimensionOverflow)?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    Ok(out)
}

fn parse_header(magic: [u8; 4], bytes: &[u8]) -> Result<Shape4> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let found: [u8; 4] = bytes[0..4].try_into().unwrap();
    if found != magic {
        return Err(Error::BadMagic {
            expected: magic,
            found,
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dims = [word(1), word(2), word(3), word(4)];
    // Overflow must be caught before the zero-dimension check so that absurd
    // headers report the right error.
    let shape = Shape4 {
        f: dims[0] as usize,
        c: dims[1] as usize,
        h: dims[2] as usize,
        w: dims[3] as usize,
    };
    shape.checked_len()?;
    Shape4::new(shape.f, shape.c, shape.h, shape.w)
}

fn check_payload(bytes: &[u8], expected: u64) -> Result<()> {
    let found = (bytes.len() - HEADER_LEN) as u64;
    if found < expected {
        return Err(Error::Truncated { expected, found });
    }
    if found > expected {
        return Err(Error::TrailingBytes(found - expected));
    }
    Ok(())
}

pub fn encode_latent(t: &LatentTensor) -> Result<Vec<u8>> {
    let mut out = header(LATENT_MAGIC, t.shape())?;
    out.reserve(t.data().len() * 4);
    for (index, &v) in t.data().iter().enumerate() {
        if v.abs() > f32::MAX as f64 {
            return Err(Error::OutOfRange { index, value: v });
        }
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_latent(bytes: &[u8]) -> Result<LatentTensor> {
    let shape = parse_header(LATENT_MAGIC, bytes)?;
    let n = shape.checked_len()?;
    let expected = (n as u64).checked_mul(4).ok_or(Error::DimensionOverflow)?;
    check_payload(bytes, expected)?;
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    LatentTensor::new(shape, data)
}

pub fn encode_bits(b: &BitGrid4D) -> Result<Vec<u8>> {
    let mut out = header(BITS_MAGIC, b.shape())?;
    out.extend_from_slice(&b.pack_msb());
    Ok(out)
}

pub fn decode_bits(bytes: &[u8]) -> Result<BitGrid4D> {
    let shape = parse_header(BITS_MAGIC, bytes)?;
    let n = shape.checked_len()?;
    check_payload(bytes, n.div_ceil(8) as u64)?;
    let payload = &bytes[HEADER_LEN..];
    let used = n % 8;
    if used != 0 {
        let pad_mask = 0xFFu8 >> used;
        if payload[payload.len() - 1] & pad_mask != 0 {
            return Err(Error::NonzeroPadding);
        }
    }
    BitGrid4D::unpack_msb(shape, payload)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn write_latent_file(t: &LatentTensor, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_latent(t)?;
    write_file(path.as_ref(), &bytes)
}

pub fn read_latent_file(path: impl AsRef<Path>) -> Result<LatentTensor> {
    decode_latent(&fs::read(path)?)
}

pub fn write_bits_file(b: &BitGrid4D, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_bits(b)?;
    write_file(path.as_ref(), &bytes)
}

pub fn read_bits_file(path: impl AsRef<Path>) -> Result<BitGrid4D> {
    decode_bits(&fs::read(path)?)
}
