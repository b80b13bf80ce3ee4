use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use noiseshield_core::format::read_bits_file;
use noiseshield_core::{RegionMask, SeededRng, TemporalEdit, ThresholdTable, WatermarkKey};
use serde::Serialize;

pub fn read_key(path: &Path) -> Result<WatermarkKey> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading key {}", path.display()))?;
    WatermarkKey::from_json(&text).with_context(|| format!("parsing key {}", path.display()))
}

pub fn read_thresholds(path: &Path) -> Result<ThresholdTable> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading thresholds {}", path.display()))?;
    ThresholdTable::from_json(&text)
        .with_context(|| format!("parsing thresholds {}", path.display()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn read_positions(path: &Path) -> Result<Vec<i64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing positions {}", path.display()))
}

/// `--edits` takes inline JSON or a file path.
pub fn parse_edits(arg: Option<&str>) -> Result<Vec<TemporalEdit>> {
    let Some(arg) = arg else {
        return Ok(Vec::new());
    };
    let text = if arg.trim_start().starts_with('[') {
        arg.to_string()
    } else {
        fs::read_to_string(arg).with_context(|| format!("reading edits {arg}"))?
    };
    serde_json::from_str(&text).context("parsing edits")
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Ground-truth region from a file, a crop ratio, an aligned box, or nothing.
pub fn build_region(
    mask: Option<&Path>,
    crop_ratio: Option<f64>,
    aligned_box: Option<usize>,
    dims: (usize, usize, usize),
    rng: &mut SeededRng,
) -> Result<RegionMask> {
    let (f, h, w) = dims;
    let region = if let Some(path) = mask {
        RegionMask::from_grid(
            &read_bits_file(path).with_context(|| format!("reading mask {}", path.display()))?,
        )?
    } else if let Some(r) = crop_ratio {
        RegionMask::crop_drop(f, h, w, r, rng)?
    } else if let Some(a) = aligned_box {
        RegionMask::random_aligned_box(f, h, w, a, rng)?
    } else {
        RegionMask::empty(f, h, w)
    };
    if (region.frames(), region.height(), region.width()) != dims {
        bail!(
            "mask {}x{}x{} does not match latent {f}x{h}x{w}",
            region.frames(),
            region.height(),
            region.width()
        );
    }
    Ok(region)
}

/// Brings a ground-truth mask to the prediction's resolution.
pub fn match_resolution(gt: RegionMask, pred: &RegionMask) -> Result<RegionMask> {
    let target = (pred.frames(), pred.height(), pred.width());
    if (gt.frames(), gt.height(), gt.width()) == target {
        return Ok(gt);
    }
    if gt.frames() == pred.frames()
        && gt.height() > 0
        && pred.height().is_multiple_of(gt.height())
        && pred.height() / gt.height() * gt.width() == pred.width()
    {
        return Ok(gt.upscale(pred.height() / gt.height())?);
    }
    bail!(
        "ground truth {}x{}x{} cannot be matched to prediction {}x{}x{}",
        gt.frames(),
        gt.height(),
        gt.width(),
        target.0,
        target.1,
        target.2
    )
}

/// One binary P5 graymap per frame, tampered positions white.
pub fn write_pgm_frames(mask: &RegionMask, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    let plane = mask.height() * mask.width();
    for p in 0..mask.frames() {
        let mut buf = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
        buf.extend(
            mask.bits()[p * plane..(p + 1) * plane]
                .iter()
                .map(|&b| b * 255),
        );
        let path = dir.join(format!("frame_{p:03}.pgm"));
        fs::write(&path, buf).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
