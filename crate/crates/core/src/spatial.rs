//! Spatial tamper localization from agreement bits.
//!
//! The agreement matrix is averaged over channels into a soft mask, then
//! refined at `L` levels: level `l` averages cubes of side `2^(l-1)`,
//! polarizes confident cube scores to 0 (tampered) or 1 (intact), and writes
//! each score back over its cube. The refined mask is the mean of the level
//! masks. Internally 1 means intact; [`finalize_mask`] flips to 1 = tampered.

use serde::{Deserialize, Serialize};

use crate::channel::RegionMask;
use crate::error::{Error, Result};
use crate::temporal::CmpMatrix;

/// Soft mask over `(frames, height, width)` with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask3D {
    frames: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl SoftMask3D {
    pub fn new(frames: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidShape(format!(
                "mask {frames}x{height}x{width}"
            )));
        }
        if values.len() != frames * height * width {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: frames * height * width,
            });
        }
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter(format!(
                "mask value {} outside [0, 1]",
                values[i]
            )));
        }
        Ok(SoftMask3D {
            frames,
            height,
            width,
            values,
        })
    }

    pub fn filled(frames: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        SoftMask3D::new(frames, height, width, vec![value; frames * height * width])
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, p: usize, j: usize, k: usize) -> f64 {
        self.values[(p * self.height + j) * self.width + k]
    }

    fn dims(&self) -> (usize, usize, usize) {
        (self.frames, self.height, self.width)
    }

    /// Edge-replicates up to the given extent.
    fn pad_to(&self, frames: usize, height: usize, width: usize) -> SoftMask3D {
        let mut values = Vec::with_capacity(frames * height * width);
        for p in 0..frames {
            for j in 0..height {
                for k in 0..width {
                    values.push(self.get(
                        p.min(self.frames - 1),
                        j.min(self.height - 1),
                        k.min(self.width - 1),
                    ));
                }
            }
        }
        SoftMask3D {
            frames,
            height,
            width,
            values,
        }
    }

    fn crop_to(&self, frames: usize, height: usize, width: usize) -> SoftMask3D {
        let mut values = Vec::with_capacity(frames * height * width);
        for p in 0..frames {
            for j in 0..height {
                let start = (p * self.height + j) * self.width;
                values.extend_from_slice(&self.values[start..start + width]);
            }
        }
        SoftMask3D {
            frames,
            height,
            width,
            values,
        }
    }
}

/// `M_ini[p,j,k]`: mean of the agreement bits over channels.
pub fn channel_average(cmp: &CmpMatrix) -> SoftMask3D {
    let s = cmp.grid().shape();
    let bits = cmp.grid().bits();
    let plane = s.h * s.w;
    let mut sums = vec![0u32; s.f * plane];
    for p in 0..s.f {
        for i in 0..s.c {
            let src = s.index(p, i, 0, 0);
            let dst = &mut sums[p * plane..(p + 1) * plane];
            for (acc, &b) in dst.iter_mut().zip(&bits[src..src + plane]) {
                *acc += b as u32;
            }
        }
    }
    let c = s.c as f64;
    let values = sums.into_iter().map(|n| n as f64 / c).collect();
    SoftMask3D {
        frames: s.f,
        height: s.h,
        width: s.w,
        values,
    }
}

/// Averages every `mu x mu x mu` cube. All three extents must be multiples of `mu`.
///
/// Each cube is summed as deviations from its first element, so constant
/// cubes average to exactly that element.
pub fn gather_average(m: &SoftMask3D, mu: usize) -> Result<SoftMask3D> {
    let (f, h, w) = m.dims();
    if mu == 0 || f % mu != 0 || h % mu != 0 || w % mu != 0 {
        return Err(Error::ShapeMismatch(format!(
            "cube side {mu} does not divide {f}x{h}x{w}"
        )));
    }
    if mu == 1 {
        return Ok(m.clone());
    }
    let (fo, ho, wo) = (f / mu, h / mu, w / mu);
    let norm = (mu * mu * mu) as f64;
    let mut values = Vec::with_capacity(fo * ho * wo);
    for p in 0..fo {
        for j in 0..ho {
            for k in 0..wo {
                let anchor = m.get(p * mu, j * mu, k * mu);
                let mut dev = 0.0;
                for x in p * mu..(p + 1) * mu {
                    for y in j * mu..(j + 1) * mu {
                        let row =
                            &m.values[(x * h + y) * w + k * mu..(x * h + y) * w + (k + 1) * mu];
                        dev += row.iter().map(|v| v - anchor).sum::<f64>();
                    }
                }
                values.push((anchor + dev / norm).clamp(0.0, 1.0));
            }
        }
    }
    Ok(SoftMask3D {
        frames: fo,
        height: ho,
        width: wo,
        values,
    })
}

/// Partial threshold binarization of a single score.
#[inline]
pub fn ptb(o: f64, t_wm: f64, t_orig: f64) -> f64 {
    if o < t_wm {
        0.0
    } else if o > t_orig {
        1.0
    } else {
        o
    }
}

/// Below `t_wm` becomes 0, above `t_orig` becomes 1, the rest is kept.
pub fn partial_threshold_binarize(m: &SoftMask3D, t_wm: f64, t_orig: f64) -> SoftMask3D {
    let values = m.values.iter().map(|&o| ptb(o, t_wm, t_orig)).collect();
    SoftMask3D { values, ..*m }
}

/// Writes every cell back over its `mu x mu x mu` cube.
pub fn repeat_expand(m: &SoftMask3D, mu: usize) -> SoftMask3D {
    assert!(mu > 0);
    let (f, h, w) = (m.frames * mu, m.height * mu, m.width * mu);
    let mut values = Vec::with_capacity(f * h * w);
    for p in 0..f {
        for j in 0..h {
            let src = ((p / mu) * m.height + j / mu) * m.width;
            values.extend((0..w).map(|k| m.values[src + k / mu]));
        }
    }
    SoftMask3D {
        frames: f,
        height: h,
        width: w,
        values,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelThresholds {
    pub t_wm: f64,
    pub t_orig: f64,
}

impl LevelThresholds {
    /// Thresholds that leave every score unchanged.
    pub fn passthrough() -> Self {
        LevelThresholds {
            t_wm: 0.0,
            t_orig: 1.0,
        }
    }
}

/// Per-level thresholds; level `l` (1-based) uses cube side `2^(l-1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HstrConfig {
    pub levels: Vec<LevelThresholds>,
}

impl HstrConfig {
    pub fn new(levels: Vec<LevelThresholds>) -> Result<Self> {
        let cfg = HstrConfig { levels };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::InvalidParameter(
                "HSTR needs at least one level".into(),
            ));
        }
        if self.levels.len() > 16 {
            return Err(Error::InvalidParameter(
                "HSTR supports at most 16 levels".into(),
            ));
        }
        for (l, t) in self.levels.iter().enumerate() {
            let ok = (0.0..=1.0).contains(&t.t_wm)
                && (0.0..=1.0).contains(&t.t_orig)
                && t.t_wm <= t.t_orig;
            if !ok {
                return Err(Error::InvalidParameter(format!(
                    "level {}: need 0 <= t_wm ({}) <= t_orig ({}) <= 1",
                    l + 1,
                    t.t_wm,
                    t.t_orig
                )));
            }
        }
        Ok(())
    }

    pub fn mu(level: usize) -> usize {
        1 << (level - 1)
    }

    pub fn max_mu(&self) -> usize {
        Self::mu(self.levels.len())
    }
}

/// Hierarchical refinement of the initial mask.
///
/// Extents that are not multiples of the largest cube side are edge-padded
/// before refinement and cropped afterwards.
pub fn hstr(m_ini: &SoftMask3D, cfg: &HstrConfig) -> Result<SoftMask3D> {
    cfg.validate()?;
    let (f, h, w) = m_ini.dims();
    let top = cfg.max_mu();
    let round_up = |n: usize| n.div_ceil(top) * top;
    let padded = m_ini.pad_to(round_up(f), round_up(h), round_up(w));
    let mut acc = vec![0.0f64; padded.values.len()];
    for (idx, t) in cfg.levels.iter().enumerate() {
        let mu = HstrConfig::mu(idx + 1);
        let gathered = gather_average(&padded, mu)?;
        let level = repeat_expand(&partial_threshold_binarize(&gathered, t.t_wm, t.t_orig), mu);
        for (a, v) in acc.iter_mut().zip(&level.values) {
            *a += v;
        }
    }
    let n = cfg.levels.len() as f64;
    let values = acc.into_iter().map(|a| (a / n).clamp(0.0, 1.0)).collect();
    let refined = SoftMask3D { values, ..padded };
    Ok(refined.crop_to(f, h, w))
}

/// Nearest-neighbour upscale by `scale`, then mark positions scoring below
/// `tau` as tampered.
pub fn finalize_mask(m_ref: &SoftMask3D, tau: f64, scale: usize) -> Result<RegionMask> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidParameter(format!("tau {tau} outside (0, 1)")));
    }
    if scale == 0 {
        return Err(Error::InvalidParameter("scale must be >= 1".into()));
    }
    let (f, h, w) = (m_ref.frames, m_ref.height * scale, m_ref.width * scale);
    let mut bits = Vec::with_capacity(f * h * w);
    for p in 0..f {
        for y in 0..h {
            bits.extend((0..w).map(|x| u8::from(m_ref.get(p, y / scale, x / scale) < tau)));
        }
    }
    RegionMask::new(f, h, w, bits)
}

/// Tamper likelihood for AUC: `1 - m_ref`, upscaled like [`finalize_mask`].
pub fn tamper_scores(m_ref: &SoftMask3D, scale: usize) -> SoftMask3D {
    let up = if scale > 1 {
        let mut values = Vec::with_capacity(m_ref.values.len() * scale * scale);
        for p in 0..m_ref.frames {
            for y in 0..m_ref.height * scale {
                values.extend((0..m_ref.width * scale).map(|x| m_ref.get(p, y / scale, x / scale)));
            }
        }
        SoftMask3D {
            frames: m_ref.frames,
            height: m_ref.height * scale,
            width: m_ref.width * scale,
            values,
        }
    } else {
        m_ref.clone()
    };
    SoftMask3D {
        values: up.values.iter().map(|v| 1.0 - v).collect(),
        ..up
    }
}
