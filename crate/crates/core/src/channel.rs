//! Latent-space stand-ins for "generate, tamper or distort, invert".
//!
//! A [`ChannelSpec`] models the net corruption of imperfect inversion; the
//! tamper functions model frame edits and region replacement directly on the
//! latent so the localizers can be exercised without a diffusion model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noisemap::sample_half;
use crate::tensor::{BitGrid4D, LatentTensor, SeededRng, Shape4};

/// Stream id used by [`apply_channel`] for its own draws.
pub const CHANNEL_STREAM: u64 = 0xC4A7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ChannelKind {
    Identity,
    Bitflip { rate: f64 },
    Gaussian { sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    #[serde(flatten)]
    pub kind: ChannelKind,
    #[serde(default)]
    pub seed: u64,
}

impl ChannelSpec {
    pub fn new(kind: ChannelKind, seed: u64) -> Result<Self> {
        let spec = ChannelSpec { kind, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn identity() -> Self {
        ChannelSpec {
            kind: ChannelKind::Identity,
            seed: 0,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        ChannelSpec { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ChannelKind::Identity => Ok(()),
            ChannelKind::Bitflip { rate } if (0.0..=0.5).contains(&rate) => Ok(()),
            ChannelKind::Bitflip { rate } => Err(Error::InvalidParameter(format!(
                "bitflip rate {rate} outside [0, 0.5]"
            ))),
            ChannelKind::Gaussian { sigma } if sigma >= 0.0 && sigma.is_finite() => Ok(()),
            ChannelKind::Gaussian { sigma } => Err(Error::InvalidParameter(format!(
                "gaussian sigma {sigma} must be >= 0"
            ))),
        }
    }

    /// Probability that a single element's sign changes.
    ///
    /// For additive noise `σ·N(0,1)` on `β ~ N(0,1)` the sign flips with
    /// probability `arctan(σ) / π`.
    pub fn flip_probability(&self) -> f64 {
        match self.kind {
            ChannelKind::Identity => 0.0,
            ChannelKind::Bitflip { rate } => rate,
            ChannelKind::Gaussian { sigma } => sigma.atan() / std::f64::consts::PI,
        }
    }
}

impl std::str::FromStr for ChannelKind {
    type Err = Error;

    /// Parses `identity`, `bitflip:<rate>` or `gaussian:<sigma>`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let value = || -> Result<f64> {
            arg.ok_or_else(|| Error::InvalidParameter(format!("{name} needs a value")))?
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad channel value in {s:?}")))
        };
        let kind = match name {
            "identity" if arg.is_none() => ChannelKind::Identity,
            "bitflip" => ChannelKind::Bitflip { rate: value()? },
            "gaussian" => ChannelKind::Gaussian { sigma: value()? },
            _ => return Err(Error::InvalidParameter(format!("unknown channel {s:?}"))),
        };
        ChannelSpec::new(kind, 0)?;
        Ok(kind)
    }
}

/// Passes a latent through the channel.
///
/// `bitflip` flips each element's sign with probability `rate`, redrawing its
/// magnitude from the opposite half-normal so the marginal stays N(0, 1).
/// `gaussian` adds `σ·N(0, 1)` elementwise.
pub fn apply_channel(z: &LatentTensor, spec: &ChannelSpec) -> Result<LatentTensor> {
    spec.validate()?;
    let mut rng = SeededRng::new(spec.seed, CHANNEL_STREAM);
    let data: Vec<f64> = match spec.kind {
        ChannelKind::Identity => return Ok(z.clone()),
        ChannelKind::Bitflip { rate } => z
            .data()
            .iter()
            .map(|&v| {
                if rng.uniform_open() < rate {
                    sample_half(u8::from(v <= 0.0), &mut rng)
                } else {
                    v
                }
            })
            .collect(),
        ChannelKind::Gaussian { sigma } => z
            .data()
            .iter()
            .map(|&v| v + sigma * rng.standard_normal())
            .collect(),
    };
    LatentTensor::new(z.shape(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InsertSource {
    /// Copy of the frame currently at the insertion index (the last frame when appending).
    Adjacent,
    /// Fresh N(0, 1) latent.
    Gaussian,
}

/// One frame-level edit. Indices refer to the frame sequence as it stands
/// when the edit is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum TemporalEdit {
    Drop {
        p: usize,
    },
    Insert {
        p: usize,
        source: InsertSource,
    },
    /// Exchanges frames `p` and `p + 1`.
    Swap {
        p: usize,
    },
}

/// Applies frame edits in order, returning the edited latent and the original
/// index of every output frame (`-1` for inserted frames).
pub fn tamper_temporal(
    z: &LatentTensor,
    edits: &[TemporalEdit],
    rng: &mut SeededRng,
) -> Result<(LatentTensor, Vec<i64>)> {
    let shape = z.shape();
    let mut frames: Vec<Vec<f64>> = (0..shape.f).map(|q| z.frame(q).to_vec()).collect();
    let mut origin: Vec<i64> = (0..shape.f as i64).collect();
    for (n, edit) in edits.iter().enumerate() {
        let len = frames.len();
        match *edit {
            TemporalEdit::Drop { p } => {
                if p >= len || len == 1 {
                    return Err(Error::InvalidEdit(format!(
                        "edit {n}: drop({p}) on {len} frames"
                    )));
                }
                frames.remove(p);
                origin.remove(p);
            }
            TemporalEdit::Insert { p, source } => {
                if p > len {
                    return Err(Error::InvalidEdit(format!(
                        "edit {n}: insert({p}) on {len} frames"
                    )));
                }
                let frame = match source {
                    InsertSource::Adjacent => frames[p.min(len - 1)].clone(),
                    InsertSource::Gaussian => (0..shape.frame_len())
                        .map(|_| rng.standard_normal())
                        .collect(),
                };
                frames.insert(p, frame);
                origin.insert(p, -1);
            }
            TemporalEdit::Swap { p } => {
                if p + 1 >= len {
                    return Err(Error::InvalidEdit(format!(
                        "edit {n}: swap({p}, {}) on {len} frames",
                        p + 1
                    )));
                }
                frames.swap(p, p + 1);
                origin.swap(p, p + 1);
            }
        }
    }
    Ok((LatentTensor::from_frames(shape, frames)?, origin))
}

/// Per-frame binary mask over the latent plane; 1 marks a tampered position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    frames: usize,
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl RegionMask {
    pub fn new(frames: usize, height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        let grid = BitGrid4D::new(Shape4::new(frames, 1, height, width)?, bits)?;
        Ok(RegionMask {
            frames,
            height,
            width,
            bits: grid.into_bits(),
        })
    }

    pub fn empty(frames: usize, height: usize, width: usize) -> Self {
        RegionMask {
            frames,
            height,
            width,
            bits: vec![0; frames * height * width],
        }
    }

    pub fn full(frames: usize, height: usize, width: usize) -> Self {
        RegionMask {
            frames,
            height,
            width,
            bits: vec![1; frames * height * width],
        }
    }

    /// Marks the box `frames x rows x cols` (half-open ranges).
    pub fn with_box(
        mut self,
        frames: std::ops::Range<usize>,
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
    ) -> Result<Self> {
        if frames.end > self.frames || rows.end > self.height || cols.end > self.width {
            return Err(Error::ShapeMismatch("box exceeds mask extent".into()));
        }
        for q in frames {
            for j in rows.clone() {
                for k in cols.clone() {
                    self.bits[(q * self.height + j) * self.width + k] = 1;
                }
            }
        }
        Ok(self)
    }

    /// A random box whose every edge lies on a multiple of `align`.
    pub fn random_aligned_box(
        frames: usize,
        height: usize,
        width: usize,
        align: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if align == 0
            || !frames.is_multiple_of(align)
            || !height.is_multiple_of(align)
            || !width.is_multiple_of(align)
        {
            return Err(Error::InvalidParameter(format!(
                "alignment {align} does not divide {frames}x{height}x{width}"
            )));
        }
        let mut span = |n: usize| {
            let cells = n / align;
            let a = rng.below(cells);
            let b = a + 1 + rng.below(cells - a);
            a * align..b * align
        };
        let (fr, rr, cr) = (span(frames), span(height), span(width));
        RegionMask::empty(frames, height, width).with_box(fr, rr, cr)
    }

    /// Crop-and-drop style region: a random rectangle covering about
    /// `ratio` of each frame, identical across all frames.
    pub fn crop_drop(
        frames: usize,
        height: usize,
        width: usize,
        ratio: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::InvalidParameter(format!(
                "crop ratio {ratio} outside [0, 1]"
            )));
        }
        let side = ratio.sqrt();
        let rh = ((height as f64 * side).round() as usize).min(height);
        let rw = ((width as f64 * side).round() as usize).min(width);
        let y = rng.below(height - rh + 1);
        let x = rng.below(width - rw + 1);
        RegionMask::empty(frames, height, width).with_box(0..frames, y..y + rh, x..x + rw)
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

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn to_grid(&self) -> BitGrid4D {
        let shape =
            Shape4::new(self.frames, 1, self.height, self.width).expect("valid mask extent");
        BitGrid4D::new(shape, self.bits.clone()).expect("binary mask")
    }

    /// Reads a `f x 1 x h x w` grid.
    pub fn from_grid(grid: &BitGrid4D) -> Result<Self> {
        let s = grid.shape();
        if s.c != 1 {
            return Err(Error::ShapeMismatch(format!(
                "region mask needs one channel, got {s}"
            )));
        }
        RegionMask::new(s.f, s.h, s.w, grid.bits().to_vec())
    }

    /// Nearest-neighbour upscale of each frame by `scale`.
    pub fn upscale(&self, scale: usize) -> Result<Self> {
        if scale == 0 {
            return Err(Error::InvalidParameter("scale must be >= 1".into()));
        }
        let (h, w) = (self.height * scale, self.width * scale);
        let mut bits = Vec::with_capacity(self.frames * h * w);
        for p in 0..self.frames {
            let plane =
                &self.bits[p * self.height * self.width..(p + 1) * self.height * self.width];
            for y in 0..h {
                bits.extend((0..w).map(|x| plane[(y / scale) * self.width + x / scale]));
            }
        }
        RegionMask::new(self.frames, h, w, bits)
    }

    /// Ground truth after frame edits: output frame `p` takes the mask of
    /// original frame `origin[p]`, and inserted frames are wholly tampered.
    pub fn follow_origins(&self, origin: &[i64]) -> Result<Self> {
        let plane = self.height * self.width;
        let mut bits = Vec::with_capacity(origin.len() * plane);
        for &o in origin {
            if o < 0 {
                bits.extend(std::iter::repeat_n(1, plane));
            } else if (o as usize) < self.frames {
                let q = o as usize;
                bits.extend_from_slice(&self.bits[q * plane..(q + 1) * plane]);
            } else {
                return Err(Error::InvalidEdit(format!(
                    "origin {o} beyond {} frames",
                    self.frames
                )));
            }
        }
        RegionMask::new(origin.len(), self.height, self.width, bits)
    }
}

/// Replaces every element under the mask, across all channels, with a fresh
/// N(0, 1) draw.
pub fn tamper_spatial(
    z: &LatentTensor,
    mask: &RegionMask,
    rng: &mut SeededRng,
) -> Result<LatentTensor> {
    let s = z.shape();
    if mask.frames != s.f || mask.height != s.h || mask.width != s.w {
        return Err(Error::ShapeMismatch(format!(
            "mask {}x{}x{} vs latent {s}",
            mask.frames, mask.height, mask.width
        )));
    }
    let mut data = z.data().to_vec();
    for q in 0..s.f {
        for i in 0..s.c {
            for j in 0..s.h {
                for k in 0..s.w {
                    if mask.bits[(q * s.h + j) * s.w + k] == 1 {
                        data[s.index(q, i, j, k)] = rng.standard_normal();
                    }
                }
            }
        }
    }
    LatentTensor::new(s, data)
}
