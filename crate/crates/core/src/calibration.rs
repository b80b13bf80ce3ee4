//! Threshold calibration for partial threshold binarization.
//!
//! Block-average agreement scores are collected per refinement level from
//! synthetic watermarked instances (full chain through a channel) and from
//! original instances (independent random bits against the template). Per
//! level, `t_wm` is the lower `(100-k)%` quantile of the watermarked scores
//! and `t_orig` the upper `k%` quantile of the original scores.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bitcodec::{
    encrypt_template, expand_payload, RepeatFactors, WatermarkKey, WatermarkPayload,
};
use crate::channel::{apply_channel, ChannelSpec};
use crate::error::{Error, Result};
use crate::noisemap::{invert_bits, sample_noise};
use crate::spatial::{channel_average, gather_average, HstrConfig, LevelThresholds, SoftMask3D};
use crate::temporal::{CmpMatrix, DEFAULT_T_TEMP};
use crate::tensor::{BitGrid4D, SeededRng, Shape4};

/// Minimum pooled samples per level before thresholds are derived.
pub const MIN_SAMPLES_PER_LEVEL: usize = 1000;
pub const DEFAULT_K: f64 = 99.0;
pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_LEVELS: usize = 3;
/// Stream id of the generator [`calibrate`] seeds from `CalibrationConfig::seed`.
pub const CALIBRATION_STREAM: u64 = 0xCA11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Watermarked,
    Original,
}

/// Pooled block scores, one list per level (level 1 first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySamples {
    pub provenance: Provenance,
    pub channel: ChannelSpec,
    pub levels: Vec<Vec<f64>>,
}

impl AccuracySamples {
    pub fn level(&self, l: usize) -> &[f64] {
        &self.levels[l - 1]
    }
}

/// Appends every full `mu`-cube average of `m` at each level.
fn collect_blocks(m: &SoftMask3D, levels: usize, out: &mut [Vec<f64>]) -> Result<()> {
    for (l, dst) in out.iter_mut().enumerate().take(levels) {
        let mu = HstrConfig::mu(l + 1);
        let (f, h, w) = (
            m.frames() / mu * mu,
            m.height() / mu * mu,
            m.width() / mu * mu,
        );
        if f == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidShape(format!(
                "level {} cube side {mu} exceeds mask {}x{}x{}",
                l + 1,
                m.frames(),
                m.height(),
                m.width()
            )));
        }
        let cropped = crop(m, f, h, w);
        dst.extend_from_slice(gather_average(&cropped, mu)?.values());
    }
    Ok(())
}

fn crop(m: &SoftMask3D, f: usize, h: usize, w: usize) -> SoftMask3D {
    if (f, h, w) == (m.frames(), m.height(), m.width()) {
        return m.clone();
    }
    let mut values = Vec::with_capacity(f * h * w);
    for p in 0..f {
        for j in 0..h {
            for k in 0..w {
                values.push(m.get(p, j, k));
            }
        }
    }
    SoftMask3D::new(f, h, w, values).expect("cropped mask")
}

fn agreement(a: &BitGrid4D, b: &BitGrid4D) -> CmpMatrix {
    let bits = a
        .bits()
        .iter()
        .zip(b.bits())
        .map(|(x, y)| u8::from(x == y))
        .collect();
    CmpMatrix(BitGrid4D::new(a.shape(), bits).expect("same shape"))
}

/// Generates `n_videos` watermarked and original instances and pools their
/// per-level block scores.
///
/// Per-instance seeds are drawn from `rng` up front, so the result does not
/// depend on scheduling.
pub fn sample_distributions(
    n_videos: usize,
    shape: Shape4,
    factors: RepeatFactors,
    key: &WatermarkKey,
    channel: &ChannelSpec,
    levels: usize,
    rng: &mut SeededRng,
) -> Result<(AccuracySamples, AccuracySamples)> {
    channel.validate()?;
    if levels == 0 {
        return Err(Error::InvalidParameter("levels must be >= 1".into()));
    }
    if n_videos == 0 {
        return Err(Error::InvalidParameter("n_videos must be >= 1".into()));
    }
    let n_bits = factors.n_bits(shape)?;
    let seeds: Vec<u64> = (0..n_videos).map(|_| rng.next_u64()).collect();

    type PerLevel = Vec<Vec<f64>>;
    let per_instance: Vec<Result<(PerLevel, PerLevel)>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut r = SeededRng::new(seed, 0);
            let payload = WatermarkPayload::random(n_bits, &mut r);
            let tp = encrypt_template(&expand_payload(&payload, shape, factors)?, key);
            let z = sample_noise(&tp, &mut SeededRng::new(seed, 1));
            let received = apply_channel(&z, &channel.with_seed(seed ^ channel.seed))?;
            let iv = invert_bits(&received);
            let foreign = BitGrid4D::random(shape, &mut SeededRng::new(seed, 2));

            let mut wm = vec![Vec::new(); levels];
            let mut orig = vec![Vec::new(); levels];
            collect_blocks(&channel_average(&agreement(&iv, &tp)), levels, &mut wm)?;
            collect_blocks(
                &channel_average(&agreement(&foreign, &tp)),
                levels,
                &mut orig,
            )?;
            Ok((wm, orig))
        })
        .collect();

    let mut wm = vec![Vec::new(); levels];
    let mut orig = vec![Vec::new(); levels];
    for item in per_instance {
        let (w, o) = item?;
        for l in 0..levels {
            wm[l].extend(&w[l]);
            orig[l].extend(&o[l]);
        }
    }
    Ok((
        AccuracySamples {
            provenance: Provenance::Watermarked,
            channel: *channel,
            levels: wm,
        },
        AccuracySamples {
            provenance: Provenance::Original,
            channel: *channel,
            levels: orig,
        },
    ))
}

/// Nearest-rank percentile of sorted data: the smallest value with at least
/// `pct`% of the samples at or below it (the minimum for `pct = 0`).
fn nearest_rank(sorted: &[f64], pct: f64) -> f64 {
    let n = sorted.len();
    // Guard against 0.9 * 10 = 9.000000000000002 style rounding.
    let rank = ((pct / 100.0) * n as f64 - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

/// `[Q_(100-k), Q_k]` under nearest rank; `k` is a percentage in (50, 100].
pub fn quantile_interval(samples: &[f64], k: f64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if !(k > 50.0 && k <= 100.0) {
        return Err(Error::InvalidParameter(format!(
            "quantile k = {k} must be in (50, 100]"
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((nearest_rank(&sorted, 100.0 - k), nearest_rank(&sorted, k)))
}

/// True when the intervals for ascending `ks` are nested.
pub fn intervals_nested(samples: &[f64], ks: &[f64]) -> Result<bool> {
    let mut ks = ks.to_vec();
    ks.sort_by(f64::total_cmp);
    let intervals = ks
        .iter()
        .map(|&k| quantile_interval(samples, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(intervals
        .windows(2)
        .all(|w| w[1].0 <= w[0].0 && w[0].1 <= w[1].1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelEntry {
    pub level: usize,
    pub mu: usize,
    pub t_wm: f64,
    pub t_orig: f64,
    /// `[Q_(100-k), Q_k]` of the watermarked scores.
    pub wm_interval: [f64; 2],
    /// `[Q_(100-k), Q_k]` of the original scores.
    pub orig_interval: [f64; 2],
    /// Set when the raw `t_wm` exceeded `t_orig` and both were clamped to
    /// their midpoint.
    pub non_discriminative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMeta {
    pub channel: ChannelSpec,
    pub samples_per_level: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub k: f64,
    pub t_temp: f64,
    pub tau: f64,
    pub levels: Vec<LevelEntry>,
    pub meta: CalibrationMeta,
}

impl ThresholdTable {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 50.0 && self.k <= 100.0) {
            return Err(Error::InvalidParameter(format!(
                "k = {} outside (50, 100]",
                self.k
            )));
        }
        if !(self.t_temp > 0.5 && self.t_temp < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "t_temp = {} outside (0.5, 1)",
                self.t_temp
            )));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "tau = {} outside (0, 1)",
                self.tau
            )));
        }
        for (i, e) in self.levels.iter().enumerate() {
            if e.level != i + 1 || e.mu != HstrConfig::mu(i + 1) {
                return Err(Error::InvalidParameter(format!(
                    "level entry {i} out of order"
                )));
            }
        }
        self.hstr_config().map(|_| ())
    }

    pub fn hstr_config(&self) -> Result<HstrConfig> {
        HstrConfig::new(
            self.levels
                .iter()
                .map(|e| LevelThresholds {
                    t_wm: e.t_wm,
                    t_orig: e.t_orig,
                })
                .collect(),
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("threshold json")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: ThresholdTable = serde_json::from_str(s)?;
        t.validate()?;
        Ok(t)
    }
}

pub fn derive_thresholds(
    wm: &AccuracySamples,
    orig: &AccuracySamples,
    k: f64,
    t_temp: f64,
    tau: f64,
) -> Result<ThresholdTable> {
    if wm.levels.len() != orig.levels.len() || wm.levels.is_empty() {
        return Err(Error::InvalidParameter(
            "watermarked and original level counts differ".into(),
        ));
    }
    let mut levels = Vec::with_capacity(wm.levels.len());
    for (i, (w, o)) in wm.levels.iter().zip(&orig.levels).enumerate() {
        let have = w.len().min(o.len());
        if have < MIN_SAMPLES_PER_LEVEL {
            return Err(Error::InsufficientSamples {
                level: i + 1,
                have,
                need: MIN_SAMPLES_PER_LEVEL,
            });
        }
        let wi = quantile_interval(w, k)?;
        let oi = quantile_interval(o, k)?;
        let (mut t_wm, mut t_orig) = (wi.0, oi.1);
        let non_discriminative = t_wm > t_orig;
        if non_discriminative {
            let mid = 0.5 * (t_wm + t_orig);
            t_wm = mid;
            t_orig = mid;
        }
        levels.push(LevelEntry {
            level: i + 1,
            mu: HstrConfig::mu(i + 1),
            t_wm,
            t_orig,
            wm_interval: [wi.0, wi.1],
            orig_interval: [oi.0, oi.1],
            non_discriminative,
        });
    }
    let table = ThresholdTable {
        k,
        t_temp,
        tau,
        levels,
        meta: CalibrationMeta {
            channel: wm.channel,
            samples_per_level: wm.levels.iter().map(Vec::len).collect(),
        },
    };
    table.validate()?;
    Ok(table)
}

/// Options for [`calibrate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub n_videos: usize,
    pub shape: Shape4,
    pub factors: RepeatFactors,
    pub channel: ChannelSpec,
    pub levels: usize,
    pub k: f64,
    pub t_temp: f64,
    pub tau: f64,
    pub seed: u64,
}

impl CalibrationConfig {
    /// 16x4x32x32 latents, factors (8,1,4,4), k = 99, three levels.
    pub fn ms_defaults(channel: ChannelSpec, seed: u64) -> Self {
        CalibrationConfig {
            n_videos: 100,
            shape: Shape4 {
                f: 16,
                c: 4,
                h: 32,
                w: 32,
            },
            factors: RepeatFactors {
                k_f: 8,
                k_c: 1,
                k_h: 4,
                k_w: 4,
            },
            channel,
            levels: DEFAULT_LEVELS,
            k: DEFAULT_K,
            t_temp: DEFAULT_T_TEMP,
            tau: DEFAULT_TAU,
            seed,
        }
    }
}

/// Sampling plus threshold derivation in one call.
pub fn calibrate(cfg: &CalibrationConfig, key: &WatermarkKey) -> Result<ThresholdTable> {
    calibrate_with_samples(cfg, key).map(|(t, _, _)| t)
}

/// Like [`calibrate`], also returning the pooled samples.
pub fn calibrate_with_samples(
    cfg: &CalibrationConfig,
    key: &WatermarkKey,
) -> Result<(ThresholdTable, AccuracySamples, AccuracySamples)> {
    let mut rng = SeededRng::new(cfg.seed, CALIBRATION_STREAM);
    let (wm, orig) = sample_distributions(
        cfg.n_videos,
        cfg.shape,
        cfg.factors,
        key,
        &cfg.channel,
        cfg.levels,
        &mut rng,
    )?;
    let table = derive_thresholds(&wm, &orig, cfg.k, cfg.t_temp, cfg.tau)?;
    Ok((table, wm, orig))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelKind;

    fn key() -> WatermarkKey {
        WatermarkKey::generate(&mut SeededRng::new(1234, 0))
    }

    fn ms_shape() -> (Shape4, RepeatFactors) {
        (
            Shape4::new(16, 4, 32, 32).unwrap(),
            RepeatFactors::new(8, 1, 4, 4).unwrap(),
        )
    }

    #[test]
    fn nearest_rank_examples() {
        let s: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        assert_eq!(quantile_interval(&s, 90.0).unwrap(), (0.1, 0.9));
        assert_eq!(quantile_interval(&s, 100.0).unwrap(), (0.1, 1.0));
        let shuffled = vec![0.3, 0.9, 0.1, 0.5];
        assert_eq!(quantile_interval(&shuffled, 100.0).unwrap(), (0.1, 0.9));
        assert!(matches!(
            quantile_interval(&s, 50.0),
            Err(Error::InvalidParameter(_))
        ));
        assert!(quantile_interval(&s, 100.5).is_err());
        assert!(matches!(
            quantile_interval(&[], 90.0),
            Err(Error::EmptySamples)
        ));
    }

    #[test]
    fn identity_channel_watermarked_samples_are_one() {
        let (s, f) = ms_shape();
        let (wm, orig) = sample_distributions(
            2,
            s,
            f,
            &key(),
            &ChannelSpec::identity(),
            3,
            &mut SeededRng::new(1, 0),
        )
        .unwrap();
        for l in 1..=3 {
            assert!(wm.level(l).iter().all(|&v| v == 1.0));
            assert!(orig.level(l).iter().all(|v| (0.0..=1.0).contains(v)));
        }
        // 16x32x32 cells at level 1, 8x16x16 at level 2, 4x8x8 at level 3, per video
        assert_eq!(wm.level(1).len(), 2 * 16384);
        assert_eq!(wm.level(2).len(), 2 * 2048);
        assert_eq!(wm.level(3).len(), 2 * 256);
    }

    #[test]
    fn identity_calibration_clamps_upper_levels() {
        let (s, f) = ms_shape();
        let (wm, orig) = sample_distributions(
            8,
            s,
            f,
            &key(),
            &ChannelSpec::identity(),
            3,
            &mut SeededRng::new(2, 0),
        )
        .unwrap();
        let t = derive_thresholds(&wm, &orig, 99.0, 0.55, 0.5).unwrap();
        // Level 1: 4-bit averages hit 1.0 with probability 1/16 > 1%, so the
        // original upper quantile is 1.0 and meets t_wm = 1.0 without clamping.
        assert_eq!((t.levels[0].t_wm, t.levels[0].t_orig), (1.0, 1.0));
        assert!(!t.levels[0].non_discriminative);
        for e in &t.levels[1..] {
            assert!(e.non_discriminative);
            assert_eq!(e.t_wm, e.t_orig);
            assert_eq!(e.wm_interval, [1.0, 1.0]);
            assert!(e.t_wm > 0.5 && e.t_wm < 1.0);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let (s, f) = ms_shape();
        let ch = ChannelSpec::new(ChannelKind::Bitflip { rate: 0.2 }, 3).unwrap();
        let cfg = CalibrationConfig {
            n_videos: 4,
            ..CalibrationConfig::ms_defaults(ch, 77)
        };
        let a = calibrate(&cfg, &key()).unwrap();
        let b = calibrate(&cfg, &key()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(ThresholdTable::from_json(&a.to_json()).unwrap(), a);
        let _ = (s, f);
    }

    #[test]
    fn bitflip_block_means() {
        let (s, f) = ms_shape();
        let ch = ChannelSpec::new(ChannelKind::Bitflip { rate: 0.2 }, 5).unwrap();
        let (wm, _) =
            sample_distributions(10, s, f, &key(), &ch, 3, &mut SeededRng::new(3, 0)).unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let width = |v: &[f64]| {
            let (lo, hi) = quantile_interval(v, 99.0).unwrap();
            hi - lo
        };
        for l in 1..=3 {
            assert!((mean(wm.level(l)) - 0.8).abs() < 0.01);
        }
        assert!(width(wm.level(2)) > width(wm.level(3)));
        assert!(width(wm.level(1)) >= width(wm.level(2)));
    }

    #[test]
    fn k_monotone() {
        let (s, f) = ms_shape();
        let ch = ChannelSpec::new(ChannelKind::Bitflip { rate: 0.25 }, 5).unwrap();
        let (wm, orig) =
            sample_distributions(6, s, f, &key(), &ch, 3, &mut SeededRng::new(4, 0)).unwrap();
        for l in 1..=3 {
            assert!(intervals_nested(wm.level(l), &[97.0, 98.0, 99.0, 100.0]).unwrap());
            assert!(intervals_nested(orig.level(l), &[97.0, 98.0, 99.0, 100.0]).unwrap());
        }
        let t99 = derive_thresholds(&wm, &orig, 99.0, 0.55, 0.5).unwrap();
        let t100 = derive_thresholds(&wm, &orig, 100.0, 0.55, 0.5).unwrap();
        for (a, b) in t99.levels.iter().zip(&t100.levels) {
            assert!(b.wm_interval[0] <= a.wm_interval[0] && a.wm_interval[1] <= b.wm_interval[1]);
            assert!(
                b.orig_interval[0] <= a.orig_interval[0]
                    && a.orig_interval[1] <= b.orig_interval[1]
            );
        }
    }

    #[test]
    fn insufficient_samples_rejected() {
        let wm = AccuracySamples {
            provenance: Provenance::Watermarked,
            channel: ChannelSpec::identity(),
            levels: vec![vec![1.0; 999]],
        };
        let orig = AccuracySamples {
            provenance: Provenance::Original,
            ..wm.clone()
        };
        assert!(matches!(
            derive_thresholds(&wm, &orig, 99.0, 0.55, 0.5),
            Err(Error::InsufficientSamples {
                level: 1,
                have: 999,
                need: 1000
            })
        ));
    }

    #[test]
    fn table_validation() {
        let (s, f) = ms_shape();
        let (wm, orig) = sample_distributions(
            1,
            s,
            f,
            &key(),
            &ChannelSpec::identity(),
            2,
            &mut SeededRng::new(5, 0),
        )
        .unwrap();
        let t = derive_thresholds(&wm, &orig, 99.0, 0.55, 0.5).unwrap();
        let mut bad = t.clone();
        bad.t_temp = 0.4;
        assert!(bad.validate().is_err());
        let mut bad = t.clone();
        bad.levels[0].t_wm = 0.9;
        bad.levels[0].t_orig = 0.1;
        assert!(ThresholdTable::from_json(&bad.to_json()).is_err());
        let mut bad = t;
        bad.levels.swap(0, 1);
        assert!(bad.validate().is_err());
    }
}
