//! End-to-end embedding, extraction and localization.

use crate::bitcodec::{
    decrypt_template, encrypt_template, expand_payload, majority_extract, RepeatFactors,
    WatermarkKey, WatermarkPayload,
};
use crate::calibration::ThresholdTable;
use crate::channel::RegionMask;
use crate::error::Result;
use crate::noisemap::{invert_bits, sample_noise};
use crate::spatial::{channel_average, finalize_mask, hstr, tamper_scores, HstrConfig, SoftMask3D};
use crate::temporal::{build_cmp, match_frames, score_matrix, CmpMatrix, FrameMatch, ScoreMatrix};
use crate::tensor::{BitGrid4D, LatentTensor, SeededRng, Shape4};

/// Encrypted, replicated template bits for `payload`.
pub fn template_bits(
    payload: &WatermarkPayload,
    shape: Shape4,
    factors: RepeatFactors,
    key: &WatermarkKey,
) -> Result<BitGrid4D> {
    Ok(encrypt_template(
        &expand_payload(payload, shape, factors)?,
        key,
    ))
}

/// Watermarked initial noise for `payload`.
pub fn embed(
    payload: &WatermarkPayload,
    shape: Shape4,
    factors: RepeatFactors,
    key: &WatermarkKey,
    rng: &mut SeededRng,
) -> Result<LatentTensor> {
    Ok(sample_noise(
        &template_bits(payload, shape, factors, key)?,
        rng,
    ))
}

/// Payload recovered from a (possibly distorted) latent.
pub fn extract(
    z: &LatentTensor,
    key: &WatermarkKey,
    factors: RepeatFactors,
) -> Result<WatermarkPayload> {
    majority_extract(&decrypt_template(&invert_bits(z), key), factors)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizeParams {
    pub t_temp: f64,
    pub tau: f64,
    pub hstr: HstrConfig,
    /// Upscale factor from latent to output resolution.
    pub scale: usize,
}

impl LocalizeParams {
    pub fn from_table(table: &ThresholdTable, scale: usize) -> Result<Self> {
        table.validate()?;
        Ok(LocalizeParams {
            t_temp: table.t_temp,
            tau: table.tau,
            hstr: table.hstr_config()?,
            scale,
        })
    }
}

/// Intermediate and final outputs of both localizers.
#[derive(Debug, Clone)]
pub struct Localization {
    pub scores: ScoreMatrix,
    pub frames: FrameMatch,
    pub cmp: CmpMatrix,
    pub m_ini: SoftMask3D,
    pub m_refined: SoftMask3D,
    /// 1 marks a tampered position, at `scale` times the latent resolution.
    pub mask: RegionMask,
}

impl Localization {
    /// `1 - m_refined` at output resolution, for AUC.
    pub fn tamper_scores(&self, scale: usize) -> SoftMask3D {
        tamper_scores(&self.m_refined, scale)
    }
}

/// Temporal matching against the template, then spatial refinement of the
/// agreement map built from the matched frames.
///
/// Frames reported as foreign are marked tampered everywhere.
pub fn localize(z: &LatentTensor, tp: &BitGrid4D, params: &LocalizeParams) -> Result<Localization> {
    let iv = invert_bits(z);
    let scores = score_matrix(&iv, tp)?;
    let frames = match_frames(&scores, params.t_temp);
    let cmp = build_cmp(&iv, tp, &frames.best)?;
    let m_ini = channel_average(&cmp);
    let m_refined = hstr(&m_ini, &params.hstr)?;
    let mut mask = finalize_mask(&m_refined, params.tau, params.scale)?;
    if frames.positions.0.contains(&-1) {
        let plane = mask.height() * mask.width();
        let mut bits = mask.bits().to_vec();
        for (p, &pos) in frames.positions.0.iter().enumerate() {
            if pos < 0 {
                bits[p * plane..(p + 1) * plane].fill(1);
            }
        }
        mask = RegionMask::new(mask.frames(), mask.height(), mask.width(), bits)?;
    }
    Ok(Localization {
        scores,
        frames,
        cmp,
        m_ini,
        m_refined,
        mask,
    })
}
