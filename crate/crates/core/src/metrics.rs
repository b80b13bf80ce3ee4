//! Localization metrics over binary and soft masks.

use serde::{Deserialize, Serialize};

use crate::channel::RegionMask;
use crate::error::{Error, Result};
use crate::spatial::SoftMask3D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskMetrics {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub iou: f64,
    /// `None` when the ground truth has only one class.
    pub auc: Option<f64>,
    /// Mean of the defined metrics among the five above.
    pub average: f64,
}

impl MaskMetrics {
    pub fn new(f1: f64, precision: f64, recall: f64, iou: f64, auc: Option<f64>) -> Self {
        let mut sum = f1 + precision + recall + iou;
        let mut n = 4.0;
        if let Some(a) = auc {
            sum += a;
            n += 1.0;
        }
        MaskMetrics {
            f1,
            precision,
            recall,
            iou,
            auc,
            average: sum / n,
        }
    }

    /// Element-wise mean; `auc` averages over the records that define it.
    pub fn mean(items: &[MaskMetrics]) -> Option<MaskMetrics> {
        if items.is_empty() {
            return None;
        }
        let n = items.len() as f64;
        let avg = |g: fn(&MaskMetrics) -> f64| items.iter().map(g).sum::<f64>() / n;
        let aucs: Vec<f64> = items.iter().filter_map(|m| m.auc).collect();
        Some(MaskMetrics::new(
            avg(|m| m.f1),
            avg(|m| m.precision),
            avg(|m| m.recall),
            avg(|m| m.iou),
            (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
        ))
    }
}

fn same_dims(pred: &RegionMask, gt: &RegionMask) -> Result<()> {
    let a = (pred.frames(), pred.height(), pred.width());
    let b = (gt.frames(), gt.height(), gt.width());
    if a != b {
        return Err(Error::ShapeMismatch(format!(
            "prediction {a:?} vs ground truth {b:?}"
        )));
    }
    Ok(())
}

/// F1, precision, recall and IoU of the tampered class.
///
/// A ratio with an empty denominator is 0, except that two empty masks agree
/// perfectly and score 1 on every metric.
pub fn binary_mask_metrics(pred: &RegionMask, gt: &RegionMask) -> Result<(f64, f64, f64, f64)> {
    same_dims(pred, gt)?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
        match (p, g) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => {}
        }
    }
    if tp + fp + fn_ == 0 {
        return Ok((1.0, 1.0, 1.0, 1.0));
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
    let iou = ratio(tp, tp + fp + fn_);
    Ok((f1, precision, recall, iou))
}

/// ROC AUC of `scores` (higher = more likely tampered) against `gt`, via the
/// Mann-Whitney statistic with ties counted as one half.
pub fn auc(scores: &SoftMask3D, gt: &RegionMask) -> Result<f64> {
    let a = (scores.frames(), scores.height(), scores.width());
    let b = (gt.frames(), gt.height(), gt.width());
    if a != b {
        return Err(Error::ShapeMismatch(format!(
            "scores {a:?} vs ground truth {b:?}"
        )));
    }
    let mut pairs: Vec<(f64, u8)> = scores
        .values()
        .iter()
        .copied()
        .zip(gt.bits().iter().copied())
        .collect();
    let n_pos = pairs.iter().filter(|p| p.1 == 1).count();
    let n_neg = pairs.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    // Sum of midranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            j += 1;
        }
        let mid = (i + 1 + j) as f64 / 2.0;
        let pos = pairs[i..j].iter().filter(|p| p.1 == 1).count();
        rank_sum += mid * pos as f64;
        i = j;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// All metrics for one prediction. `scores` feeds the AUC.
pub fn evaluate_mask(
    pred: &RegionMask,
    scores: &SoftMask3D,
    gt: &RegionMask,
) -> Result<MaskMetrics> {
    let (f1, precision, recall, iou) = binary_mask_metrics(pred, gt)?;
    let auc = match auc(scores, gt) {
        Ok(v) => Some(v),
        Err(Error::UndefinedAuc) => None,
        Err(e) => return Err(e),
    };
    Ok(MaskMetrics::new(f1, precision, recall, iou, auc))
}
