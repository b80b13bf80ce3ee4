//! Frame matching between inverted bits and template bits.
//!
//! Every tampered frame `p` is scored against every template frame `q` by the
//! fraction of agreeing bits. The best-scoring `q` is the frame's original
//! position when its score clears `t_temp`; otherwise the frame is reported
//! as foreign (`-1`). Scores are computed from packed frames with popcounts,
//! so the `f' x f x c x h x w` comparison tensor is never built.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{pack_bits_msb, BitGrid4D};

/// Default matching threshold.
pub const DEFAULT_T_TEMP: f64 = 0.55;

/// `s[p][q]`: agreement between tampered frame `p` and template frame `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: rows * cols,
            });
        }
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter(format!(
                "score {} outside [0, 1]",
                values[i]
            )));
        }
        Ok(ScoreMatrix { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.values[p * self.cols + q]
    }

    pub fn row(&self, p: usize) -> &[f64] {
        &self.values[p * self.cols..(p + 1) * self.cols]
    }

    /// Best template frame per row; exact ties go to the smaller index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|p| {
                let row = self.row(p);
                let mut best = 0;
                for (q, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = q;
                    }
                }
                best
            })
            .collect()
    }
}

/// Recovered original index per tampered frame, `-1` for unmatched frames.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PositionMap(pub Vec<i64>);

impl PositionMap {
    pub fn as_slice(&self) -> &[i64] {
        &self.0
    }
}

/// Output of [`match_frames`]: thresholded positions plus the raw argmax,
/// which [`build_cmp`] needs even for unmatched frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatch {
    pub positions: PositionMap,
    pub best: Vec<usize>,
}

/// Agreement bits between each tampered frame and its best template frame,
/// over `(f', c, h, w)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CmpMatrix(pub BitGrid4D);

impl CmpMatrix {
    pub fn grid(&self) -> &BitGrid4D {
        &self.0
    }
}

fn check_frame_dims(iv: &BitGrid4D, tp: &BitGrid4D) -> Result<()> {
    let (a, b) = (iv.shape(), tp.shape());
    if (a.c, a.h, a.w) != (b.c, b.h, b.w) {
        return Err(Error::ShapeMismatch(format!(
            "inverted bits {a} vs template {b}"
        )));
    }
    Ok(())
}

fn packed_frames(g: &BitGrid4D) -> Vec<Vec<u64>> {
    (0..g.shape().f)
        .map(|q| {
            let bytes = pack_bits_msb(g.frame(q));
            bytes
                .chunks(8)
                .map(|c| {
                    let mut word = [0u8; 8];
                    word[..c.len()].copy_from_slice(c);
                    u64::from_be_bytes(word)
                })
                .collect()
        })
        .collect()
}

pub fn score_matrix(iv: &BitGrid4D, tp: &BitGrid4D) -> Result<ScoreMatrix> {
    check_frame_dims(iv, tp)?;
    let bits = iv.shape().frame_len();
    let a = packed_frames(iv);
    let b = packed_frames(tp);
    // Padding bits are zero in both packings, so they never count as
    // disagreements; the agreement count is `bits - differing`.
    let mut values = Vec::with_capacity(a.len() * b.len());
    for fa in &a {
        for fb in &b {
            let differ: u32 = fa.iter().zip(fb).map(|(x, y)| (x ^ y).count_ones()).sum();
            values.push((bits - differ as usize) as f64 / bits as f64);
        }
    }
    ScoreMatrix::new(a.len(), b.len(), values)
}

pub fn match_frames(s: &ScoreMatrix, t_temp: f64) -> FrameMatch {
    let best = s.argmax_rows();
    let positions = best
        .iter()
        .enumerate()
        .map(|(p, &q)| if s.get(p, q) > t_temp { q as i64 } else { -1 })
        .collect();
    FrameMatch {
        positions: PositionMap(positions),
        best,
    }
}

/// `CMP[p,i,j,k] = 1` iff `IV[p,i,j,k] == TP[best[p],i,j,k]`.
pub fn build_cmp(iv: &BitGrid4D, tp: &BitGrid4D, best: &[usize]) -> Result<CmpMatrix> {
    check_frame_dims(iv, tp)?;
    let f_out = iv.shape().f;
    if best.len() != f_out {
        return Err(Error::LengthMismatch {
            left: best.len(),
            right: f_out,
        });
    }
    let mut bits = Vec::with_capacity(iv.bits().len());
    for (p, &q) in best.iter().enumerate() {
        if q >= tp.shape().f {
            return Err(Error::InvalidParameter(format!(
                "best index {q} out of range"
            )));
        }
        bits.extend(
            iv.frame(p)
                .iter()
                .zip(tp.frame(q))
                .map(|(a, b)| u8::from(a == b)),
        );
    }
    Ok(CmpMatrix(BitGrid4D::new(iv.shape(), bits)?))
}

/// Fraction of frames whose predicted position equals the ground truth.
pub fn temporal_accuracy(pred: &PositionMap, truth: &[i64]) -> Result<f64> {
    if pred.0.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.0.len(),
            right: truth.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::InvalidParameter("no frames".into()));
    }
    let hits = pred.0.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}
