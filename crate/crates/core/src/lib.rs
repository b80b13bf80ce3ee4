//! Tamper-proof watermarking of diffusion initial noise: payload embedding,
//! extraction, and temporal and spatial tamper localization on latents.

pub mod bitcodec;
pub mod calibration;
pub mod channel;
pub mod error;
pub mod format;
pub mod gaussian;
pub mod metrics;
pub mod noisemap;
pub mod pipeline;
pub mod spatial;
pub mod temporal;
pub mod tensor;

pub use bitcodec::{RepeatFactors, WatermarkKey, WatermarkPayload};
pub use calibration::{AccuracySamples, CalibrationConfig, ThresholdTable};
pub use channel::{ChannelKind, ChannelSpec, InsertSource, RegionMask, TemporalEdit};
pub use error::{Error, Result};
pub use metrics::MaskMetrics;
pub use pipeline::{embed, extract, localize, template_bits, Localization, LocalizeParams};
pub use spatial::{HstrConfig, LevelThresholds, SoftMask3D};
pub use temporal::{CmpMatrix, PositionMap, ScoreMatrix};
pub use tensor::{BitGrid4D, LatentTensor, SeededRng, Shape4};
