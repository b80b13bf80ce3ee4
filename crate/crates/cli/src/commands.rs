use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use log::info;
use noiseshield_core::bitcodec::bit_accuracy;
use noiseshield_core::calibration::{calibrate_with_samples, intervals_nested};
use noiseshield_core::channel::{apply_channel, tamper_spatial, tamper_temporal};
use noiseshield_core::format::{
    read_bits_file, read_latent_file, write_bits_file, write_latent_file,
};
use noiseshield_core::metrics::evaluate_mask;
use noiseshield_core::temporal::temporal_accuracy;
use noiseshield_core::{
    embed as embed_payload, extract as extract_payload, localize as run_localize, template_bits,
    CalibrationConfig, ChannelKind, ChannelSpec, LatentTensor, LocalizeParams, MaskMetrics,
    RegionMask, RepeatFactors, SeededRng, Shape4, TemporalEdit, ThresholdTable, WatermarkKey,
    WatermarkPayload,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::io::{
    build_region, ensure_dir, match_resolution, parse_edits, read_key, read_positions,
    read_thresholds, write_json, write_pgm_frames,
};
use crate::{
    CalibrateArgs, EmbedArgs, EvalArgs, ExtractArgs, LocalizeArgs, ReportFormat, SimulateArgs,
};

const EVAL_STREAM: u64 = 0xE7A1;

fn print(value: serde_json::Value) {
    println!("{value}");
}

pub fn keygen(out: Option<&Path>) -> Result<()> {
    let key = WatermarkKey::generate(&mut rand::rngs::OsRng);
    match out {
        Some(path) => {
            std::fs::write(path, key.to_json() + "\n")
                .with_context(|| format!("writing {}", path.display()))?;
            info!("key written to {}", path.display());
        }
        None => println!("{}", key.to_json()),
    }
    Ok(())
}

pub fn embed(a: &EmbedArgs) -> Result<()> {
    let (shape, factors) = (a.geometry.shape, a.geometry.factors);
    let reduced = factors.reduced(shape)?;
    let key = read_key(&a.key)?;
    let payload = match &a.payload {
        Some(path) => {
            let grid = read_bits_file(path)
                .with_context(|| format!("reading payload {}", path.display()))?;
            ensure!(
                grid.shape() == reduced,
                "payload shape {} does not match reduced shape {reduced}",
                grid.shape()
            );
            WatermarkPayload::from_grid(&grid)
        }
        None => WatermarkPayload::random(reduced.len(), &mut SeededRng::new(a.seed, 0)),
    };
    let z = embed_payload(
        &payload,
        shape,
        factors,
        &key,
        &mut SeededRng::new(a.seed, 1),
    )?;
    ensure_dir(&a.out)?;
    write_latent_file(&z, a.out.join("noise.vslt"))?;
    write_bits_file(&payload.to_grid(reduced)?, a.out.join("payload.vsbt"))?;
    info!("embedded {} bits into {shape}", payload.len());
    print(json!({
        "shape": shape.to_string(),
        "n_bits": payload.len(),
        "k_all": factors.k_all(),
        "noise": a.out.join("noise.vslt"),
        "payload": a.out.join("payload.vsbt"),
    }));
    Ok(())
}

pub fn extract(a: &ExtractArgs) -> Result<()> {
    let z = read_latent_file(&a.latent)
        .with_context(|| format!("reading latent {}", a.latent.display()))?;
    let key = read_key(&a.key)?;
    let reduced = a.factors.reduced(z.shape())?;
    let payload = extract_payload(&z, &key, a.factors)?;
    let accuracy = match &a.reference {
        Some(path) => {
            let grid = read_bits_file(path)
                .with_context(|| format!("reading reference {}", path.display()))?;
            Some(bit_accuracy(&payload, &WatermarkPayload::from_grid(&grid))?)
        }
        None => None,
    };
    let grid = payload.to_grid(reduced)?;
    if let Some(dir) = &a.out {
        ensure_dir(dir)?;
        write_bits_file(&grid, dir.join("extracted.vsbt"))?;
    }
    print(json!({
        "n_bits": payload.len(),
        "payload_hex": hex::encode(grid.pack_msb()),
        "bit_accuracy": accuracy,
    }));
    Ok(())
}

/// Spatial tamper on the original frames, then frame edits, then the channel.
fn tamper(
    z: &LatentTensor,
    region: &RegionMask,
    edits: &[TemporalEdit],
    channel: ChannelSpec,
    seed: u64,
) -> Result<(LatentTensor, Vec<i64>, RegionMask)> {
    let z = if region.count() > 0 {
        tamper_spatial(z, region, &mut SeededRng::new(seed, 3))?
    } else {
        z.clone()
    };
    let (z, origin) = tamper_temporal(&z, edits, &mut SeededRng::new(seed, 4))?;
    let z = apply_channel(&z, &channel)?;
    let gt = region.follow_origins(&origin)?;
    Ok((z, origin, gt))
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let z = read_latent_file(&a.latent)
        .with_context(|| format!("reading latent {}", a.latent.display()))?;
    let s = z.shape();
    let edits = parse_edits(a.edits.as_deref())?;
    let region = build_region(
        a.region.mask.as_deref(),
        a.region.crop_ratio,
        a.region.aligned_box,
        (s.f, s.h, s.w),
        &mut SeededRng::new(a.seed, 2),
    )?;
    let channel = ChannelSpec::new(a.channel, a.seed)?;
    let (zt, origin, gt) = tamper(&z, &region, &edits, channel, a.seed)?;
    ensure_dir(&a.out)?;
    write_latent_file(&zt, a.out.join("tampered.vslt"))?;
    write_json(&a.out.join("positions.json"), &origin)?;
    write_bits_file(&gt.to_grid(), a.out.join("gt_mask.vsbt"))?;
    print(json!({
        "frames": origin.len(),
        "inserted": origin.iter().filter(|&&o| o < 0).count(),
        "tampered_positions": gt.count(),
        "shape": zt.shape().to_string(),
    }));
    Ok(())
}

fn template_for(
    payload_path: &Path,
    factors: RepeatFactors,
    key: &WatermarkKey,
) -> Result<noiseshield_core::BitGrid4D> {
    let grid = read_bits_file(payload_path)
        .with_context(|| format!("reading payload {}", payload_path.display()))?;
    let r = grid.shape();
    let shape = Shape4::new(
        r.f * factors.k_f,
        r.c * factors.k_c,
        r.h * factors.k_h,
        r.w * factors.k_w,
    )?;
    Ok(template_bits(
        &WatermarkPayload::from_grid(&grid),
        shape,
        factors,
        key,
    )?)
}

#[derive(Serialize)]
struct LocalizeMetrics {
    temporal_accuracy: Option<f64>,
    mask: Option<MaskMetrics>,
}

pub fn localize(a: &LocalizeArgs) -> Result<()> {
    let z = read_latent_file(&a.latent)
        .with_context(|| format!("reading latent {}", a.latent.display()))?;
    let key = read_key(&a.key)?;
    let tp = template_for(&a.payload, a.factors, &key)?;
    let params = LocalizeParams::from_table(&read_thresholds(&a.thresholds)?, a.upscale)?;
    let loc = run_localize(&z, &tp, &params)?;
    ensure_dir(&a.out)?;
    write_json(&a.out.join("positions.json"), &loc.frames.positions)?;
    write_bits_file(&loc.mask.to_grid(), a.out.join("mask.vsbt"))?;
    if a.pgm {
        write_pgm_frames(&loc.mask, &a.out.join("frames"))?;
    }

    let temporal = match &a.gt_positions {
        Some(path) => Some(temporal_accuracy(
            &loc.frames.positions,
            &read_positions(path)?,
        )?),
        None => None,
    };
    let mask = match &a.gt_mask {
        Some(path) => {
            let gt = RegionMask::from_grid(
                &read_bits_file(path).with_context(|| format!("reading {}", path.display()))?,
            )?;
            let gt = match_resolution(gt, &loc.mask)?;
            Some(evaluate_mask(
                &loc.mask,
                &loc.tamper_scores(a.upscale),
                &gt,
            )?)
        }
        None => None,
    };
    if temporal.is_some() || mask.is_some() {
        write_json(
            &a.out.join("metrics.json"),
            &LocalizeMetrics {
                temporal_accuracy: temporal,
                mask,
            },
        )?;
    }
    print(json!({
        "positions": loc.frames.positions,
        "tampered_fraction": loc.mask.count() as f64 / loc.mask.bits().len() as f64,
        "temporal_accuracy": temporal,
        "mask_metrics": mask,
    }));
    Ok(())
}

pub fn calibrate(a: &CalibrateArgs) -> Result<()> {
    let key = read_key(&a.key)?;
    let cfg = CalibrationConfig {
        n_videos: a.n_videos,
        shape: a.geometry.shape,
        factors: a.geometry.factors,
        channel: ChannelSpec::new(a.channel, a.seed)?,
        levels: a.levels,
        k: a.k,
        t_temp: a.t_temp,
        tau: a.tau,
        seed: a.seed,
    };
    let (table, wm, orig) = calibrate_with_samples(&cfg, &key)?;
    if a.check_monotone {
        let ks = [97.0, 98.0, 99.0, 100.0];
        for l in 1..=a.levels {
            if !intervals_nested(wm.level(l), &ks)? || !intervals_nested(orig.level(l), &ks)? {
                bail!("quantile intervals not nested over k at level {l}");
            }
        }
        info!("intervals nested over k = 97..100 at all levels");
    }
    match &a.out {
        Some(path) => {
            std::fs::write(path, table.to_json() + "\n")
                .with_context(|| format!("writing {}", path.display()))?;
            print(json!({
                "levels": table.levels.iter().map(|e| json!({"mu": e.mu, "t_wm": e.t_wm, "t_orig": e.t_orig, "non_discriminative": e.non_discriminative})).collect::<Vec<_>>(),
                "monotone_checked": a.check_monotone,
            }));
        }
        None => println!("{}", table.to_json()),
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalRecord {
    pub index: usize,
    pub seed: u64,
    pub bit_accuracy: Option<f64>,
    pub temporal_accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub iou: f64,
    pub auc: Option<f64>,
    pub average: f64,
}

struct EvalItem<'a> {
    shape: Shape4,
    factors: RepeatFactors,
    key: &'a WatermarkKey,
    kind: ChannelKind,
    edits: &'a [TemporalEdit],
    crop_ratio: Option<f64>,
    aligned_box: Option<usize>,
    params: &'a LocalizeParams,
}

fn eval_one(ctx: &EvalItem, index: usize, seed: u64) -> Result<EvalRecord> {
    let s = ctx.shape;
    let payload = WatermarkPayload::random(ctx.factors.n_bits(s)?, &mut SeededRng::new(seed, 0));
    let z = embed_payload(
        &payload,
        s,
        ctx.factors,
        ctx.key,
        &mut SeededRng::new(seed, 1),
    )?;
    let region = build_region(
        None,
        ctx.crop_ratio,
        ctx.aligned_box,
        (s.f, s.h, s.w),
        &mut SeededRng::new(seed, 2),
    )?;
    let (zt, origin, gt) = tamper(
        &z,
        &region,
        ctx.edits,
        ChannelSpec::new(ctx.kind, seed)?,
        seed,
    )?;
    let bit_acc = if zt.shape() == s {
        Some(bit_accuracy(
            &extract_payload(&zt, ctx.key, ctx.factors)?,
            &payload,
        )?)
    } else {
        None
    };
    let tp = template_bits(&payload, s, ctx.factors, ctx.key)?;
    let loc = run_localize(&zt, &tp, ctx.params)?;
    let gt = match_resolution(gt, &loc.mask)?;
    let m = evaluate_mask(&loc.mask, &loc.tamper_scores(ctx.params.scale), &gt)?;
    Ok(EvalRecord {
        index,
        seed,
        bit_accuracy: bit_acc,
        temporal_accuracy: temporal_accuracy(&loc.frames.positions, &origin)?,
        f1: m.f1,
        precision: m.precision,
        recall: m.recall,
        iou: m.iou,
        auc: m.auc,
        average: m.average,
    })
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    ensure!(a.n > 0, "batch size must be >= 1");
    let key = read_key(&a.key)?;
    let table: ThresholdTable = read_thresholds(&a.thresholds)?;
    let params = LocalizeParams::from_table(&table, a.upscale)?;
    let edits = parse_edits(a.edits.as_deref())?;
    ChannelSpec::new(a.channel, 0)?;
    let ctx = EvalItem {
        shape: a.geometry.shape,
        factors: a.geometry.factors,
        key: &key,
        kind: a.channel,
        edits: &edits,
        crop_ratio: a.crop_ratio,
        aligned_box: a.aligned_box,
        params: &params,
    };
    let mut rng = SeededRng::new(a.seed, EVAL_STREAM);
    let seeds: Vec<u64> = (0..a.n).map(|_| rng.next_u64()).collect();
    let records = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &s)| eval_one(&ctx, i, s))
        .collect::<Result<Vec<_>>>()
        .context("evaluating batch")?;

    let mean = json!({
        "bit_accuracy": mean_of(records.iter().filter_map(|r| r.bit_accuracy)),
        "temporal_accuracy": mean_of(records.iter().map(|r| r.temporal_accuracy)),
        "f1": mean_of(records.iter().map(|r| r.f1)),
        "precision": mean_of(records.iter().map(|r| r.precision)),
        "recall": mean_of(records.iter().map(|r| r.recall)),
        "iou": mean_of(records.iter().map(|r| r.iou)),
        "auc": mean_of(records.iter().filter_map(|r| r.auc)),
        "average": mean_of(records.iter().map(|r| r.average)),
    });
    ensure_dir(&a.out)?;
    if matches!(a.format, ReportFormat::Json | ReportFormat::Both) {
        write_json(
            &a.out.join("report.json"),
            &json!({ "n": records.len(), "mean": mean, "records": records }),
        )?;
    }
    if matches!(a.format, ReportFormat::Csv | ReportFormat::Both) {
        let path = a.out.join("report.csv");
        let mut w =
            csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
        for r in &records {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    print(json!({ "n": records.len(), "mean": mean }));
    Ok(())
}
