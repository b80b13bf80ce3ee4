//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use noiseshield_core::bitcodec::bit_accuracy;
use noiseshield_core::calibration::{
    calibrate, intervals_nested, quantile_interval, sample_distributions,
};
use noiseshield_core::channel::{apply_channel, tamper_spatial, tamper_temporal};
use noiseshield_core::format::{
    decode_bits, decode_latent, encode_bits, encode_latent, read_bits_file, read_latent_file,
    write_bits_file, write_latent_file,
};
use noiseshield_core::metrics::binary_mask_metrics;
use noiseshield_core::noisemap::sample_noise;
use noiseshield_core::spatial::{gather_average, ptb, repeat_expand};
use noiseshield_core::temporal::temporal_accuracy;
use noiseshield_core::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn ms() -> (Shape4, RepeatFactors) {
    (
        Shape4::new(16, 4, 32, 32).unwrap(),
        RepeatFactors::new(8, 1, 4, 4).unwrap(),
    )
}

fn svd() -> (Shape4, RepeatFactors) {
    (
        Shape4::new(16, 4, 64, 64).unwrap(),
        RepeatFactors::new(8, 1, 8, 8).unwrap(),
    )
}

// ---------- oracles ----------

fn ln_choose(n: u64, k: u64) -> f64 {
    let lg = |x: u64| libm::lgamma(x as f64 + 1.0);
    lg(n) - lg(k) - lg(n - k)
}

fn binom_pmf(n: u64, k: u64, p: f64) -> f64 {
    if p == 0.0 {
        return f64::from(u8::from(k == 0));
    }
    (ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp()
}

/// Per-bit majority error averaged over both bit values: flips > n/2 break a
/// 0, flips >= n/2 break a 1 (ties decode to 0).
fn majority_error_oracle(n: u64, eps: f64) -> f64 {
    let half = n / 2;
    let above: f64 = (half + 1..=n).map(|k| binom_pmf(n, k, eps)).sum();
    above + 0.5 * binom_pmf(n, half, eps)
}

/// Smallest `x / n` with `P(Bin(n, 1/2) <= x) >= pct / 100`.
fn binom_half_quantile(n: u64, pct: f64) -> f64 {
    let mut cdf = 0.0;
    for x in 0..=n {
        cdf += binom_pmf(n, x, 0.5);
        if cdf >= pct / 100.0 - 1e-12 {
            return x as f64 / n as f64;
        }
    }
    1.0
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Edits realizing `perm` (output frame i holds original frame perm[i]) as
/// adjacent swaps.
fn swaps_for(perm: &[usize]) -> Vec<TemporalEdit> {
    let mut cur: Vec<usize> = (0..perm.len()).collect();
    let mut edits = Vec::new();
    for (i, &want) in perm.iter().enumerate() {
        let mut j = cur.iter().position(|&v| v == want).unwrap();
        while j > i {
            cur.swap(j - 1, j);
            edits.push(TemporalEdit::Swap { p: j - 1 });
            j -= 1;
        }
    }
    edits
}

fn random_perm(n: usize, rng: &mut SeededRng) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        v.swap(i, rng.below(i + 1));
    }
    v
}

// ---------- criteria ----------

fn c1_chain_round_trip() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 1.0;
    let mut rng = SeededRng::new(101, 0);
    for (shape, factors) in [ms(), svd()] {
        let n = factors.n_bits(shape).unwrap();
        for _ in 0..100 {
            let key = WatermarkKey::generate(&mut rng);
            let m = WatermarkPayload::random(n, &mut rng);
            let z = embed(&m, shape, factors, &key, &mut rng).unwrap();
            let z = apply_channel(&z, &ChannelSpec::identity()).unwrap();
            worst = worst.min(bit_accuracy(&extract(&z, &key, factors).unwrap(), &m).unwrap());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst == 1.0 && secs < 10.0,
        format!("min bit accuracy {worst}, {secs:.2} s for 200 pairs"),
    )
}

fn c2_gaussianity() -> Outcome {
    let n = 1_000_000usize;
    let shape = Shape4::new(1, 1, 1000, 1000).unwrap();
    let mut rng = SeededRng::new(202, 0);
    let tp = BitGrid4D::random(shape, &mut rng);
    let z = sample_noise(&tp, &mut rng);
    let violations = tp
        .bits()
        .iter()
        .zip(z.data())
        .filter(|(&b, &v)| (b == 0 && v > 0.0) || (b == 1 && v <= 0.0))
        .count();
    let mean = z.data().iter().sum::<f64>() / n as f64;
    let var = z
        .data()
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (n - 1) as f64;
    let mut sorted = z.data().to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let c = std_normal_cdf(x);
        d = d
            .max((i + 1) as f64 / n as f64 - c)
            .max(c - i as f64 / n as f64);
    }
    let crit = 1.6276 / (n as f64).sqrt();
    let pass = d < crit && mean.abs() <= 0.005 && (0.99..=1.01).contains(&var) && violations == 0;
    outcome(
        pass,
        format!("KS D = {d:.6} (crit {crit:.6}), mean {mean:.5}, var {var:.5}, support violations {violations}"),
    )
}

fn c3_majority_vote() -> Outcome {
    let (shape, factors) = ms();
    let n = factors.n_bits(shape).unwrap();
    let mut rng = SeededRng::new(303, 0);
    let key = WatermarkKey::generate(&mut rng);
    let mut pass = true;
    let mut parts = Vec::new();
    for (eps, tol) in [(0.1, 0.01), (0.2, 0.01), (0.3, 0.01), (0.45, 0.02)] {
        let mut errors = 0usize;
        for t in 0..200u64 {
            let m = WatermarkPayload::random(n, &mut rng);
            let z = embed(&m, shape, factors, &key, &mut rng).unwrap();
            let ch = ChannelSpec::new(ChannelKind::Bitflip { rate: eps }, 1000 * t + 7).unwrap();
            let out = extract(&apply_channel(&z, &ch).unwrap(), &key, factors).unwrap();
            errors += m
                .bits()
                .iter()
                .zip(out.bits())
                .filter(|(a, b)| a != b)
                .count();
        }
        let emp = errors as f64 / (200 * n) as f64;
        let oracle = majority_error_oracle(factors.k_all() as u64, eps);
        pass &= (emp - oracle).abs() <= tol;
        parts.push(format!("eps {eps}: {emp:.4} vs {oracle:.4}"));
    }
    outcome(pass, parts.join("; "))
}

fn c4_temporal() -> Outcome {
    let (shape, factors) = ms();
    let n = factors.n_bits(shape).unwrap();
    let params = LocalizeParams {
        t_temp: 0.55,
        tau: 0.5,
        hstr: HstrConfig::new(vec![LevelThresholds::passthrough()]).unwrap(),
        scale: 1,
    };
    let mut parts = Vec::new();
    let mut pass = true;
    for (label, channel) in [
        ("identity", ChannelKind::Identity),
        ("bitflip 0.1", ChannelKind::Bitflip { rate: 0.1 }),
    ] {
        let mut worst: f64 = 1.0;
        for seed in 0..100u64 {
            let mut rng = SeededRng::new(404 + seed, 0);
            let key = WatermarkKey::generate(&mut rng);
            let m = WatermarkPayload::random(n, &mut rng);
            let z = embed(&m, shape, factors, &key, &mut rng).unwrap();
            let mut edits = swaps_for(&random_perm(shape.f, &mut rng));
            let at = rng.below(shape.f + 1);
            edits.push(TemporalEdit::Insert {
                p: at,
                source: InsertSource::Gaussian,
            });
            let (zt, origin) = tamper_temporal(&z, &edits, &mut rng).unwrap();
            let zt = apply_channel(&zt, &ChannelSpec::new(channel, seed).unwrap()).unwrap();
            let tp = template_bits(&m, shape, factors, &key).unwrap();
            let loc = localize(&zt, &tp, &params).unwrap();
            worst = worst.min(temporal_accuracy(&loc.frames.positions, &origin).unwrap());
        }
        pass &= worst == 1.0;
        parts.push(format!("{label}: min accuracy {worst}"));
    }
    outcome(pass, parts.join("; "))
}

fn c5_spatial() -> Outcome {
    let (shape, factors) = ms();
    let n = factors.n_bits(shape).unwrap();
    let mut rng = SeededRng::new(505, 0);
    let key = WatermarkKey::generate(&mut rng);
    let table = calibrate(
        &CalibrationConfig::ms_defaults(ChannelSpec::identity(), 5050),
        &key,
    )
    .unwrap();
    let params = LocalizeParams::from_table(&table, 1).unwrap();
    let (mut iou_sum, mut f1_sum, mut iou_min) = (0.0, 0.0, f64::INFINITY);
    for _ in 0..50 {
        let m = WatermarkPayload::random(n, &mut rng);
        let z = embed(&m, shape, factors, &key, &mut rng).unwrap();
        let gt = RegionMask::random_aligned_box(shape.f, shape.h, shape.w, 4, &mut rng).unwrap();
        let zt = tamper_spatial(&z, &gt, &mut rng).unwrap();
        let tp = template_bits(&m, shape, factors, &key).unwrap();
        let loc = localize(&zt, &tp, &params).unwrap();
        let (f1, _, _, iou) = binary_mask_metrics(&loc.mask, &gt).unwrap();
        iou_sum += iou;
        f1_sum += f1;
        iou_min = iou_min.min(iou);
    }
    let (iou, f1) = (iou_sum / 50.0, f1_sum / 50.0);
    outcome(
        iou >= 0.95 && f1 >= 0.97,
        format!("mean IoU {iou:.4} (min {iou_min:.4}), mean F1 {f1:.4}"),
    )
}

fn brute_gather(m: &SoftMask3D, mu: usize) -> Vec<f64> {
    let (f, h, w) = (m.frames() / mu, m.height() / mu, m.width() / mu);
    let mut out = Vec::with_capacity(f * h * w);
    for p in 0..f {
        for j in 0..h {
            for k in 0..w {
                let mut s = 0.0;
                for a in 0..mu {
                    for b in 0..mu {
                        for c in 0..mu {
                            s += m.get(p * mu + a, j * mu + b, k * mu + c);
                        }
                    }
                }
                out.push(s / (mu * mu * mu) as f64);
            }
        }
    }
    out
}

fn c6_hstr_oracles() -> Outcome {
    let mut rng = SeededRng::new(606, 0);
    let mut max_ga: f64 = 0.0;
    let mut repeat_bad = 0usize;
    for _ in 0..1000 {
        let mu = 1 << rng.below(4);
        let (f, h, w) = (
            (1 + rng.below(3)) * mu,
            (1 + rng.below(4)) * mu,
            (1 + rng.below(4)) * mu,
        );
        let values = (0..f * h * w).map(|_| rng.uniform_open()).collect();
        let m = SoftMask3D::new(f, h, w, values).unwrap();
        let g = gather_average(&m, mu).unwrap();
        for (a, b) in g.values().iter().zip(brute_gather(&m, mu)) {
            max_ga = max_ga.max((a - b).abs());
        }
        let r = repeat_expand(&g, mu);
        for p in 0..f {
            for j in 0..h {
                for k in 0..w {
                    if r.get(p, j, k) != g.get(p / mu, j / mu, k / mu) {
                        repeat_bad += 1;
                    }
                }
            }
        }
    }
    let mut ptb_bad = 0usize;
    for _ in 0..100_000 {
        let o = rng.uniform_open();
        let a = rng.uniform_open();
        let b = rng.uniform_open();
        let (t_wm, t_orig) = (a.min(b), a.max(b));
        let want = if o < t_wm {
            0.0
        } else if o > t_orig {
            1.0
        } else {
            o
        };
        ptb_bad += usize::from(ptb(o, t_wm, t_orig) != want);
    }
    for (o, t_wm, t_orig, want) in [
        (0.3, 0.3, 0.6, 0.3),
        (0.6, 0.3, 0.6, 0.6),
        (0.2, 0.3, 0.6, 0.0),
        (0.7, 0.3, 0.6, 1.0),
    ] {
        ptb_bad += usize::from(ptb(o, t_wm, t_orig) != want);
    }
    outcome(
        max_ga <= 1e-12 && repeat_bad == 0 && ptb_bad == 0,
        format!("gather max |diff| {max_ga:.2e}, repeat mismatches {repeat_bad}, PTB mismatches {ptb_bad}"),
    )
}

fn c7_calibration() -> Outcome {
    let (shape, factors) = ms();
    let mut rng = SeededRng::new(707, 0);
    let key = WatermarkKey::generate(&mut rng);
    let (wm, orig) = sample_distributions(
        100,
        shape,
        factors,
        &key,
        &ChannelSpec::identity(),
        3,
        &mut rng,
    )
    .unwrap();
    // 4 channels x 4^3 cells per block
    let bits = (shape.c * 64) as u64;
    let (lo, hi) = quantile_interval(orig.level(3), 99.0).unwrap();
    let (olo, ohi) = (
        binom_half_quantile(bits, 1.0),
        binom_half_quantile(bits, 99.0),
    );
    let close = (lo - olo).abs() <= 0.02 && (hi - ohi).abs() <= 0.02;
    let ks = [97.0, 98.0, 99.0, 100.0];
    let nested = (1..=3).all(|l| {
        intervals_nested(wm.level(l), &ks).unwrap() && intervals_nested(orig.level(l), &ks).unwrap()
    });
    outcome(
        close && nested,
        format!("mu=4 original [{lo:.4}, {hi:.4}] vs oracle [{olo:.4}, {ohi:.4}]; nested over k: {nested}"),
    )
}

fn c8_threshold_adjustment() -> Outcome {
    let (shape, factors) = ms();
    let n = factors.n_bits(shape).unwrap();
    let sigma = (0.15 * std::f64::consts::PI).tan();
    let mut rng = SeededRng::new(808, 0);
    let key = WatermarkKey::generate(&mut rng);
    let noisy = ChannelSpec::new(ChannelKind::Gaussian { sigma }, 8080).unwrap();
    let t_id = calibrate(
        &CalibrationConfig::ms_defaults(ChannelSpec::identity(), 81),
        &key,
    )
    .unwrap();
    let t_g = calibrate(&CalibrationConfig::ms_defaults(noisy, 82), &key).unwrap();
    let p_id = LocalizeParams::from_table(&t_id, 1).unwrap();
    let p_g = LocalizeParams::from_table(&t_g, 1).unwrap();
    let (mut f_id, mut f_g) = (0.0, 0.0);
    for seed in 0..30u64 {
        let m = WatermarkPayload::random(n, &mut rng);
        let z = embed(&m, shape, factors, &key, &mut rng).unwrap();
        let gt = RegionMask::random_aligned_box(shape.f, shape.h, shape.w, 4, &mut rng).unwrap();
        let zt = tamper_spatial(&z, &gt, &mut rng).unwrap();
        let zt = apply_channel(&zt, &noisy.with_seed(seed)).unwrap();
        let tp = template_bits(&m, shape, factors, &key).unwrap();
        f_id += binary_mask_metrics(&localize(&zt, &tp, &p_id).unwrap().mask, &gt)
            .unwrap()
            .0;
        f_g += binary_mask_metrics(&localize(&zt, &tp, &p_g).unwrap().mask, &gt)
            .unwrap()
            .0;
    }
    let (f_id, f_g) = (f_id / 30.0, f_g / 30.0);
    outcome(
        f_g > f_id,
        format!("sigma {sigma:.4}: mean F1 adjusted {f_g:.4} vs identity-calibrated {f_id:.4}"),
    )
}

fn c9_file_formats() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = SeededRng::new(909, 0);
    let mut mismatches = 0usize;
    for i in 0..1000 {
        let s = Shape4::new(
            1 + rng.below(4),
            1 + rng.below(4),
            1 + rng.below(9),
            1 + rng.below(9),
        )
        .unwrap();
        let data = (0..s.len())
            .map(|_| (rng.standard_normal() * 10f64.powi(rng.below(9) as i32 - 4)) as f32 as f64)
            .collect();
        let t = LatentTensor::new(s, data).unwrap();
        let b = BitGrid4D::random(s, &mut rng);
        let lp = dir.path().join(format!("{i}.vslt"));
        let bp = dir.path().join(format!("{i}.vsbt"));
        write_latent_file(&t, &lp).unwrap();
        write_bits_file(&b, &bp).unwrap();
        let t2 = read_latent_file(&lp).unwrap();
        let same = t2.shape() == t.shape()
            && t2
                .data()
                .iter()
                .zip(t.data())
                .all(|(x, y)| x.to_bits() == y.to_bits());
        mismatches += usize::from(!same || read_bits_file(&bp).unwrap() != b);
    }

    let s = Shape4::new(1, 1, 1, 3).unwrap();
    let good_l = encode_latent(&LatentTensor::new(s, vec![1.0, -2.0, 0.5]).unwrap()).unwrap();
    let good_b = encode_bits(&BitGrid4D::new(s, vec![1, 0, 1]).unwrap()).unwrap();
    let mut cases: Vec<(&str, bool)> = Vec::new();
    let mut bad = good_l.clone();
    bad[0] = b'X';
    cases.push((
        "bad magic",
        matches!(decode_latent(&bad), Err(Error::BadMagic { .. })),
    ));
    cases.push((
        "wrong kind",
        matches!(decode_latent(&good_b), Err(Error::BadMagic { .. })),
    ));
    let mut bad = good_l.clone();
    bad[4] = 2;
    cases.push((
        "version",
        matches!(decode_latent(&bad), Err(Error::UnsupportedVersion(2))),
    ));
    cases.push((
        "truncated body",
        matches!(
            decode_latent(&good_l[..good_l.len() - 1]),
            Err(Error::Truncated { .. })
        ),
    ));
    cases.push((
        "truncated header",
        matches!(decode_bits(&good_b[..10]), Err(Error::Truncated { .. })),
    ));
    let mut bad = good_l.clone();
    bad.push(0);
    cases.push((
        "trailing",
        matches!(decode_latent(&bad), Err(Error::TrailingBytes(1))),
    ));
    let mut bad = good_l.clone();
    bad[24..28].copy_from_slice(&f32::NAN.to_le_bytes());
    cases.push((
        "non-finite",
        matches!(decode_latent(&bad), Err(Error::NotFinite(0))),
    ));
    let mut bad = good_b.clone();
    bad[24] |= 0x01;
    cases.push((
        "padding",
        matches!(decode_bits(&bad), Err(Error::NonzeroPadding)),
    ));
    let mut bad = good_l.clone();
    for d in 0..4 {
        bad[8 + 4 * d..12 + 4 * d].copy_from_slice(&u32::MAX.to_le_bytes());
    }
    cases.push(("overflow", decode_latent(&bad).is_err()));
    let mut bad = good_l;
    bad[8..12].copy_from_slice(&0u32.to_le_bytes());
    cases.push(("zero dim", decode_latent(&bad).is_err()));

    let failed: Vec<&str> = cases.iter().filter(|c| !c.1).map(|c| c.0).collect();
    outcome(
        mismatches == 0 && failed.is_empty(),
        format!(
            "1000 round trips, {mismatches} mismatches; {} malformed cases, failing: {failed:?}",
            cases.len()
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("chain round-trip", c1_chain_round_trip),
        ("gaussianity", c2_gaussianity),
        ("majority-vote robustness", c3_majority_vote),
        ("temporal localization", c4_temporal),
        ("spatial localization", c5_spatial),
        ("HSTR/GA/PTB/repeat oracles", c6_hstr_oracles),
        ("calibration structure", c7_calibration),
        ("threshold adjustment", c8_threshold_adjustment),
        ("file formats", c9_file_formats),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        failed += usize::from(!o.pass);
        println!(
            "{} [{}] {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
