//! Seeded benchmark harness: synthetic scenes, protect, degrade, splice,
//! verify, aggregate. Deterministic given (config, key, seed); scenes run in
//! parallel with order-stable aggregation.

use crate::config::Config;
use crate::error::Result;
use crate::pipeline;
use crate::report::{BenchReport, CalibrationReport, ConditionReport, REPORT_SCHEMA_VERSION};
use nowa_core::attacks::{apply_degradation, apply_tamper, DegradationSpec, Region, TamperKind, TamperSpec};
use nowa_core::detector::{calibrate_thresholds, AuthenticityMap};
use nowa_core::rng::chacha_from_u64;
use nowa_core::synth::synthetic_scene;
use nowa_core::{Image, SecretKey};
use rand::Rng;
use rayon::prelude::*;

/// Bench scenes are evaluated at the acceptance scale.
pub const BENCH_SIZE: usize = 256;
const CAL_AUTHENTIC: usize = 10;
const CAL_FULL: usize = 10;
const CAL_SPLICES: usize = 20;

fn sub_seed(seed: u64, tag: u64, index: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9)
        .wrapping_add(tag.wrapping_mul(0x1000_0000))
        .wrapping_add(index)
}

/// Splice with area fraction uniform in [0.10, 0.30], random aspect and
/// position, donor drawn from an independent scene stream.
fn random_splice(seed: u64, size: usize) -> (TamperSpec, Image) {
    let mut rng = chacha_from_u64(seed);
    let frac = rng.gen_range(0.10..0.30);
    let aspect = rng.gen_range(0.6..1.6);
    let area = frac * (size * size) as f64;
    let rh = ((area * aspect).sqrt().round() as usize).clamp(8, size - 2);
    let rw = ((area / rh as f64).round() as usize).clamp(8, size - 2);
    let top = rng.gen_range(0..=(size - rh));
    let left = rng.gen_range(0..=(size - rw));
    let donor = synthetic_scene(3, size, size, seed ^ DONOR_SEED_XOR);
    (
        TamperSpec {
            kind: TamperKind::Splice,
            region: Region::Rect {
                top,
                left,
                height: rh,
                width: rw,
            },
        },
        donor,
    )
}

const DONOR_SEED_XOR: u64 = 0xd00d_5eed_0000_0001;

/// 16-bit PNG round-trip equivalent quantization.
fn quantize16(img: &Image) -> Image {
    img.clamped().map(|v| (v * 65535.0).round() / 65535.0)
}

pub fn run_bench(
    cfg: &Config,
    key: &SecretKey,
    n: usize,
    seed: u64,
    coeffs: &nowa_core::optics::ZernikeCoeffs,
) -> Result<BenchReport> {
    let psf = pipeline::build_psf(cfg, coeffs)?;
    run_bench_with_psf(cfg, key, n, seed, &psf)
}

pub fn run_bench_with_psf(
    cfg: &Config,
    key: &SecretKey,
    n: usize,
    seed: u64,
    psf: &nowa_core::Psf,
) -> Result<BenchReport> {
    let start = std::time::Instant::now();
    let size = BENCH_SIZE;
    let a = pipeline::build_operator(cfg, psf, (size, size))?;

    // Calibration on an independent seeded batch: authentic maps, fully
    // spliced maps, and partial splices.
    let cal_inputs: Vec<(u64, u8)> = (0..CAL_AUTHENTIC as u64)
        .map(|i| (i, 0u8))
        .chain((0..CAL_FULL as u64).map(|i| (i, 1u8)))
        .chain((0..CAL_SPLICES as u64).map(|i| (i, 2u8)))
        .collect();
    let cal_pairs: Vec<Result<(AuthenticityMap, Vec<bool>)>> = cal_inputs
        .par_iter()
        .map(|&(i, kind)| {
            let scene = synthetic_scene(3, size, size, sub_seed(seed, 10 + kind as u64, i));
            let bundle = pipeline::protect_image(cfg, &a, key, &scene, sub_seed(seed, 20 + kind as u64, i))?;
            let xq = quantize16(&bundle.image);
            let (img, gt) = match kind {
                0 => (xq, vec![false; size * size]),
                1 => {
                    let donor = synthetic_scene(3, size, size, sub_seed(seed, 31, i));
                    let spec = TamperSpec {
                        kind: TamperKind::Splice,
                        region: Region::Rect { top: 0, left: 0, height: size, width: size },
                    };
                    let (img, gt) = apply_tamper(&xq, &spec, Some(&donor))?;
                    (img, gt)
                }
                _ => {
                    let (spec, donor) = random_splice(sub_seed(seed, 32, i), size);
                    let (img, gt) = apply_tamper(&xq, &spec, Some(&donor))?;
                    (img, gt)
                }
            };
            let v = pipeline::verify_image(cfg, &a, key, &img, None, None)?;
            Ok((v.map, gt))
        })
        .collect();
    let cal_pairs: Vec<(AuthenticityMap, Vec<bool>)> =
        cal_pairs.into_iter().collect::<Result<_>>()?;
    let calibration = calibrate_thresholds(&cal_pairs)?;
    let thresholds = (calibration.theta_pix, calibration.theta_global);

    let conditions: Vec<(&str, Option<DegradationSpec>)> = vec![
        ("clean", None),
        ("gaussian_sigma1", Some(DegradationSpec::GaussianNoise { sigma_8bit: 1.0, seed: 0 })),
        ("gaussian_sigma5", Some(DegradationSpec::GaussianNoise { sigma_8bit: 5.0, seed: 0 })),
        ("jpeg_q90", Some(DegradationSpec::Jpeg { quality: 90 })),
        ("jpeg_q80", Some(DegradationSpec::Jpeg { quality: 80 })),
        ("jpeg_q70", Some(DegradationSpec::Jpeg { quality: 70 })),
    ];

    struct SceneOutcome {
        // per condition: (auth_global, auth_verdict, tam_global, tam_verdict, auc, iou, f1)
        rows: Vec<(f64, bool, f64, bool, f64, f64, f64)>,
    }

    let outcomes: Vec<Result<SceneOutcome>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let scene = synthetic_scene(3, size, size, sub_seed(seed, 1, i));
            let bundle = pipeline::protect_image(cfg, &a, key, &scene, sub_seed(seed, 2, i))?;
            let xq = quantize16(&bundle.image);
            let (spec, donor) = random_splice(sub_seed(seed, 3, i), size);
            let (tampered, gt) = apply_tamper(&xq, &spec, Some(&donor))?;

            let mut rows = Vec::with_capacity(conditions.len());
            for (ci, (_, deg)) in conditions.iter().enumerate() {
                let mut auth_img = xq.clone();
                let mut tam_img = tampered.clone();
                if let Some(d) = deg {
                    let mut d = *d;
                    if let DegradationSpec::GaussianNoise { seed: s, .. } = &mut d {
                        *s = sub_seed(seed, 40 + ci as u64, i);
                    }
                    auth_img = apply_degradation(&auth_img, &d)?;
                    tam_img = apply_degradation(&tam_img, &d)?;
                }
                let av = pipeline::verify_image(cfg, &a, key, &auth_img, None, Some(thresholds))?;
                let tv = pipeline::verify_image(cfg, &a, key, &tam_img, Some(&gt), Some(thresholds))?;
                let m = tv.metrics.as_ref().expect("gt given");
                rows.push((
                    av.report.global_score,
                    av.verdict_authentic(),
                    tv.report.global_score,
                    tv.verdict_authentic(),
                    m.auc,
                    m.iou,
                    m.f1,
                ));
            }
            Ok(SceneOutcome { rows })
        })
        .collect();
    let outcomes: Vec<SceneOutcome> = outcomes.into_iter().collect::<Result<_>>()?;

    let mut reports = Vec::new();
    for (ci, (name, _)) in conditions.iter().enumerate() {
        let mut auth_sum = 0.0;
        let mut tam_sum = 0.0;
        let mut auth_pass = 0usize;
        let mut detected = 0usize;
        let mut auc = 0.0;
        let mut iou = 0.0;
        let mut f1 = 0.0;
        for o in &outcomes {
            let r = o.rows[ci];
            auth_sum += r.0;
            if r.1 {
                auth_pass += 1;
            }
            tam_sum += r.2;
            if !r.3 {
                detected += 1;
            }
            auc += r.4;
            iou += r.5;
            f1 += r.6;
        }
        let nf = n as f64;
        reports.push(ConditionReport {
            name: name.to_string(),
            auc: auc / nf,
            iou: iou / nf,
            f1: f1 / nf,
            mean_global_authentic: auth_sum / nf,
            mean_global_tampered: tam_sum / nf,
            authentic_pass: auth_pass,
            tampered_detected: detected,
            scenes: n,
        });
    }

    Ok(BenchReport {
        schema_version: REPORT_SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        n,
        seed,
        null_capacity: a.null_capacity(),
        operator_fingerprint: a.fingerprint().to_string(),
        key_fingerprint: key.fingerprint(),
        calibration: CalibrationReport {
            theta_pix: calibration.theta_pix,
            theta_global: calibration.theta_global,
            pixel_f1: calibration.pixel_f1_at_theta,
            weak_separation: calibration.weak_separation,
        },
        conditions: reports,
        config: cfg.echo(),
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}
