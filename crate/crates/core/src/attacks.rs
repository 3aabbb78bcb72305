//! Tamper and degradation harness: content manipulations with ground-truth
//! masks, Gaussian/JPEG degradations, and the operator-estimation spoofing
//! adversary.

use crate::error::{Error, Result};
use crate::fft::fft2_real;
use crate::image::Image;
use crate::key::SecretKey;
use crate::operator::{Band, Otf};
use crate::rng::{chacha_from_u64, NormalStream};
use crate::watermark::{embed, ProtectedBundle};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

/// Region a manipulation applies to.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Region {
    Rect {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    },
    Mask {
        pixels: Vec<bool>,
    },
}

impl Region {
    fn to_mask(&self, height: usize, width: usize) -> Result<Vec<bool>> {
        match self {
            Region::Rect {
                top,
                left,
                height: rh,
                width: rw,
            } => {
                if top + rh > height || left + rw > width {
                    return Err(Error::TamperSpec(format!(
                        "rect {top},{left} {rh}x{rw} exceeds {height}x{width}"
                    )));
                }
                let mut mask = vec![false; height * width];
                for r in *top..top + rh {
                    for c in *left..left + rw {
                        mask[r * width + c] = true;
                    }
                }
                Ok(mask)
            }
            Region::Mask { pixels } => {
                if pixels.len() != height * width {
                    return Err(Error::TamperSpec(format!(
                        "mask has {} pixels, image has {}",
                        pixels.len(),
                        height * width
                    )));
                }
                Ok(pixels.clone())
            }
        }
    }

    /// Bounding box (top, left, height, width) of the active pixels.
    fn bbox(mask: &[bool], height: usize, width: usize) -> Option<(usize, usize, usize, usize)> {
        let mut r0 = height;
        let mut r1 = 0usize;
        let mut c0 = width;
        let mut c1 = 0usize;
        let mut any = false;
        for r in 0..height {
            for c in 0..width {
                if mask[r * width + c] {
                    any = true;
                    r0 = r0.min(r);
                    r1 = r1.max(r);
                    c0 = c0.min(c);
                    c1 = c1.max(c);
                }
            }
        }
        any.then(|| (r0, c0, r1 - r0 + 1, c1 - c0 + 1))
    }
}

/// One content manipulation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TamperKind {
    /// Replace region pixels with donor pixels (donor aligned to the region's
    /// bounding-box origin).
    Splice,
    /// Replace the region with its per-channel mean.
    FillMean,
    /// Replace the region with a Gaussian blur of the original content.
    FillBlur { radius: f64 },
    /// Add clamped Gaussian noise inside the region.
    FillNoise { sigma: f64, seed: u64 },
    /// Copy a source rectangle onto the region's bounding box.
    CopyMove { src_top: usize, src_left: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TamperSpec {
    #[serde(flatten)]
    pub kind: TamperKind,
    pub region: Region,
}

/// Post-protection degradations from the evaluation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DegradationSpec {
    GaussianNoise { sigma_8bit: f64, seed: u64 },
    Jpeg { quality: u32 },
}

pub fn apply_degradation(img: &Image, spec: &DegradationSpec) -> Result<Image> {
    match *spec {
        DegradationSpec::GaussianNoise { sigma_8bit, seed } => {
            add_gaussian_noise(img, sigma_8bit, seed)
        }
        DegradationSpec::Jpeg { quality } => crate::jpeg::jpeg_roundtrip(img, quality),
    }
}

/// Applies a manipulation; pixels outside the region are bit-identical and
/// the returned mask is the region itself.
pub fn apply_tamper(
    img: &Image,
    spec: &TamperSpec,
    donor: Option<&Image>,
) -> Result<(Image, Vec<bool>)> {
    let (channels, height, width) = img.shape();
    let mask = spec.region.to_mask(height, width)?;
    let mut out = img.clone();
    let Some((top, left, rh, rw)) = Region::bbox(&mask, height, width) else {
        return Ok((out, mask)); // empty region: identity
    };

    match &spec.kind {
        TamperKind::Splice => {
            let donor = donor.ok_or_else(|| Error::TamperSpec("splice needs a donor".into()))?;
            if donor.channels() != channels || donor.height() < rh || donor.width() < rw {
                return Err(Error::TamperSpec(format!(
                    "donor {:?} smaller than region {rh}x{rw}",
                    donor.shape()
                )));
            }
            for c in 0..channels {
                for r in 0..height {
                    for q in 0..width {
                        if mask[r * width + q] {
                            out.set(c, r, q, donor.get(c, r - top, q - left));
                        }
                    }
                }
            }
        }
        TamperKind::FillMean => {
            for c in 0..channels {
                let mut sum = 0.0;
                let mut cnt = 0usize;
                for r in 0..height {
                    for q in 0..width {
                        if mask[r * width + q] {
                            sum += img.get(c, r, q);
                            cnt += 1;
                        }
                    }
                }
                let mean = sum / cnt as f64;
                for r in 0..height {
                    for q in 0..width {
                        if mask[r * width + q] {
                            out.set(c, r, q, mean);
                        }
                    }
                }
            }
        }
        TamperKind::FillBlur { radius } => {
            let blurred = gaussian_blur(img, *radius);
            for c in 0..channels {
                for r in 0..height {
                    for q in 0..width {
                        if mask[r * width + q] {
                            out.set(c, r, q, blurred.get(c, r, q));
                        }
                    }
                }
            }
        }
        TamperKind::FillNoise { sigma, seed } => {
            let mut stream = NormalStream::new(chacha_from_u64(*seed));
            for c in 0..channels {
                for r in 0..height {
                    for q in 0..width {
                        if mask[r * width + q] {
                            let v = img.get(c, r, q) + sigma * stream.sample();
                            out.set(c, r, q, v.clamp(0.0, 1.0));
                        }
                    }
                }
            }
        }
        TamperKind::CopyMove { src_top, src_left } => {
            if src_top + rh > height || src_left + rw > width {
                return Err(Error::TamperSpec(format!(
                    "copy-move source {src_top},{src_left} {rh}x{rw} out of bounds"
                )));
            }
            for c in 0..channels {
                for r in 0..height {
                    for q in 0..width {
                        if mask[r * width + q] {
                            let v = img.get(c, src_top + (r - top), src_left + (q - left));
                            out.set(c, r, q, v);
                        }
                    }
                }
            }
        }
    }
    Ok((out, mask))
}

/// Separable Gaussian blur with sigma = radius, replicate boundaries.
fn gaussian_blur(img: &Image, radius: f64) -> Image {
    let sigma = radius.max(1e-6);
    let half = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-half..=half)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let ksum: f64 = kernel.iter().sum();
    let (channels, height, width) = img.shape();
    let mut tmp = Image::zeros(channels, height, width);
    for c in 0..channels {
        for r in 0..height {
            for q in 0..width {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let qq = (q as isize + ki as isize - half).clamp(0, width as isize - 1) as usize;
                    acc += kv * img.get(c, r, qq);
                }
                tmp.set(c, r, q, acc / ksum);
            }
        }
    }
    let mut out = Image::zeros(channels, height, width);
    for c in 0..channels {
        for r in 0..height {
            for q in 0..width {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let rr = (r as isize + ki as isize - half).clamp(0, height as isize - 1) as usize;
                    acc += kv * tmp.get(c, rr, q);
                }
                out.set(c, r, q, acc / ksum);
            }
        }
    }
    out
}

/// img + N(0, sigma_8bit/255), clamped; seeded and deterministic.
pub fn add_gaussian_noise(img: &Image, sigma_8bit: f64, seed: u64) -> Result<Image> {
    if !(sigma_8bit.is_finite() && sigma_8bit >= 0.0) {
        return Err(Error::Precondition(format!(
            "sigma must be >= 0, got {sigma_8bit}"
        )));
    }
    if sigma_8bit == 0.0 {
        return Ok(img.clone());
    }
    let sigma = sigma_8bit / 255.0;
    let mut stream = NormalStream::new(chacha_from_u64(seed));
    let mut out = img.clone();
    for v in out.data_mut().iter_mut() {
        *v = (*v + sigma * stream.sample()).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Blind magnitude estimation of the imaging operator from observations:
/// |H|^2 = mean|FFT(obs)|^2 / mean|FFT(prior)|^2 per channel, DC forced to 1,
/// zero phase. Masks follow the genuine threshold rule.
pub fn estimate_operator_blind(
    observations: &[Image],
    prior_set: &[Image],
    tau_rel: f64,
    band: Option<Band>,
) -> Result<Otf> {
    if observations.len() < 8 {
        return Err(Error::Precondition(format!(
            "need >= 8 observations, got {}",
            observations.len()
        )));
    }
    if prior_set.len() < 8 {
        return Err(Error::Precondition(format!(
            "need >= 8 prior images, got {}",
            prior_set.len()
        )));
    }
    let shape = observations[0].shape();
    for img in observations.iter().chain(prior_set) {
        if img.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: format!("{shape:?}"),
                got: format!("{:?}", img.shape()),
            });
        }
    }
    let (channels, height, width) = shape;
    let bins = height * width;

    let mean_power = |set: &[Image]| -> Vec<f64> {
        let mut acc = vec![0.0; channels * bins];
        for img in set {
            for c in 0..channels {
                let spec = fft2_real(img.channel(c), height, width);
                for (a, v) in acc[c * bins..(c + 1) * bins].iter_mut().zip(&spec) {
                    *a += v.norm_sqr();
                }
            }
        }
        for a in acc.iter_mut() {
            *a /= set.len() as f64;
        }
        acc
    };

    let obs_power = mean_power(observations);
    let prior_power = mean_power(prior_set);

    let mut spectrum = vec![Complex::new(0.0, 0.0); channels * bins];
    for c in 0..channels {
        for idx in 0..bins {
            let i = c * bins + idx;
            let mag = if idx == 0 {
                1.0 // DC forced to unity
            } else if prior_power[i] > 0.0 {
                (obs_power[i] / prior_power[i]).sqrt()
            } else {
                0.0
            };
            spectrum[i] = Complex::new(mag, 0.0);
        }
    }
    Otf::from_spectrum(channels, height, width, spectrum, tau_rel, band)
}

/// Forges a "protected" image with the estimated operator: range-project the
/// target so the embedding precondition holds with respect to the estimate,
/// then run the genuine embedding with the (leaked) key.
pub fn spoof(
    estimated: &Otf,
    key: &SecretKey,
    target: &Image,
    target_psnr: f64,
) -> Result<ProtectedBundle> {
    let x_r = estimated.project_range(target)?;
    embed(estimated, &x_r, key, target_psnr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::DEFAULT_TAU_REL;
    use crate::optics::Psf;
    use crate::synth;

    fn scene(n: usize, seed: u64) -> Image {
        synth::synthetic_scene(1, n, n, seed)
    }

    #[test]
    fn empty_region_is_identity() {
        let img = scene(64, 1);
        let spec = TamperSpec {
            kind: TamperKind::FillMean,
            region: Region::Mask {
                pixels: vec![false; 64 * 64],
            },
        };
        let (out, mask) = apply_tamper(&img, &spec, None).unwrap();
        assert_eq!(out, img);
        assert!(mask.iter().all(|&m| !m));
    }

    #[test]
    fn full_splice_copies_the_donor() {
        let img = scene(64, 2);
        let donor = scene(64, 3);
        let spec = TamperSpec {
            kind: TamperKind::Splice,
            region: Region::Rect {
                top: 0,
                left: 0,
                height: 64,
                width: 64,
            },
        };
        let (out, mask) = apply_tamper(&img, &spec, Some(&donor)).unwrap();
        assert_eq!(out, donor);
        assert!(mask.iter().all(|&m| m));
    }

    #[test]
    fn out_of_region_pixels_are_bit_identical() {
        let img = scene(64, 4);
        let donor = scene(64, 5);
        let spec = TamperSpec {
            kind: TamperKind::Splice,
            region: Region::Rect {
                top: 10,
                left: 12,
                height: 20,
                width: 24,
            },
        };
        let (out, mask) = apply_tamper(&img, &spec, Some(&donor)).unwrap();
        for r in 0..64 {
            for q in 0..64 {
                if !mask[r * 64 + q] {
                    assert_eq!(out.get(0, r, q).to_bits(), img.get(0, r, q).to_bits());
                }
            }
        }
    }

    #[test]
    fn fill_mean_on_constant_image_is_fixed_point() {
        let img = Image::constant(1, 64, 64, 0.5);
        let spec = TamperSpec {
            kind: TamperKind::FillMean,
            region: Region::Rect {
                top: 8,
                left: 8,
                height: 16,
                width: 16,
            },
        };
        let (out, mask) = apply_tamper(&img, &spec, None).unwrap();
        assert_eq!(out, img);
        assert_eq!(mask.iter().filter(|&&m| m).count(), 256);
    }

    #[test]
    fn small_donor_is_rejected() {
        let img = scene(64, 6);
        let donor = Image::constant(1, 32, 32, 0.5);
        let spec = TamperSpec {
            kind: TamperKind::Splice,
            region: Region::Rect {
                top: 0,
                left: 0,
                height: 40,
                width: 40,
            },
        };
        assert!(apply_tamper(&img, &spec, Some(&donor)).is_err());
    }

    #[test]
    fn copy_move_translates_content() {
        let img = scene(64, 7);
        let spec = TamperSpec {
            kind: TamperKind::CopyMove {
                src_top: 0,
                src_left: 0,
            },
            region: Region::Rect {
                top: 32,
                left: 32,
                height: 16,
                width: 16,
            },
        };
        let (out, _) = apply_tamper(&img, &spec, None).unwrap();
        for r in 0..16 {
            for q in 0..16 {
                assert_eq!(out.get(0, 32 + r, 32 + q), img.get(0, r, q));
            }
        }
    }

    #[test]
    fn noise_zero_sigma_is_identity_and_seeded() {
        let img = scene(64, 8);
        assert_eq!(add_gaussian_noise(&img, 0.0, 1).unwrap(), img);
        let a = add_gaussian_noise(&img, 5.0, 33).unwrap();
        let b = add_gaussian_noise(&img, 5.0, 33).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_std_matches_request() {
        let img = Image::constant(1, 256, 256, 0.5);
        let out = add_gaussian_noise(&img, 1.0, 9).unwrap();
        let n = out.len() as f64;
        let mean_diff: f64 = out
            .data()
            .iter()
            .zip(img.data())
            .map(|(a, b)| a - b)
            .sum::<f64>()
            / n;
        let var: f64 = out
            .data()
            .iter()
            .zip(img.data())
            .map(|(a, b)| (a - b - mean_diff).powi(2))
            .sum::<f64>()
            / n;
        let std_8bit = var.sqrt() * 255.0;
        assert!(
            (0.9..=1.1).contains(&std_8bit),
            "empirical std {std_8bit} (8-bit units)"
        );
    }

    #[test]
    fn delta_psf_estimation_finds_no_in_band_nulls() {
        let psf = Psf::delta(1, 8);
        let a = Otf::build(&psf, (64, 64), DEFAULT_TAU_REL, Some(Band::FULL)).unwrap();
        let obs: Vec<Image> = (0..8)
            .map(|i| a.forward(&scene(64, 100 + i)).unwrap())
            .collect();
        let prior: Vec<Image> = (0..8).map(|i| scene(64, 200 + i)).collect();
        let est = estimate_operator_blind(&obs, &prior, DEFAULT_TAU_REL, Some(Band::FULL)).unwrap();
        assert_eq!(est.null_bin_count(), 0);
    }

    #[test]
    fn estimation_error_shrinks_with_more_observations() {
        // 5x5 box blur, noisy measurements; symmetric-difference error of the
        // estimated null mask must decrease from 8 to 64 observations.
        let k = 16;
        let mut data = vec![0.0; k * k];
        for r in 0..5 {
            for q in 0..5 {
                data[(k / 2 - 2 + r) * k + (k / 2 - 2 + q)] = 1.0;
            }
        }
        let psf = Psf::from_raw(1, k, data, 1e-5).unwrap();
        let a = Otf::build(&psf, (64, 64), DEFAULT_TAU_REL, None).unwrap();
        let noise = crate::operator::NoiseModel { sigma: 2.0 / 255.0 };
        let prior: Vec<Image> = (0..16).map(|i| scene(64, 900 + i)).collect();
        let err_at = |count: usize| -> f64 {
            let obs: Vec<Image> = (0..count)
                .map(|i| {
                    a.forward_noisy(&scene(64, 300 + i as u64), &noise, 700 + i as u64)
                        .unwrap()
                })
                .collect();
            let est = estimate_operator_blind(&obs, &prior, DEFAULT_TAU_REL, None).unwrap();
            let diff = est
                .null_mask()
                .iter()
                .zip(a.null_mask())
                .filter(|(e, t)| e != t)
                .count();
            diff as f64 / a.null_mask().len() as f64
        };
        let e8 = err_at(8);
        let e64 = err_at(64);
        assert!(
            e64 <= e8 + 0.01,
            "error did not shrink: 8 obs {e8}, 64 obs {e64}"
        );
    }

    #[test]
    fn too_few_observations_is_an_error() {
        let prior: Vec<Image> = (0..8).map(|i| scene(64, i)).collect();
        assert!(estimate_operator_blind(&[], &prior, DEFAULT_TAU_REL, None).is_err());
    }
}

#[cfg(test)]
mod fill_tests {
    use super::*;
    use crate::synth::synthetic_scene;

    #[test]
    fn fill_blur_smooths_the_region_only() {
        let img = synthetic_scene(1, 64, 64, 50);
        let spec = TamperSpec {
            kind: TamperKind::FillBlur { radius: 2.0 },
            region: Region::Rect { top: 16, left: 16, height: 24, width: 24 },
        };
        let (out, mask) = apply_tamper(&img, &spec, None).unwrap();
        // Local variance drops inside the region.
        let var_of = |im: &Image| {
            let mut sum = 0.0;
            let mut sq = 0.0;
            let mut n = 0.0;
            for r in 18..38 {
                for q in 18..38 {
                    let v = im.get(0, r, q);
                    sum += v;
                    sq += v * v;
                    n += 1.0;
                }
            }
            sq / n - (sum / n) * (sum / n)
        };
        assert!(var_of(&out) < var_of(&img), "blur did not smooth");
        for r in 0..64 {
            for q in 0..64 {
                if !mask[r * 64 + q] {
                    assert_eq!(out.get(0, r, q).to_bits(), img.get(0, r, q).to_bits());
                }
            }
        }
    }

    #[test]
    fn fill_noise_is_seeded_and_clamped() {
        let img = synthetic_scene(1, 64, 64, 51);
        let spec = TamperSpec {
            kind: TamperKind::FillNoise { sigma: 0.2, seed: 9 },
            region: Region::Rect { top: 8, left: 8, height: 16, width: 16 },
        };
        let (a, _) = apply_tamper(&img, &spec, None).unwrap();
        let (b, _) = apply_tamper(&img, &spec, None).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(a != img);
    }
}
