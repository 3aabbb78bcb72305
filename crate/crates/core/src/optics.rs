//! Wave-optics simulation of the lens + phase-mask camera.
//!
//! The pupil combines an ideal thin-lens phase with a Zernike-parameterized
//! height profile; the sensor field is obtained by angular-spectrum
//! propagation and the PSF is the cropped, renormalized intensity.

use crate::error::{Error, Result};
use crate::fft::{fft2, fft_freq, ifft2};
use crate::zernike::{self, DiskGrid};
use num_complex::Complex;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Reference wavelength for coefficient caps and restart ranges.
pub const LAMBDA_REF: f64 = 550e-9;

/// Manufacturability cap on each height coefficient, in meters.
pub const COEFF_CAP: f64 = 10.0 * LAMBDA_REF;

/// Minimum fraction of sensor-plane energy the cropped kernel must capture.
pub const CROP_ENERGY_MIN: f64 = 0.95;

/// Internal pupil oversampling for the PSF simulation. At the native mask
/// pitch the thin-lens chirp is undersampled near the aperture edge and the
/// aliased samples scatter energy into a spurious halo; simulating at half
/// the pitch keeps the chirp below Nyquist and binning the intensity back
/// down models sensor-pixel integration.
const PSF_OVERSAMPLE: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpticalConfig {
    /// Pupil samples per side; must be a power of two.
    pub pupil_samples: usize,
    /// Physical mask width in meters.
    pub mask_width: f64,
    /// Focal length in meters.
    pub focal_length: f64,
    /// Pupil-to-sensor propagation distance in meters.
    pub prop_distance: f64,
    /// Per-channel wavelengths in meters (R, G, B order for 3 channels).
    pub wavelengths: Vec<f64>,
    /// Mask refractive index (constant across wavelengths).
    pub mask_index: f64,
    /// Aperture radius as a fraction of the half-width.
    pub aperture_radius_frac: f64,
    /// Cropped PSF kernel side; even, <= pupil_samples.
    pub kernel_size: usize,
}

impl Default for OpticalConfig {
    fn default() -> Self {
        Self {
            pupil_samples: 256,
            mask_width: 2.835e-3,
            focal_length: 50e-3,
            prop_distance: 50e-3,
            wavelengths: vec![640e-9, 550e-9, 460e-9],
            mask_index: 1.52,
            aperture_radius_frac: 1.0,
            kernel_size: 64,
        }
    }
}

impl OpticalConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.pupil_samples.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "pupil_samples must be a power of two, got {}",
                self.pupil_samples
            )));
        }
        for (name, v) in [
            ("mask_width", self.mask_width),
            ("focal_length", self.focal_length),
            ("prop_distance", self.prop_distance),
            ("mask_index", self.mask_index),
            ("aperture_radius_frac", self.aperture_radius_frac),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.wavelengths.is_empty()
            || self.wavelengths.len() == 2
            || self.wavelengths.len() > 3
        {
            return Err(Error::InvalidConfig(
                "wavelengths must hold 1 or 3 entries".into(),
            ));
        }
        if !self.wavelengths.iter().all(|&l| l.is_finite() && l > 0.0) {
            return Err(Error::InvalidConfig("wavelengths must be > 0".into()));
        }
        for a in 0..self.wavelengths.len() {
            for b in a + 1..self.wavelengths.len() {
                if self.wavelengths[a] == self.wavelengths[b] {
                    return Err(Error::InvalidConfig("wavelengths must be distinct".into()));
                }
            }
        }
        if !self.kernel_size.is_multiple_of(2) || self.kernel_size > self.pupil_samples || self.kernel_size == 0 {
            return Err(Error::InvalidConfig(format!(
                "kernel_size must be even and <= pupil_samples, got {}",
                self.kernel_size
            )));
        }
        Ok(())
    }

    /// Pupil sample pitch in meters.
    pub fn pitch(&self) -> f64 {
        self.mask_width / self.pupil_samples as f64
    }

    /// Aperture radius in meters.
    pub fn aperture_radius(&self) -> f64 {
        self.aperture_radius_frac * self.mask_width / 2.0
    }

    pub fn channels(&self) -> usize {
        self.wavelengths.len()
    }

    fn disk_grid(&self) -> DiskGrid {
        DiskGrid::new(
            self.pupil_samples,
            self.aperture_radius() / self.pitch(),
        )
    }

    /// Green-channel wavelength (middle entry for RGB, the single entry
    /// otherwise), used for the nominal sensor pitch.
    fn green_wavelength(&self) -> f64 {
        if self.wavelengths.len() == 3 {
            self.wavelengths[1]
        } else {
            self.wavelengths[0]
        }
    }
}

/// Height coefficients in meters per unit-RMS Noll mode, indices 1..=K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZernikeCoeffs {
    values: Vec<f64>,
}

impl ZernikeCoeffs {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidCoeffs("need at least one mode".into()));
        }
        if values.len() > zernike::MAX_NOLL {
            return Err(Error::UnsupportedMode(values.len()));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidCoeffs("non-finite coefficient".into()));
        }
        if let Some(v) = values.iter().find(|v| v.abs() > COEFF_CAP) {
            return Err(Error::InvalidCoeffs(format!(
                "|{v}| exceeds manufacturability cap {COEFF_CAP:.2e}"
            )));
        }
        Ok(Self { values })
    }

    pub fn zeros(k: usize) -> Self {
        Self {
            values: vec![0.0; k.clamp(1, zernike::MAX_NOLL)],
        }
    }

    pub fn modes(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Coefficient for Noll index j (1-based); zero if beyond K.
    pub fn get(&self, j: usize) -> f64 {
        if j >= 1 && j <= self.values.len() {
            self.values[j - 1]
        } else {
            0.0
        }
    }
}

/// Per-channel PSF kernel, nonnegative, unit sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Psf {
    channels: usize,
    kernel_size: usize,
    /// Channel-major, row-major kernels.
    data: Vec<f64>,
    /// Nominal sensor sample pitch in meters.
    pub sample_pitch: f64,
    /// Fraction of sensor-plane energy captured by the crop, per channel
    /// (1.0 for measured or synthetic kernels).
    pub crop_energy: Vec<f64>,
}

impl Psf {
    /// Validates and renormalizes raw kernel data (e.g. a measured PSF):
    /// values below -1e-6 are rejected, small negatives are clamped to zero,
    /// each channel is renormalized to unit sum.
    pub fn from_raw(
        channels: usize,
        kernel_size: usize,
        mut data: Vec<f64>,
        sample_pitch: f64,
    ) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::DegeneratePsf(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != channels * kernel_size * kernel_size {
            return Err(Error::ShapeMismatch {
                expected: format!("{channels}x{kernel_size}x{kernel_size}"),
                got: format!("{} values", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegeneratePsf("non-finite kernel value".into()));
        }
        if let Some(v) = data.iter().find(|&&v| v < -1e-6) {
            return Err(Error::DegeneratePsf(format!("negative kernel value {v}")));
        }
        for v in data.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let per = kernel_size * kernel_size;
        for c in 0..channels {
            let ch = &mut data[c * per..(c + 1) * per];
            let sum: f64 = ch.iter().sum();
            if sum <= 0.0 {
                return Err(Error::DegeneratePsf(format!("channel {c} sums to zero")));
            }
            for v in ch.iter_mut() {
                *v /= sum;
            }
        }
        Ok(Self {
            crop_energy: vec![1.0; channels],
            channels,
            kernel_size,
            data,
            sample_pitch,
        })
    }

    /// Kernel that is 1 exactly at the center sample of every channel.
    pub fn delta(channels: usize, kernel_size: usize) -> Self {
        let per = kernel_size * kernel_size;
        let mut data = vec![0.0; channels * per];
        let center = (kernel_size / 2) * kernel_size + kernel_size / 2;
        for c in 0..channels {
            data[c * per + center] = 1.0;
        }
        Self {
            crop_energy: vec![1.0; channels],
            channels,
            kernel_size,
            data,
            sample_pitch: 0.0,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let per = self.kernel_size * self.kernel_size;
        &self.data[c * per..(c + 1) * per]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Second spatial moment about the centroid, averaged over channels.
    pub fn second_moment(&self) -> f64 {
        let k = self.kernel_size;
        let mut total = 0.0;
        for c in 0..self.channels {
            let ch = self.channel(c);
            let mut cx = 0.0;
            let mut cy = 0.0;
            for r in 0..k {
                for q in 0..k {
                    let w = ch[r * k + q];
                    cy += w * r as f64;
                    cx += w * q as f64;
                }
            }
            let mut m2 = 0.0;
            for r in 0..k {
                for q in 0..k {
                    let dy = r as f64 - cy;
                    let dx = q as f64 - cx;
                    m2 += ch[r * k + q] * (dx * dx + dy * dy);
                }
            }
            total += m2;
        }
        total / self.channels as f64
    }
}

/// Height profile h = sum_k phi_k Z_k on the pupil grid, meters; zero outside
/// the aperture. Row-major N x N.
pub fn height_profile(coeffs: &ZernikeCoeffs, cfg: &OpticalConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    height_profile_on(coeffs, &cfg.disk_grid())
}

fn height_profile_on(coeffs: &ZernikeCoeffs, grid: &DiskGrid) -> Result<Vec<f64>> {
    let n = grid.n;
    let mut h = vec![0.0; n * n];
    for (j0, &phi) in coeffs.values().iter().enumerate() {
        if phi == 0.0 {
            continue;
        }
        let mode = zernike::mode(j0 + 1, grid)?;
        for (hv, mv) in h.iter_mut().zip(&mode) {
            *hv += phi * mv;
        }
    }
    Ok(h)
}

/// Wavelength-dependent phase delay of the mask: (2 pi / lambda)(n_M - 1) h.
pub fn mask_phase(height: &[f64], wavelength: f64, mask_index: f64) -> Vec<f64> {
    let k = 2.0 * PI / wavelength;
    height.iter().map(|&h| k * (mask_index - 1.0) * h).collect()
}

/// Combined pupil function A * exp(-i k r^2 / (2f)) * exp(i phi_M) for one
/// wavelength. Unit modulus inside the aperture, zero outside.
pub fn pupil_function(
    coeffs: &ZernikeCoeffs,
    cfg: &OpticalConfig,
    wavelength: f64,
) -> Result<Vec<Complex<f64>>> {
    let height = height_profile(coeffs, cfg)?;
    Ok(pupil_from_height(&height, cfg, wavelength))
}

fn pupil_from_height(height: &[f64], cfg: &OpticalConfig, wavelength: f64) -> Vec<Complex<f64>> {
    pupil_on_grid(
        height,
        cfg.pupil_samples,
        cfg.pitch(),
        cfg.aperture_radius(),
        cfg.focal_length,
        cfg.mask_index,
        wavelength,
    )
}

fn pupil_on_grid(
    height: &[f64],
    n: usize,
    pitch: f64,
    radius: f64,
    focal_length: f64,
    mask_index: f64,
    wavelength: f64,
) -> Vec<Complex<f64>> {
    let k = 2.0 * PI / wavelength;
    let phi_m = mask_phase(height, wavelength, mask_index);
    let half = (n / 2) as f64;
    let mut pupil = vec![Complex::new(0.0, 0.0); n * n];
    for row in 0..n {
        let y = (row as f64 - half) * pitch;
        for col in 0..n {
            let x = (col as f64 - half) * pitch;
            if x * x + y * y <= radius * radius {
                let lens = -k * (x * x + y * y) / (2.0 * focal_length);
                let phase = lens + phi_m[row * n + col];
                pupil[row * n + col] = Complex::from_polar(1.0, phase);
            }
        }
    }
    pupil
}

/// Angular-spectrum propagation over distance `s`. Evanescent frequencies
/// ((lambda f_x)^2 + (lambda f_y)^2 >= 1) are zeroed; they decay over any
/// macroscopic distance and keeping them overflows the exponential.
pub fn propagate_angular_spectrum(
    field: &[Complex<f64>],
    n: usize,
    distance: f64,
    wavelength: f64,
    pitch: f64,
) -> Vec<Complex<f64>> {
    assert_eq!(field.len(), n * n, "field must be square");
    assert!(pitch > 0.0);
    let mut spec = field.to_vec();
    fft2(&mut spec, n, n);
    let k = 2.0 * PI / wavelength;
    for row in 0..n {
        let fy = fft_freq(row, n) / pitch;
        for col in 0..n {
            let fx = fft_freq(col, n) / pitch;
            let arg = 1.0 - (wavelength * fx).powi(2) - (wavelength * fy).powi(2);
            let idx = row * n + col;
            if arg > 0.0 {
                spec[idx] *= Complex::from_polar(1.0, k * distance * arg.sqrt());
            } else {
                spec[idx] = Complex::new(0.0, 0.0);
            }
        }
    }
    ifft2(&mut spec, n, n);
    spec
}

/// Full PSF simulation: pupil -> propagate -> intensity -> centroid crop ->
/// renormalize. Errors when the crop captures less than 95% of the
/// sensor-plane energy.
pub fn compute_psf(coeffs: &ZernikeCoeffs, cfg: &OpticalConfig) -> Result<Psf> {
    cfg.validate()?;
    let n_sim = cfg.pupil_samples * PSF_OVERSAMPLE;
    let pitch_sim = cfg.pitch() / PSF_OVERSAMPLE as f64;
    let grid = DiskGrid::new(n_sim, cfg.aperture_radius() / pitch_sim);
    let height = height_profile_on(coeffs, &grid)?;
    psf_from_fine_height(&height, cfg)
}

/// Result of snapping a height profile to fabrication levels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantizedHeight {
    /// Snapped profile, meters, min shifted to zero.
    pub heights: Vec<f64>,
    pub levels: usize,
    pub step: f64,
    /// Set when the dynamic range exceeded the level span by more than 50%.
    pub quantization_loss: bool,
}

/// Snaps each sample (after shifting the minimum to zero) to the nearest of
/// {0, step, ..., (levels-1) step}.
pub fn quantize_height(height: &[f64], levels: usize, step: f64) -> Result<QuantizedHeight> {
    if levels < 2 {
        return Err(Error::Precondition(format!(
            "levels must be >= 2, got {levels}"
        )));
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::Precondition(format!("step must be > 0, got {step}")));
    }
    let min = height.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = height.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (levels - 1) as f64 * step;
    let top = (levels - 1) as f64;
    let heights = height
        .iter()
        .map(|&h| {
            let shifted = h - min;
            let level = (shifted / step).round().clamp(0.0, top);
            level * step
        })
        .collect();
    Ok(QuantizedHeight {
        heights,
        levels,
        step,
        quantization_loss: (max - min) > 1.5 * span,
    })
}

/// PSF recomputed from an explicit height profile at the native mask
/// resolution (e.g. after fabrication quantization). Mask pixels are
/// piecewise-constant, so the profile is replicated onto the simulation grid.
pub fn compute_psf_from_height(height: &[f64], cfg: &OpticalConfig) -> Result<Psf> {
    cfg.validate()?;
    let n = cfg.pupil_samples;
    if height.len() != n * n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n}x{n}"),
            got: format!("{} values", height.len()),
        });
    }
    let n_sim = n * PSF_OVERSAMPLE;
    let mut fine = vec![0.0; n_sim * n_sim];
    for row in 0..n_sim {
        for col in 0..n_sim {
            fine[row * n_sim + col] = height[(row / PSF_OVERSAMPLE) * n + col / PSF_OVERSAMPLE];
        }
    }
    // Zero outside the aperture on the fine grid.
    let pitch_sim = cfg.pitch() / PSF_OVERSAMPLE as f64;
    let grid = DiskGrid::new(n_sim, cfg.aperture_radius() / pitch_sim);
    for row in 0..n_sim {
        for col in 0..n_sim {
            if !grid.inside(row, col) {
                fine[row * n_sim + col] = 0.0;
            }
        }
    }
    psf_from_fine_height(&fine, cfg)
}

/// Simulation at PSF_OVERSAMPLE x the mask resolution; the sensor intensity
/// is binned back to the native pitch before cropping.
fn psf_from_fine_height(height: &[f64], cfg: &OpticalConfig) -> Result<Psf> {
    let n = cfg.pupil_samples;
    let over = PSF_OVERSAMPLE;
    let n_sim = n * over;
    let ks = cfg.kernel_size;
    let pitch_sim = cfg.pitch() / over as f64;
    let per = ks * ks;
    let mut data = vec![0.0; cfg.channels() * per];
    let mut crop_energy = Vec::with_capacity(cfg.channels());

    for (c, &lambda) in cfg.wavelengths.iter().enumerate() {
        let pupil = pupil_on_grid(
            height,
            n_sim,
            pitch_sim,
            cfg.aperture_radius(),
            cfg.focal_length,
            cfg.mask_index,
            lambda,
        );
        let sensor = propagate_angular_spectrum(&pupil, n_sim, cfg.prop_distance, lambda, pitch_sim);

        // Bin the intensity down to the native pitch with a sample-centered
        // triangular kernel (periodic): every fine sample carries the same
        // total weight and the native grid stays mirror-symmetric about the
        // center sample.
        let fine: Vec<f64> = sensor.iter().map(|u| u.norm_sqr()).collect();
        let over_i = over as isize;
        let mut rows_binned = vec![0.0; n * n_sim];
        for j in 0..n {
            for col in 0..n_sim {
                let mut acc = 0.0;
                for t in -(over_i - 1)..over_i {
                    let w = (over_i - t.abs()) as f64 / (over * over) as f64;
                    let r = (j as isize * over_i + t).rem_euclid(n_sim as isize) as usize;
                    acc += w * fine[r * n_sim + col];
                }
                rows_binned[j * n_sim + col] = acc;
            }
        }
        let mut intensity = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                let mut acc = 0.0;
                for t in -(over_i - 1)..over_i {
                    let w = (over_i - t.abs()) as f64 / (over * over) as f64;
                    let c = (i as isize * over_i + t).rem_euclid(n_sim as isize) as usize;
                    acc += w * rows_binned[j * n_sim + c];
                }
                intensity[j * n + i] = acc;
            }
        }

        let total: f64 = intensity.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegeneratePsf(format!("channel {c} carries no energy")));
        }

        // Intensity centroid on the centered grid decides the crop window.
        let mut cy = 0.0;
        let mut cx = 0.0;
        for row in 0..n {
            for col in 0..n {
                let w = intensity[row * n + col];
                cy += w * row as f64;
                cx += w * col as f64;
            }
        }
        cy /= total;
        cx /= total;
        let top = ((cy.round() as isize) - (ks as isize) / 2).clamp(0, (n - ks) as isize) as usize;
        let left = ((cx.round() as isize) - (ks as isize) / 2).clamp(0, (n - ks) as isize) as usize;

        let mut crop_sum = 0.0;
        for r in 0..ks {
            for q in 0..ks {
                let v = intensity[(top + r) * n + (left + q)];
                data[c * per + r * ks + q] = v;
                crop_sum += v;
            }
        }
        let captured = crop_sum / total;
        if captured < CROP_ENERGY_MIN {
            return Err(Error::PsfClipping {
                captured,
                required: CROP_ENERGY_MIN,
            });
        }
        crop_energy.push(captured);
        for v in &mut data[c * per..(c + 1) * per] {
            *v /= crop_sum;
        }
    }

    let sample_pitch = cfg.green_wavelength() * cfg.prop_distance / (n as f64 * cfg.pitch());
    Ok(Psf {
        channels: cfg.channels(),
        kernel_size: ks,
        data,
        sample_pitch,
        crop_energy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_cfg() -> OpticalConfig {
        // Half-size mask keeps the unit tests fast; same pitch as default.
        OpticalConfig {
            pupil_samples: 128,
            kernel_size: 32,
            mask_width: 1.4175e-3,
            ..OpticalConfig::default()
        }
    }

    #[test]
    fn zero_coeffs_give_zero_height() {
        let cfg = small_cfg();
        let h = height_profile(&ZernikeCoeffs::zeros(18), &cfg).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn piston_gives_constant_height_inside_disk() {
        let cfg = small_cfg();
        let mut vals = vec![0.0; 18];
        vals[0] = 1e-6;
        let coeffs = ZernikeCoeffs::new(vals).unwrap();
        let h = height_profile(&coeffs, &cfg).unwrap();
        let grid = DiskGrid::new(cfg.pupil_samples, cfg.aperture_radius() / cfg.pitch());
        let n = cfg.pupil_samples;
        for row in 0..n {
            for col in 0..n {
                let v = h[row * n + col];
                if grid.inside(row, col) {
                    assert_relative_eq!(v, 1e-6, epsilon = 1e-18);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn height_profile_matches_independent_summation() {
        // Oracle: recompute 2e-7 Z4 + 1e-7 Z11 by direct per-sample summation.
        let cfg = small_cfg();
        let mut vals = vec![0.0; 11];
        vals[3] = 2e-7;
        vals[10] = 1e-7;
        let coeffs = ZernikeCoeffs::new(vals).unwrap();
        let h = height_profile(&coeffs, &cfg).unwrap();
        let grid = DiskGrid::new(cfg.pupil_samples, cfg.aperture_radius() / cfg.pitch());
        let n = cfg.pupil_samples;
        for row in (0..n).step_by(7) {
            for col in (0..n).step_by(7) {
                let (rho, theta) = grid.polar(row, col);
                let expect = if rho <= 1.0 {
                    2e-7 * zernike::evaluate(4, rho, theta).unwrap()
                        + 1e-7 * zernike::evaluate(11, rho, theta).unwrap()
                } else {
                    0.0
                };
                assert_relative_eq!(h[row * n + col], expect, epsilon = 1e-20, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn mask_phase_formula() {
        // h = lambda/(n_M - 1) is one full wave; scalar oracle for 200 nm.
        let lambda = 550e-9;
        let n_m = 1.52;
        let phases = mask_phase(&[0.0, lambda / (n_m - 1.0), 200e-9], lambda, n_m);
        assert_eq!(phases[0], 0.0);
        assert_relative_eq!(phases[1], 2.0 * PI, epsilon = 1e-12);
        assert_relative_eq!(
            phases[2],
            2.0 * PI * 0.52 * 200e-9 / 550e-9,
            epsilon = 1e-12
        );
        assert_relative_eq!(phases[2], 1.1880, epsilon = 5e-4);
    }

    #[test]
    fn pupil_center_is_unity_and_unit_modulus_inside() {
        let cfg = small_cfg();
        let p = pupil_function(&ZernikeCoeffs::zeros(4), &cfg, 550e-9).unwrap();
        let n = cfg.pupil_samples;
        let center = p[(n / 2) * n + n / 2];
        assert_relative_eq!(center.re, 1.0, epsilon = 1e-12);
        assert_relative_eq!(center.im, 0.0, epsilon = 1e-12);
        let grid = DiskGrid::new(n, cfg.aperture_radius() / cfg.pitch());
        let mut inside = 0usize;
        for row in 0..n {
            for col in 0..n {
                let v = p[row * n + col];
                if grid.inside(row, col) {
                    assert_relative_eq!(v.norm(), 1.0, epsilon = 1e-12);
                    inside += 1;
                } else {
                    assert_eq!(v.norm(), 0.0);
                }
            }
        }
        // Energy over aperture equals the aperture sample count exactly.
        let energy: f64 = p.iter().map(|v| v.norm_sqr()).sum();
        assert_relative_eq!(energy, inside as f64, epsilon = 1e-9);
    }

    #[test]
    fn propagation_zero_distance_is_identity() {
        let cfg = small_cfg();
        let p = pupil_function(&ZernikeCoeffs::zeros(4), &cfg, 550e-9).unwrap();
        let out = propagate_angular_spectrum(&p, cfg.pupil_samples, 0.0, 550e-9, cfg.pitch());
        let diff: f64 = p
            .iter()
            .zip(&out)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let norm: f64 = p.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!(diff / norm < 1e-12);
    }

    #[test]
    fn propagation_conserves_band_energy() {
        let cfg = small_cfg();
        let n = cfg.pupil_samples;
        let p = pupil_function(&ZernikeCoeffs::zeros(4), &cfg, 550e-9).unwrap();
        let out = propagate_angular_spectrum(&p, n, cfg.prop_distance, 550e-9, cfg.pitch());
        // |H_s| = 1 on the propagating band, so spectral (= spatial) energy is
        // conserved up to the evanescent part, which is empty at this pitch.
        let e_in: f64 = p.iter().map(|v| v.norm_sqr()).sum();
        let e_out: f64 = out.iter().map(|v| v.norm_sqr()).sum();
        assert!((e_in - e_out).abs() / e_in < 1e-10);
    }

    #[test]
    fn plane_wave_stays_constant() {
        let n = 64;
        let field = vec![Complex::new(0.7, 0.0); n * n];
        let out = propagate_angular_spectrum(&field, n, 0.01, 550e-9, 1e-5);
        for v in &out {
            assert_relative_eq!(v.norm(), 0.7, epsilon = 1e-10);
        }
    }

    #[test]
    fn unaberrated_psf_is_centered_and_symmetric() {
        let cfg = small_cfg();
        let psf = compute_psf(&ZernikeCoeffs::zeros(4), &cfg).unwrap();
        let k = psf.kernel_size();
        for c in 0..psf.channels() {
            let ch = psf.channel(c);
            let sum: f64 = ch.iter().sum();
            assert_relative_eq!(sum, 1.0, epsilon = 1e-6);
            // Peak at kernel center.
            let peak = ch
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(peak, (k / 2) * k + k / 2, "channel {c}");
            // Mirror symmetry about the center sample.
            let mut max_asym: f64 = 0.0;
            for r in 1..k {
                for q in 1..k {
                    let v = ch[r * k + q];
                    let m = ch[(k - r) * k + (k - q)];
                    max_asym = max_asym.max((v - m).abs());
                }
            }
            assert!(max_asym <= 1e-4, "channel {c} asymmetry {max_asym}");
        }
    }

    #[test]
    fn defocus_grows_second_moment_monotonically() {
        let cfg = small_cfg();
        let mut last = -1.0;
        for i in 0..6 {
            let phi4 = i as f64 * 0.5e-7;
            let mut vals = vec![0.0; 4];
            vals[3] = phi4;
            let psf = compute_psf(&ZernikeCoeffs::new(vals).unwrap(), &cfg).unwrap();
            let m2 = psf.second_moment();
            assert!(
                m2 >= last - 1e-9,
                "second moment decreased at phi4={phi4}: {m2} < {last}"
            );
            last = m2;
        }
    }

    #[test]
    fn quantize_height_snaps_to_levels() {
        let q = quantize_height(&[0.0, 3.1e-7, 9.9e-7], 6, 200e-9).unwrap();
        // 3.1e-7 is nearer to 4e-7 than to 2e-7.
        assert_relative_eq!(q.heights[0], 0.0);
        assert_relative_eq!(q.heights[1], 4e-7, epsilon = 1e-15);
        assert_relative_eq!(q.heights[2], 1e-6, epsilon = 1e-15);
        assert!(!q.quantization_loss);
    }

    #[test]
    fn quantize_height_zero_profile() {
        let q = quantize_height(&[0.0; 16], 6, 200e-9).unwrap();
        assert!(q.heights.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quantize_height_flags_excess_range() {
        // Span 1e-6; 50% over is 1.5e-6; 2e-6 must trip the warning.
        let q = quantize_height(&[0.0, 2e-6], 6, 200e-9).unwrap();
        assert!(q.quantization_loss);
        assert_relative_eq!(q.heights[1], 1e-6, epsilon = 1e-15);
    }

    #[test]
    fn measured_psf_ingestion_rules() {
        // Small negatives clamp, big negatives reject, zero channel rejects.
        let k = 4;
        let mut data = vec![1.0 / 16.0; k * k];
        data[3] = -5e-7;
        let psf = Psf::from_raw(1, k, data, 1e-5).unwrap();
        assert!(psf.channel(0).iter().all(|&v| v >= 0.0));
        let sum: f64 = psf.channel(0).iter().sum();
        assert_relative_eq!(sum, 1.0, epsilon = 1e-12);

        let mut bad = vec![1.0 / 16.0; k * k];
        bad[0] = -1e-3;
        assert!(Psf::from_raw(1, k, bad, 1e-5).is_err());

        assert!(Psf::from_raw(1, k, vec![0.0; k * k], 1e-5).is_err());
    }

    #[test]
    fn coefficient_cap_enforced() {
        let mut vals = vec![0.0; 6];
        vals[3] = 11.0 * LAMBDA_REF;
        assert!(ZernikeCoeffs::new(vals).is_err());
    }
}
