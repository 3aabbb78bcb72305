//! TOML configuration with strict parsing: unknown keys are rejected, every
//! parameter falls back to the module default when absent.

use crate::error::{CliError, Result};
use crate::io;
use nowa_core::maskopt::MaskObjective;
use nowa_core::operator::{Band, DEFAULT_TAU_REL, DEFAULT_WIENER_SNR};
use nowa_core::optics::{OpticalConfig, ZernikeCoeffs};
use nowa_core::watermark::{Reconstruction, DEFAULT_TARGET_PSNR};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const CONFIG_ENV: &str = "NOWA_CONFIG";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub optics: OpticsSection,
    #[serde(default)]
    pub operator: OperatorSection,
    #[serde(default)]
    pub watermark: WatermarkSection,
    #[serde(default)]
    pub detector: DetectorSection,
    #[serde(default)]
    pub maskopt: MaskoptSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpticsSection {
    pub pupil_samples: usize,
    pub mask_width: f64,
    pub focal_length: f64,
    pub prop_distance: f64,
    pub wavelengths: Vec<f64>,
    pub mask_index: f64,
    pub aperture_radius_frac: f64,
    pub kernel_size: usize,
    /// Path to a mask design JSON; resolved relative to the config file.
    pub mask_file: Option<PathBuf>,
    /// Inline coefficients in meters, Noll order starting at 1. Overridden
    /// by mask_file and by the --mask flag.
    pub zernike: Option<Vec<f64>>,
}

impl Default for OpticsSection {
    fn default() -> Self {
        let d = OpticalConfig::default();
        Self {
            pupil_samples: d.pupil_samples,
            mask_width: d.mask_width,
            focal_length: d.focal_length,
            prop_distance: d.prop_distance,
            wavelengths: d.wavelengths,
            mask_index: d.mask_index,
            aperture_radius_frac: d.aperture_radius_frac,
            kernel_size: d.kernel_size,
            mask_file: None,
            zernike: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OperatorSection {
    pub tau_rel: f64,
    /// Restricts declared nulls to the low-frequency half of the spectrum so
    /// the signature survives JPEG quantization.
    pub jpeg_hardening: bool,
    /// Explicit band override [lo, hi] in Nyquist fractions; wins over
    /// jpeg_hardening when set.
    pub band: Option<[f64; 2]>,
    /// Capture noise std in [0,1] units used by protect/bench.
    pub noise_sigma: f64,
}

impl Default for OperatorSection {
    fn default() -> Self {
        Self {
            tau_rel: DEFAULT_TAU_REL,
            jpeg_hardening: false,
            band: None,
            noise_sigma: 2.0 / 255.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WatermarkSection {
    pub target_psnr: f64,
    pub recon: Reconstruction,
    pub wiener_snr: f64,
}

impl Default for WatermarkSection {
    fn default() -> Self {
        Self {
            target_psnr: DEFAULT_TARGET_PSNR,
            recon: Reconstruction::Wiener,
            wiener_snr: DEFAULT_WIENER_SNR,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSection {
    pub window: usize,
    pub stride: usize,
    pub theta_pix: f64,
    pub theta_global: f64,
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            window: nowa_core::detector::DEFAULT_WINDOW,
            stride: nowa_core::detector::DEFAULT_STRIDE,
            theta_pix: nowa_core::detector::DEFAULT_THETA_PIX,
            theta_global: nowa_core::detector::DEFAULT_THETA_GLOBAL,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskoptSection {
    pub w_capacity: f64,
    pub w_uniformity: f64,
    pub w_penalty: f64,
    pub budget: usize,
    pub restarts: usize,
    pub seed: u64,
    pub image_size: usize,
    pub max_height_span: Option<f64>,
    /// Key seed (hex, 64 chars) for the uniformity reference signature.
    pub reference_key_hex: Option<String>,
}

impl Default for MaskoptSection {
    fn default() -> Self {
        let d = MaskObjective::default();
        Self {
            w_capacity: d.w_capacity,
            w_uniformity: d.w_uniformity,
            w_penalty: d.w_penalty,
            budget: nowa_core::maskopt::DEFAULT_BUDGET,
            restarts: nowa_core::maskopt::DEFAULT_RESTARTS,
            seed: 0,
            image_size: d.image_size,
            max_height_span: None,
            reference_key_hex: None,
        }
    }
}

impl Config {
    /// Loads from `--config`, falling back to the NOWA_CONFIG environment
    /// variable, falling back to all defaults.
    pub fn load(flag: Option<&Path>) -> Result<(Self, Option<PathBuf>)> {
        let path = match flag {
            Some(p) => Some(p.to_path_buf()),
            None => std::env::var_os(CONFIG_ENV).map(PathBuf::from),
        };
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
                let cfg: Config = toml::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                cfg.validate()?;
                Ok((cfg, Some(p)))
            }
            None => Ok((Config::default(), None)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optical_config().validate().map_err(CliError::Core)?;
        if !(self.operator.tau_rel.is_finite() && self.operator.tau_rel > 0.0) {
            return Err(CliError::Config("operator.tau_rel must be > 0".into()));
        }
        if self.operator.noise_sigma < 0.0 {
            return Err(CliError::Config("operator.noise_sigma must be >= 0".into()));
        }
        if let Some([lo, hi]) = self.operator.band {
            if !(lo >= 0.0 && hi > lo) {
                return Err(CliError::Config(format!(
                    "operator.band [{lo}, {hi}] must satisfy 0 <= lo < hi"
                )));
            }
        }
        if self.detector.window == 0 || self.detector.stride == 0 {
            return Err(CliError::Config("detector.window/stride must be positive".into()));
        }
        Ok(())
    }

    pub fn optical_config(&self) -> OpticalConfig {
        OpticalConfig {
            pupil_samples: self.optics.pupil_samples,
            mask_width: self.optics.mask_width,
            focal_length: self.optics.focal_length,
            prop_distance: self.optics.prop_distance,
            wavelengths: self.optics.wavelengths.clone(),
            mask_index: self.optics.mask_index,
            aperture_radius_frac: self.optics.aperture_radius_frac,
            kernel_size: self.optics.kernel_size,
        }
    }

    pub fn band(&self) -> Option<Band> {
        if let Some([lo, hi]) = self.operator.band {
            Some(Band { lo, hi })
        } else if self.operator.jpeg_hardening {
            Some(Band::JPEG_HARDENED)
        } else {
            Some(Band::FULL)
        }
    }

    /// Mask coefficients: --mask flag wins, then mask_file, then inline
    /// zernike, then the zero mask.
    pub fn mask_coeffs(
        &self,
        flag: Option<&Path>,
        config_dir: Option<&Path>,
    ) -> Result<ZernikeCoeffs> {
        if let Some(p) = flag {
            return io::load_mask_json(p);
        }
        if let Some(file) = &self.optics.mask_file {
            let resolved = match config_dir {
                Some(dir) if file.is_relative() => dir.join(file),
                _ => file.clone(),
            };
            return io::load_mask_json(&resolved);
        }
        if let Some(values) = &self.optics.zernike {
            return ZernikeCoeffs::new(values.clone()).map_err(CliError::Core);
        }
        Ok(ZernikeCoeffs::zeros(12))
    }

    pub fn mask_objective(&self) -> Result<MaskObjective> {
        let reference_key = match &self.maskopt.reference_key_hex {
            Some(hex) => parse_key_hex(hex)?,
            None => [0u8; 32],
        };
        Ok(MaskObjective {
            w_capacity: self.maskopt.w_capacity,
            w_uniformity: self.maskopt.w_uniformity,
            w_penalty: self.maskopt.w_penalty,
            tau_rel: self.operator.tau_rel,
            band: self.band(),
            reference_key,
            image_size: self.maskopt.image_size,
            window: self.detector.window,
            stride: self.detector.stride,
            max_height_span: self.maskopt.max_height_span,
        })
    }

    /// Round-trippable echo of the effective configuration for reports.
    pub fn echo(&self) -> BTreeMap<String, serde_json::Value> {
        let value = serde_json::to_value(self).expect("config serializes");
        match value {
            serde_json::Value::Object(map) => map.into_iter().collect(),
            _ => BTreeMap::new(),
        }
    }
}

fn parse_key_hex(hex: &str) -> Result<[u8; 32]> {
    if hex.len() != 64 || !hex.chars().all(|c| c.is_ascii_hexdigit()) {
        return Err(CliError::Config(
            "reference_key_hex must be 64 hex characters".into(),
        ));
    }
    let mut out = [0u8; 32];
    for (i, chunk) in hex.as_bytes().chunks_exact(2).enumerate() {
        let s = std::str::from_utf8(chunk).unwrap();
        out[i] = u8::from_str_radix(s, 16).unwrap();
    }
    Ok(out)
}
