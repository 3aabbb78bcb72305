//! Core algorithms for null-space optical watermarking: wave-optics PSF
//! simulation, the circulant imaging operator with exact null/range
//! projectors, keyed fragile watermark embedding, windowed-correlation tamper
//! localization, an attack/degradation harness, and derivative-free phase
//! mask design.
//!
//! Everything here is pure-memory and deterministic given explicit keys and
//! seeds; file formats and the CLI live in the companion `nowa-cli` crate.

pub mod attacks;
pub mod detector;
pub mod error;
pub mod fft;
pub mod image;
pub mod jpeg;
pub mod key;
pub mod maskopt;
pub mod operator;
pub mod optics;
pub mod rng;
pub mod synth;
pub mod watermark;
pub mod zernike;

pub use error::{Error, Result};
pub use image::Image;
pub use num_complex;
pub use key::SecretKey;
pub use operator::{Band, NoiseModel, Otf};
pub use optics::{OpticalConfig, Psf, ZernikeCoeffs};
