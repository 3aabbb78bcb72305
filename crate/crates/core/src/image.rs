//! Planar real-valued raster, the pixel-domain currency of the pipeline.
//!
//! Data is stored channel-major (planar) so per-channel FFT processing
//! never strides. Values are nominally in [0,1]; intermediate results of
//! linear operators may leave that range and are only clamped at I/O
//! boundaries.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MIN_DIM: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image from planar data; dimensions are validated, pixel
    /// range is not (use [`Image::clamped`] at I/O boundaries).
    pub fn from_planar(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if height < MIN_DIM || width < MIN_DIM {
            return Err(Error::InvalidImage(format!(
                "dimensions must be >= {MIN_DIM}, got {height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::InvalidImage(format!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidImage("non-finite pixel value".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn constant(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn pixels_per_channel(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.pixels_per_channel();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.pixels_per_channel();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[(c * self.height + row) * self.width + col]
    }

    pub fn set(&mut self, c: usize, row: usize, col: usize, value: f64) {
        self.data[(c * self.height + row) * self.width + col] = value;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.shape() == other.shape()
    }

    /// Copy with every value clamped into [0,1].
    pub fn clamped(&self) -> Image {
        let mut out = self.clone();
        for v in out.data.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        let mut out = self.clone();
        for v in out.data.iter_mut() {
            *v = f(*v);
        }
        out
    }

    /// Elementwise a*self + b*other.
    pub fn lin_comb(&self, a: f64, other: &Image, b: f64) -> Result<Image> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", self.shape()),
                got: format!("{:?}", other.shape()),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Image {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data,
        })
    }

    pub fn dot(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| x * y)
            .sum()
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Mean squared error between two same-shape images.
pub fn mse(a: &Image, b: &Image) -> f64 {
    debug_assert!(a.same_shape(b));
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64
}

/// Peak signal-to-noise ratio in dB, peak value 1.0. Identical images give +inf.
pub fn psnr(a: &Image, b: &Image) -> f64 {
    let m = mse(a, b);
    if m == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * m.log10()
    }
}

/// Normalized cross-correlation of the mean-removed flattened images; 0 when
/// either side has no variance.
pub fn ncc(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (x, y) in a.iter().zip(b) {
        let xa = x - ma;
        let yb = y - mb;
        num += xa * yb;
        da += xa * xa;
        db += yb * yb;
    }
    if da <= 0.0 || db <= 0.0 {
        return 0.0;
    }
    num / (da.sqrt() * db.sqrt())
}
