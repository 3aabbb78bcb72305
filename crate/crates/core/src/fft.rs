//! 2D FFT helpers on row-major complex buffers.
//!
//! Plans are cached globally; `process_with_scratch` takes `&self`, so plan
//! lookup is the only synchronized step and concurrent transforms never share
//! mutable workspace.

use num_complex::Complex;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

type PlanKey = (usize, bool);
type PlanCache = Mutex<HashMap<PlanKey, Arc<dyn Fft<f64>>>>;

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static PLANS: OnceLock<PlanCache> = OnceLock::new();
    let plans = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = plans.lock().expect("fft plan cache poisoned");
    guard
        .entry((len, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            planner.plan_fft(
                len,
                if inverse {
                    FftDirection::Inverse
                } else {
                    FftDirection::Forward
                },
            )
        })
        .clone()
}

fn transform_2d(buf: &mut [Complex<f64>], height: usize, width: usize, inverse: bool) {
    assert_eq!(buf.len(), height * width, "buffer/shape mismatch");
    let row_fft = plan(width, inverse);
    let mut scratch = vec![Complex::default(); row_fft.get_inplace_scratch_len()];
    for row in buf.chunks_exact_mut(width) {
        row_fft.process_with_scratch(row, &mut scratch);
    }

    let col_fft = plan(height, inverse);
    let mut col = vec![Complex::default(); height];
    scratch.resize(col_fft.get_inplace_scratch_len(), Complex::default());
    for c in 0..width {
        for r in 0..height {
            col[r] = buf[r * width + c];
        }
        col_fft.process_with_scratch(&mut col, &mut scratch);
        for r in 0..height {
            buf[r * width + c] = col[r];
        }
    }
}

/// Unnormalized forward 2D DFT, in place.
pub fn fft2(buf: &mut [Complex<f64>], height: usize, width: usize) {
    transform_2d(buf, height, width, false);
}

/// Inverse 2D DFT, in place, normalized by 1/(height*width).
pub fn ifft2(buf: &mut [Complex<f64>], height: usize, width: usize) {
    transform_2d(buf, height, width, true);
    let scale = 1.0 / (height * width) as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// Forward DFT of a real buffer.
pub fn fft2_real(data: &[f64], height: usize, width: usize) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = data.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft2(&mut buf, height, width);
    buf
}

/// Real part of the inverse DFT (inputs are expected conjugate-symmetric up
/// to roundoff).
pub fn ifft2_to_real(mut buf: Vec<Complex<f64>>, height: usize, width: usize) -> Vec<f64> {
    ifft2(&mut buf, height, width);
    buf.into_iter().map(|v| v.re).collect()
}

/// DFT sample frequency for bin `i` of an `n`-point transform, in cycles per
/// sample, matching the usual fftfreq layout.
pub fn fft_freq(i: usize, n: usize) -> f64 {
    let half = n / 2;
    if i < half + n % 2 {
        i as f64 / n as f64
    } else {
        (i as f64 - n as f64) / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_identity() {
        let h = 8;
        let w = 16;
        let data: Vec<f64> = (0..h * w).map(|i| ((i * 37) % 11) as f64 * 0.1).collect();
        let spec = fft2_real(&data, h, w);
        let back = ifft2_to_real(spec, h, w);
        for (a, b) in data.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dc_bin_is_sum() {
        let h = 4;
        let w = 4;
        let data = vec![0.25; h * w];
        let spec = fft2_real(&data, h, w);
        assert!((spec[0].re - 4.0).abs() < 1e-12);
        assert!(spec[0].im.abs() < 1e-12);
    }

    #[test]
    fn fft_freq_layout() {
        assert_eq!(fft_freq(0, 8), 0.0);
        assert_eq!(fft_freq(3, 8), 3.0 / 8.0);
        assert_eq!(fft_freq(4, 8), -0.5);
        assert_eq!(fft_freq(7, 8), -1.0 / 8.0);
    }

    #[test]
    fn parseval_holds() {
        let h = 16;
        let w = 8;
        let data: Vec<f64> = (0..h * w).map(|i| (i as f64 * 0.7).cos()).collect();
        let spec = fft2_real(&data, h, w);
        let space: f64 = data.iter().map(|v| v * v).sum();
        let freq: f64 = spec.iter().map(|v| v.norm_sqr()).sum::<f64>() / (h * w) as f64;
        assert!((space - freq).abs() < 1e-9 * space.max(1.0));
    }
}
