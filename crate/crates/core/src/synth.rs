//! Seeded procedural scenes for benchmarks and tests: mixtures of low-pass
//! filtered noise, oriented gradients, and soft blobs, kept away from the
//! clamp boundaries so embedding stays in its linear regime.

use crate::fft::{fft2, fft_freq, ifft2};
use crate::image::Image;
use crate::rng::{chacha_from_u64, NormalStream};
use num_complex::Complex;
use rand::{Rng, RngCore};

/// Deterministic textured scene. Identical (shape, seed) pairs produce
/// bit-identical images.
pub fn synthetic_scene(channels: usize, height: usize, width: usize, seed: u64) -> Image {
    let mut rng = chacha_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut luma = filtered_noise(height, width, &mut rng);

    // Oriented gradient.
    let angle = rng.gen_range(0.0..std::f64::consts::PI);
    let (s, c) = angle.sin_cos();
    let amp = rng.gen_range(0.1..0.3);
    for r in 0..height {
        for q in 0..width {
            let u = (r as f64 / height as f64 - 0.5) * s + (q as f64 / width as f64 - 0.5) * c;
            luma[r * width + q] += amp * u;
        }
    }

    // A few soft blobs.
    let blobs = 2 + (rng.next_u32() % 3) as usize;
    for _ in 0..blobs {
        let cy = rng.gen_range(0.0..height as f64);
        let cx = rng.gen_range(0.0..width as f64);
        let sigma = rng.gen_range(0.05..0.2) * height as f64;
        let amp = rng.gen_range(-0.25..0.25);
        for r in 0..height {
            for q in 0..width {
                let d2 = ((r as f64 - cy).powi(2) + (q as f64 - cx).powi(2)) / (2.0 * sigma * sigma);
                if d2 < 12.0 {
                    luma[r * width + q] += amp * (-d2).exp();
                }
            }
        }
    }

    // Normalize the luma field into [0.08, 0.92].
    let (lo, hi) = luma
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let span = (hi - lo).max(1e-12);
    for v in luma.iter_mut() {
        *v = 0.08 + 0.84 * (*v - lo) / span;
    }

    let mut data = Vec::with_capacity(channels * height * width);
    if channels == 1 {
        data = luma;
    } else {
        // Correlated channels: shared luma plus a smooth chroma tint.
        let mut stream = NormalStream::new(chacha_from_u64(seed ^ 0x51ed_2701));
        for _ in 0..channels {
            let tint = 0.9 + 0.1 * stream.sample().tanh();
            let bias = 0.03 * stream.sample().tanh();
            data.extend(luma.iter().map(|&v| (tint * v + bias).clamp(0.02, 0.98)));
        }
    }
    Image::from_planar(channels, height, width, data).expect("synthetic shape is valid")
}

/// White noise low-passed with a Gaussian spectral envelope of random width.
fn filtered_noise(height: usize, width: usize, rng: &mut rand_chacha::ChaCha20Rng) -> Vec<f64> {
    let cutoff = rng.gen_range(0.02..0.12); // cycles/sample
    let mut stream = NormalStream::new(chacha_from_u64(rng.next_u64()));
    let mut spec: Vec<Complex<f64>> = (0..height * width)
        .map(|_| Complex::new(stream.sample(), 0.0))
        .collect();
    fft2(&mut spec, height, width);
    for r in 0..height {
        let fy = fft_freq(r, height);
        for q in 0..width {
            let fx = fft_freq(q, width);
            let f2 = fx * fx + fy * fy;
            spec[r * width + q] *= (-f2 / (2.0 * cutoff * cutoff)).exp();
        }
    }
    ifft2(&mut spec, height, width);
    spec.into_iter().map(|v| v.re).collect()
}
