//! Minimal baseline-JPEG round-trip: BT.601 full-range color transform,
//! 4:4:4 (no chroma subsampling), 8x8 DCT-II, Annex-K example tables scaled
//! by the standard quality mapping. The entropy-coding stage is lossless and
//! therefore skipped; quantization is the only source of error.

use crate::error::{Error, Result};
use crate::image::Image;
use std::f64::consts::PI;

#[rustfmt::skip]
const LUMA_BASE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
];

#[rustfmt::skip]
const CHROMA_BASE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Annex-K table scaled by the standard quality factor mapping.
pub fn quant_table(base: &[u16; 64], quality: u32) -> [f64; 64] {
    let q = quality.clamp(1, 100);
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0.0; 64];
    for (o, &b) in out.iter_mut().zip(base.iter()) {
        let v = (u32::from(b) * scale + 50) / 100;
        *o = v.clamp(1, 255) as f64;
    }
    out
}

/// 8-point DCT-II basis with JPEG normalization.
fn cos_table() -> [[f64; 8]; 8] {
    let mut t = [[0.0; 8]; 8];
    for (u, row) in t.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            *v = ((2.0 * x as f64 + 1.0) * u as f64 * PI / 16.0).cos();
        }
    }
    t
}

fn c(u: usize) -> f64 {
    if u == 0 {
        std::f64::consts::FRAC_1_SQRT_2
    } else {
        1.0
    }
}

fn fdct8x8(block: &[f64; 64], cos: &[[f64; 8]; 8]) -> [f64; 64] {
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            let mut sum = 0.0;
            for y in 0..8 {
                for x in 0..8 {
                    sum += block[y * 8 + x] * cos[u][x] * cos[v][y];
                }
            }
            out[v * 8 + u] = 0.25 * c(u) * c(v) * sum;
        }
    }
    out
}

fn idct8x8(coeff: &[f64; 64], cos: &[[f64; 8]; 8]) -> [f64; 64] {
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            let mut sum = 0.0;
            for v in 0..8 {
                for u in 0..8 {
                    sum += c(u) * c(v) * coeff[v * 8 + u] * cos[u][x] * cos[v][y];
                }
            }
            out[y * 8 + x] = 0.25 * sum;
        }
    }
    out
}

/// Quantize/dequantize every 8x8 block of one padded plane (values already
/// level-shifted to [-128, 127] scale).
fn codec_plane(plane: &mut [f64], h: usize, w: usize, qtab: &[f64; 64], cos: &[[f64; 8]; 8]) {
    let mut block = [0.0; 64];
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            for y in 0..8 {
                for x in 0..8 {
                    block[y * 8 + x] = plane[(by + y) * w + (bx + x)];
                }
            }
            let mut coeff = fdct8x8(&block, cos);
            for (v, q) in coeff.iter_mut().zip(qtab.iter()) {
                *v = (*v / q).round() * q;
            }
            let rec = idct8x8(&coeff, cos);
            for y in 0..8 {
                for x in 0..8 {
                    plane[(by + y) * w + (bx + x)] = rec[y * 8 + x];
                }
            }
        }
    }
}

/// Replicate-pads a plane to multiple-of-8 dimensions.
fn pad_plane(src: &[f64], h: usize, w: usize, ph: usize, pw: usize) -> Vec<f64> {
    let mut out = vec![0.0; ph * pw];
    for r in 0..ph {
        let sr = r.min(h - 1);
        for q in 0..pw {
            let sq = q.min(w - 1);
            out[r * pw + q] = src[sr * w + sq];
        }
    }
    out
}

/// Simulated encode/decode at the given quality. Grayscale images use the
/// luminance path only.
pub fn jpeg_roundtrip(img: &Image, quality: u32) -> Result<Image> {
    if !(1..=100).contains(&quality) {
        return Err(Error::Precondition(format!(
            "quality must be in [1,100], got {quality}"
        )));
    }
    let (channels, h, w) = img.shape();
    let ph = h.div_ceil(8) * 8;
    let pw = w.div_ceil(8) * 8;
    let cos = cos_table();
    let luma_q = quant_table(&LUMA_BASE, quality);
    let chroma_q = quant_table(&CHROMA_BASE, quality);

    // To YCbCr planes in [-128,127] 8-bit scale.
    let mut planes: Vec<Vec<f64>> = Vec::with_capacity(channels);
    if channels == 3 {
        let (r, g, b) = (img.channel(0), img.channel(1), img.channel(2));
        let mut y = vec![0.0; h * w];
        let mut cb = vec![0.0; h * w];
        let mut cr = vec![0.0; h * w];
        for i in 0..h * w {
            let yv = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
            let cbv = -0.168736 * r[i] - 0.331264 * g[i] + 0.5 * b[i] + 0.5;
            let crv = 0.5 * r[i] - 0.418688 * g[i] - 0.081312 * b[i] + 0.5;
            y[i] = yv * 255.0 - 128.0;
            cb[i] = cbv * 255.0 - 128.0;
            cr[i] = crv * 255.0 - 128.0;
        }
        planes.push(y);
        planes.push(cb);
        planes.push(cr);
    } else {
        planes.push(img.channel(0).iter().map(|&v| v * 255.0 - 128.0).collect());
    }

    for (ci, plane) in planes.iter_mut().enumerate() {
        let qtab = if ci == 0 { &luma_q } else { &chroma_q };
        let mut padded = pad_plane(plane, h, w, ph, pw);
        codec_plane(&mut padded, ph, pw, qtab, &cos);
        for r in 0..h {
            plane[r * w..(r + 1) * w].copy_from_slice(&padded[r * pw..r * pw + w]);
        }
    }

    let mut data = vec![0.0; channels * h * w];
    if channels == 3 {
        for i in 0..h * w {
            let y = (planes[0][i] + 128.0) / 255.0;
            let cb = (planes[1][i] + 128.0) / 255.0 - 0.5;
            let cr = (planes[2][i] + 128.0) / 255.0 - 0.5;
            data[i] = (y + 1.402 * cr).clamp(0.0, 1.0);
            data[h * w + i] = (y - 0.344136 * cb - 0.714136 * cr).clamp(0.0, 1.0);
            data[2 * h * w + i] = (y + 1.772 * cb).clamp(0.0, 1.0);
        }
    } else {
        for i in 0..h * w {
            data[i] = ((planes[0][i] + 128.0) / 255.0).clamp(0.0, 1.0);
        }
    }
    Image::from_planar(channels, h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::psnr;
    use crate::rng::{chacha_from_u64, NormalStream};

    fn textured(channels: usize, n: usize, seed: u64) -> Image {
        let mut stream = NormalStream::new(chacha_from_u64(seed));
        let data: Vec<f64> = (0..channels * n * n)
            .map(|i| {
                let r = ((i / n) % n) as f64 / n as f64;
                let c = (i % n) as f64 / n as f64;
                (0.5 + 0.25 * (9.0 * r + 3.0 * c).sin() + 0.05 * stream.sample()).clamp(0.0, 1.0)
            })
            .collect();
        Image::from_planar(channels, n, n, data).unwrap()
    }

    #[test]
    fn quality_mapping_matches_standard() {
        // Q=50 leaves the base table unchanged; Q=100 collapses to all ones.
        let q50 = quant_table(&LUMA_BASE, 50);
        for (a, &b) in q50.iter().zip(LUMA_BASE.iter()) {
            assert_eq!(*a, f64::from(b));
        }
        let q100 = quant_table(&LUMA_BASE, 100);
        assert!(q100.iter().all(|&v| v == 1.0));
        // Q=10: scale 500 -> entry 16 becomes 80.
        assert_eq!(quant_table(&LUMA_BASE, 10)[0], 80.0);
    }

    #[test]
    fn q100_mid_gray_error_within_quant_floor() {
        let img = Image::constant(3, 64, 64, 0.5);
        let out = jpeg_roundtrip(&img, 100).unwrap();
        let max_err = out
            .data()
            .iter()
            .zip(img.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err <= 2.0 / 255.0, "max err {max_err}");
    }

    #[test]
    fn constant_image_survives_any_quality() {
        let img = Image::constant(1, 48, 48, 0.25);
        for q in [1, 30, 70, 100] {
            let out = jpeg_roundtrip(&img, q).unwrap();
            let spread = out
                .data()
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            // DC-only blocks are representable; error is one quantizer round.
            assert!(spread.1 - spread.0 <= 1e-9, "q={q} spread {spread:?}");
            assert!((out.data()[0] - 0.25).abs() <= 4.0 / 255.0);
        }
    }

    #[test]
    fn higher_quality_gives_higher_psnr() {
        let img = textured(3, 64, 5);
        let p70 = psnr(&jpeg_roundtrip(&img, 70).unwrap(), &img);
        let p90 = psnr(&jpeg_roundtrip(&img, 90).unwrap(), &img);
        assert!(p90 >= p70, "psnr(Q=90)={p90} < psnr(Q=70)={p70}");
    }

    #[test]
    fn non_multiple_of_8_dimensions_roundtrip() {
        let img = textured(1, 50, 7);
        let out = jpeg_roundtrip(&img, 90).unwrap();
        assert_eq!(out.shape(), img.shape());
        assert!(psnr(&out, &img) > 25.0);
    }

    #[test]
    fn recompression_contracts() {
        // encode(decode(encode(x))) changes the image by no more than the
        // first pass, per image.
        for trial in 0..20 {
            let img = textured(1, 48, 100 + trial);
            let once = jpeg_roundtrip(&img, 80).unwrap();
            let twice = jpeg_roundtrip(&once, 80).unwrap();
            let d1 = once.lin_comb(1.0, &img, -1.0).unwrap().norm_l2();
            let d2 = twice.lin_comb(1.0, &once, -1.0).unwrap().norm_l2();
            assert!(d2 <= d1 + 1e-9, "trial {trial}: {d2} > {d1}");
        }
    }

    #[test]
    fn rejects_out_of_range_quality() {
        let img = Image::constant(1, 32, 32, 0.5);
        assert!(jpeg_roundtrip(&img, 0).is_err());
        assert!(jpeg_roundtrip(&img, 101).is_err());
    }
}
