//! Zernike polynomials in Noll ordering with unit-RMS normalization.

use crate::error::{Error, Result};

/// Highest supported Noll index.
pub const MAX_NOLL: usize = 36;

/// Noll index -> (radial order n, signed azimuthal order m).
///
/// Within each n, |m| increases; even j carries the cosine (m >= 0) term and
/// odd j the sine (m <= 0) term.
pub fn noll_to_nm(j: usize) -> Result<(u32, i32)> {
    if j == 0 || j > MAX_NOLL {
        return Err(Error::UnsupportedMode(j));
    }
    let mut n = 0u32;
    let mut j1 = j - 1;
    while j1 > n as usize {
        n += 1;
        j1 -= n as usize;
    }
    let m_abs = (n % 2) + 2 * ((j1 as u32 + (n + 1) % 2) / 2);
    let m = if j.is_multiple_of(2) {
        m_abs as i32
    } else {
        -(m_abs as i32)
    };
    Ok((n, m))
}

fn factorial(k: u32) -> f64 {
    (1..=k as u64).product::<u64>() as f64
}

/// Radial polynomial R_n^{|m|}(rho).
fn radial(n: u32, m_abs: u32, rho: f64) -> f64 {
    let mut sum = 0.0;
    for k in 0..=((n - m_abs) / 2) {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let num = factorial(n - k);
        let den = factorial(k) * factorial((n + m_abs) / 2 - k) * factorial((n - m_abs) / 2 - k);
        sum += sign * num / den * rho.powi((n - 2 * k) as i32);
    }
    sum
}

/// Noll-normalized Zernike value at polar coordinates (rho, theta); zero
/// outside the unit disk. Unit RMS over the continuous disk.
pub fn evaluate(j: usize, rho: f64, theta: f64) -> Result<f64> {
    let (n, m) = noll_to_nm(j)?;
    if rho > 1.0 {
        return Ok(0.0);
    }
    let m_abs = m.unsigned_abs();
    let r = radial(n, m_abs, rho);
    let norm = if m == 0 {
        ((n + 1) as f64).sqrt()
    } else {
        (2.0 * (n + 1) as f64).sqrt()
    };
    let ang = if m > 0 {
        (m_abs as f64 * theta).cos()
    } else if m < 0 {
        (m_abs as f64 * theta).sin()
    } else {
        1.0
    };
    Ok(norm * r * ang)
}

/// Square sampling grid mapping the aperture onto the unit disk.
///
/// `radius` is the aperture radius in grid samples; sample (i,k) sits at
/// centered coordinates ((i - n/2), (k - n/2)) in samples.
#[derive(Debug, Clone)]
pub struct DiskGrid {
    pub n: usize,
    pub radius: f64,
}

impl DiskGrid {
    pub fn new(n: usize, radius: f64) -> Self {
        Self { n, radius }
    }

    /// (rho, theta) of sample (row, col); rho > 1 outside the aperture.
    pub fn polar(&self, row: usize, col: usize) -> (f64, f64) {
        let half = (self.n / 2) as f64;
        let y = row as f64 - half;
        let x = col as f64 - half;
        let rho = (x * x + y * y).sqrt() / self.radius;
        (rho, y.atan2(x))
    }

    pub fn inside(&self, row: usize, col: usize) -> bool {
        self.polar(row, col).0 <= 1.0
    }
}

/// Mode j sampled on the grid, zero outside the disk. Row-major n x n.
pub fn mode(j: usize, grid: &DiskGrid) -> Result<Vec<f64>> {
    noll_to_nm(j)?;
    let n = grid.n;
    let mut out = vec![0.0; n * n];
    for row in 0..n {
        for col in 0..n {
            let (rho, theta) = grid.polar(row, col);
            if rho <= 1.0 {
                out[row * n + col] = evaluate(j, rho, theta)?;
            }
        }
    }
    Ok(out)
}
