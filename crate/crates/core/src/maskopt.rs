//! Derivative-free phase-mask design: shapes the operator's null space for
//! watermark capacity, spatial uniformity of the signature, and
//! reconstruction conditioning.
//!
//! Nelder-Mead over the Noll 4..K coefficients (piston is invisible in the
//! intensity, tip/tilt only translate the PSF) with seeded random restarts.

use crate::error::{Error, Result};
use crate::key::SecretKey;
use crate::operator::{Band, Otf};
use crate::optics::{compute_psf, OpticalConfig, ZernikeCoeffs, COEFF_CAP, LAMBDA_REF};
use crate::rng::chacha_from_u64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const DEFAULT_BUDGET: usize = 200;
pub const DEFAULT_RESTARTS: usize = 5;
const SIMPLEX_STEP: f64 = 0.5 * LAMBDA_REF;

/// Weighted proxy objective for mask quality (lower is better).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskObjective {
    /// Capacity weight.
    pub w_capacity: f64,
    /// Uniformity weight.
    pub w_uniformity: f64,
    /// Passband-conditioning penalty weight.
    pub w_penalty: f64,
    pub tau_rel: f64,
    pub band: Option<Band>,
    /// Key generating the reference signature for the uniformity term.
    pub reference_key: [u8; 32],
    /// Operator build size for evaluation (square images).
    pub image_size: usize,
    /// Detector window/stride used by the uniformity term.
    pub window: usize,
    pub stride: usize,
    /// Fabrication guard: reject masks whose height range exceeds this span
    /// (the 6-level / 200 nm process cannot reproduce them). None disables.
    pub max_height_span: Option<f64>,
}

impl Default for MaskObjective {
    fn default() -> Self {
        Self {
            w_capacity: 1.0,
            w_uniformity: 0.5,
            w_penalty: 0.25,
            tau_rel: crate::operator::DEFAULT_TAU_REL,
            band: Some(Band::FULL),
            reference_key: [0u8; 32],
            image_size: 256,
            window: 16,
            stride: 8,
            max_height_span: None,
        }
    }
}

impl MaskObjective {
    /// Guard ratio for the conditioning penalty: passband bins with
    /// |H| below guard_ratio * max|H| are penalized logarithmically.
    pub fn guard_ratio(&self) -> f64 {
        10.0 * self.tau_rel
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [self.w_capacity, self.w_uniformity, self.w_penalty];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Precondition("weights must be >= 0".into()));
        }
        if ws.iter().all(|&w| w == 0.0) {
            return Err(Error::Precondition("weights must not all be zero".into()));
        }
        Ok(())
    }
}

/// Objective components at one evaluation point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub total: f64,
    pub capacity: f64,
    pub uniformity: f64,
    pub penalty: f64,
}

impl ObjectiveBreakdown {
    fn rejected() -> Self {
        Self {
            total: f64::INFINITY,
            capacity: 0.0,
            uniformity: 0.0,
            penalty: f64::INFINITY,
        }
    }
}

/// Evaluates the proxy objective: -(w_c C + w_u U) + w_n P, where C is the
/// in-band null fraction, U the min/mean window energy of the projected
/// reference signature, and P the passband conditioning penalty. Degenerate
/// PSFs (crop guard, no energy) evaluate to +inf.
pub fn objective(
    coeffs: &ZernikeCoeffs,
    cfg: &OpticalConfig,
    obj: &MaskObjective,
) -> Result<ObjectiveBreakdown> {
    obj.validate()?;
    if let Some(span) = obj.max_height_span {
        let h = crate::optics::height_profile(coeffs, cfg)?;
        let range = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - h.iter().cloned().fold(f64::INFINITY, f64::min);
        if range > span {
            return Ok(ObjectiveBreakdown::rejected());
        }
    }
    let psf = match compute_psf(coeffs, cfg) {
        Ok(p) => p,
        Err(Error::PsfClipping { .. }) | Err(Error::DegeneratePsf(_)) => {
            return Ok(ObjectiveBreakdown::rejected())
        }
        Err(e) => return Err(e),
    };
    let n = obj.image_size;
    let a = match Otf::build(&psf, (n, n), obj.tau_rel, obj.band) {
        Ok(a) => a,
        Err(Error::DegenerateOperator(_)) => return Ok(ObjectiveBreakdown::rejected()),
        Err(e) => return Err(e),
    };

    let capacity = a.null_capacity();
    let uniformity = uniformity_term(&a, obj)?;
    let penalty = passband_penalty(&a, obj);
    let total = -(obj.w_capacity * capacity + obj.w_uniformity * uniformity)
        + obj.w_penalty * penalty;
    Ok(ObjectiveBreakdown {
        total,
        capacity,
        uniformity,
        penalty,
    })
}

/// Min/mean window energy of the projected reference signature over the
/// detector grid. Zero when the null space is empty or spatially vacuous.
fn uniformity_term(a: &Otf, obj: &MaskObjective) -> Result<f64> {
    let key = SecretKey::from_seed(obj.reference_key);
    let g = crate::watermark::generate_signature(&key, (a.channels(), a.height(), a.width()));
    let e = a.project_null(&g.field)?;
    let win = obj.window;
    let stride = obj.stride.max(1);
    let (channels, height, width) = e.shape();
    if height < win || width < win {
        return Ok(0.0);
    }
    let mut energies = Vec::new();
    for top in (0..=(height - win)).step_by(stride) {
        for left in (0..=(width - win)).step_by(stride) {
            let mut energy = 0.0;
            for c in 0..channels {
                let ch = e.channel(c);
                for r in 0..win {
                    let off = (top + r) * width + left;
                    for v in &ch[off..off + win] {
                        energy += v * v;
                    }
                }
            }
            energies.push(energy);
        }
    }
    let min = energies.iter().cloned().fold(f64::INFINITY, f64::min);
    let mean = energies.iter().sum::<f64>() / energies.len() as f64;
    Ok(min / (mean + 1e-12))
}

/// Mean over in-band range bins of max(0, ln(guard * max|H| / |H|)).
fn passband_penalty(a: &Otf, obj: &MaskObjective) -> f64 {
    let bins = a.height() * a.width();
    let guard = obj.guard_ratio();
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..a.channels() {
        let spec = &a.spectrum()[c * bins..(c + 1) * bins];
        let max_mag = spec.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for row in 0..a.height() {
            for col in 0..a.width() {
                let idx = row * a.width() + col;
                let in_band = a
                    .band()
                    .map(|b| b.contains(row, col, a.height(), a.width()))
                    .unwrap_or(true);
                if !in_band || a.null_mask()[c * bins + idx] {
                    continue;
                }
                count += 1;
                let mag = spec[idx].norm();
                if mag > 0.0 {
                    total += (guard * max_mag / mag).ln().max(0.0);
                } else {
                    total += (guard / obj.tau_rel).ln(); // floor of the guard window
                }
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEntry {
    pub eval: usize,
    pub objective: f64,
    pub capacity: f64,
    pub uniformity: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptResult {
    pub best: ZernikeCoeffs,
    pub objective: f64,
    pub capacity: f64,
    pub uniformity: f64,
    pub penalty: f64,
    pub evaluations: usize,
    pub trace: Vec<TraceEntry>,
    /// Best objective reached within each restart.
    pub restart_best: Vec<f64>,
}

struct Evaluator<'a> {
    cfg: &'a OpticalConfig,
    obj: &'a MaskObjective,
    modes: usize,
    trace: Vec<TraceEntry>,
    used: usize,
    budget: usize,
}

impl<'a> Evaluator<'a> {
    fn exhausted(&self) -> bool {
        self.used >= self.budget
    }

    fn coeffs(&self, x: &[f64]) -> ZernikeCoeffs {
        let mut values = vec![0.0; self.modes];
        for (i, &v) in x.iter().enumerate() {
            values[3 + i] = v.clamp(-COEFF_CAP, COEFF_CAP);
        }
        ZernikeCoeffs::new(values).expect("clamped coefficients are valid")
    }

    fn eval(&mut self, x: &[f64]) -> Result<f64> {
        let breakdown = objective(&self.coeffs(x), self.cfg, self.obj)?;
        self.used += 1;
        self.trace.push(TraceEntry {
            eval: self.used,
            objective: breakdown.total,
            capacity: breakdown.capacity,
            uniformity: breakdown.uniformity,
            penalty: breakdown.penalty,
        });
        Ok(breakdown.total)
    }
}

/// Nelder-Mead with standard coefficients (reflection 1, expansion 2,
/// contraction 0.5, shrink 0.5) under a hard evaluation budget.
fn nelder_mead(ev: &mut Evaluator, x0: &[f64]) -> Result<(Vec<f64>, f64)> {
    let dim = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let f0 = ev.eval(x0)?;
    simplex.push((x0.to_vec(), f0));
    for i in 0..dim {
        if ev.exhausted() {
            break;
        }
        let mut xi = x0.to_vec();
        xi[i] += SIMPLEX_STEP;
        let fi = ev.eval(&xi)?;
        simplex.push((xi, fi));
    }

    while !ev.exhausted() && simplex.len() == dim + 1 {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let worst = simplex[dim].clone();
        let mut centroid = vec![0.0; dim];
        for (x, _) in &simplex[..dim] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / dim as f64;
            }
        }
        let reflect: Vec<f64> = centroid
            .iter()
            .zip(&worst.0)
            .map(|(c, w)| c + (c - w))
            .collect();
        let fr = ev.eval(&reflect)?;
        if fr < simplex[0].1 {
            if ev.exhausted() {
                simplex[dim] = (reflect, fr);
                break;
            }
            let expand: Vec<f64> = centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + 2.0 * (c - w))
                .collect();
            let fe = ev.eval(&expand)?;
            simplex[dim] = if fe < fr { (expand, fe) } else { (reflect, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (reflect, fr);
        } else {
            if ev.exhausted() {
                break;
            }
            let contract: Vec<f64> = centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + 0.5 * (w - c))
                .collect();
            let fc = ev.eval(&contract)?;
            if fc < worst.1 {
                simplex[dim] = (contract, fc);
            } else {
                // Shrink toward the best vertex.
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    if ev.exhausted() {
                        break;
                    }
                    let x: Vec<f64> = best
                        .iter()
                        .zip(&vertex.0)
                        .map(|(b, v)| b + 0.5 * (v - b))
                        .collect();
                    let f = ev.eval(&x)?;
                    *vertex = (x, f);
                }
            }
        }
    }

    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let (x, f) = simplex.swap_remove(0);
    Ok((x, f))
}

/// Optimizes Noll 4..K coefficients; piston/tip/tilt stay frozen at zero.
/// Deterministic given the seed; restarts run in parallel and the best
/// restart wins (ties to the lower restart index).
pub fn optimize(
    initial: Option<&ZernikeCoeffs>,
    cfg: &OpticalConfig,
    obj: &MaskObjective,
    budget: usize,
    restarts: usize,
    seed: u64,
) -> Result<OptResult> {
    obj.validate()?;
    cfg.validate()?;
    let modes = initial.map(|c| c.modes()).unwrap_or(18).max(4);
    if budget < modes + 1 {
        return Err(Error::InsufficientBudget {
            got: budget,
            needed: modes + 1,
        });
    }
    let dim = modes - 3;
    let restarts = restarts.max(1);

    type RestartRun = (Vec<f64>, f64, Vec<TraceEntry>, usize);
    let runs: Vec<Result<RestartRun>> = (0..restarts)
        .into_par_iter()
        .map(|restart| {
            let x0: Vec<f64> = if restart == 0 {
                match initial {
                    Some(c) => c.values()[3..].to_vec(),
                    None => vec![0.0; dim],
                }
            } else {
                let mut rng = chacha_from_u64(seed.wrapping_add(restart as u64));
                (0..dim)
                    .map(|_| rng.gen_range(-2.0 * LAMBDA_REF..2.0 * LAMBDA_REF))
                    .collect()
            };
            let mut ev = Evaluator {
                cfg,
                obj,
                modes,
                trace: Vec::new(),
                used: 0,
                budget,
            };
            let (x, f) = nelder_mead(&mut ev, &x0)?;
            Ok((x, f, ev.trace, ev.used))
        })
        .collect();

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut trace = Vec::new();
    let mut evaluations = 0usize;
    let mut restart_best = Vec::with_capacity(restarts);
    for run in runs {
        let (x, f, mut t, used) = run?;
        for entry in t.iter_mut() {
            entry.eval += evaluations;
        }
        evaluations += used;
        trace.append(&mut t);
        restart_best.push(f);
        if best.as_ref().map(|(_, bf)| f < *bf).unwrap_or(true) {
            best = Some((x, f));
        }
    }
    let (x, f) = best.expect("at least one restart");

    let mut values = vec![0.0; modes];
    for (i, &v) in x.iter().enumerate() {
        values[3 + i] = v.clamp(-COEFF_CAP, COEFF_CAP);
    }
    let best_coeffs = ZernikeCoeffs::new(values)?;
    let breakdown = objective(&best_coeffs, cfg, obj)?;

    Ok(OptResult {
        best: best_coeffs,
        objective: f,
        capacity: breakdown.capacity,
        uniformity: breakdown.uniformity,
        penalty: breakdown.penalty,
        evaluations,
        trace,
        restart_best,
    })
}
