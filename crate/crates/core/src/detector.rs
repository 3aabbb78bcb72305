//! Tamper detection and localization from the signature map.
//!
//! The extracted map is correlated against the expected keyed signature over
//! overlapping windows; per-pixel scores come from uniform averaging of the
//! covering windows. NCC is scale-invariant, so the verifier never needs the
//! embedding gain.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::key::SecretKey;
use crate::operator::Otf;
use crate::watermark::{extract_signature, generate_signature};
use serde::{Deserialize, Serialize};

pub const DEFAULT_WINDOW: usize = 16;
pub const DEFAULT_STRIDE: usize = 8;
pub const DEFAULT_THETA_PIX: f64 = 0.35;
pub const DEFAULT_THETA_GLOBAL: f64 = 0.5;

/// Windows whose reference-signature energy falls below this per-sample
/// level carry no evidence and are marked invalid.
const WINDOW_ENERGY_FLOOR: f64 = 1e-8;

/// Invalid pixels inherit the mean of valid scores within this many windows.
const FILL_RADIUS_WINDOWS: usize = 3;

/// Per-pixel correlation scores in [-1, 1], channel-averaged, plus the valid
/// region (pixels covered by at least one scoreable window).
#[derive(Debug, Clone)]
pub struct AuthenticityMap {
    pub height: usize,
    pub width: usize,
    /// Per-pixel score; invalid pixels hold the filled value.
    pub scores: Vec<f64>,
    pub valid: Vec<bool>,
    /// Scores of every valid (window, channel) pair; the global score is
    /// their mean.
    pub window_scores: Vec<f64>,
}

impl AuthenticityMap {
    pub fn global_score(&self) -> f64 {
        if self.window_scores.is_empty() {
            0.0
        } else {
            self.window_scores.iter().sum::<f64>() / self.window_scores.len() as f64
        }
    }
}

/// Thresholded decision over an authenticity map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TamperReport {
    pub height: usize,
    pub width: usize,
    /// 1 = tampered.
    pub mask: Vec<bool>,
    pub global_score: f64,
    pub authentic: bool,
    pub theta_pix: f64,
    pub theta_global: f64,
}

/// Windowed NCC of the extracted signature map against the expected keyed
/// signature.
pub fn score_map(
    a: &Otf,
    img: &Image,
    key: &SecretKey,
    win: usize,
    stride: usize,
) -> Result<AuthenticityMap> {
    let (channels, height, width) = img.shape();
    if height < win || width < win {
        return Err(Error::Precondition(format!(
            "image {height}x{width} smaller than window {win}"
        )));
    }
    if stride == 0 || win == 0 {
        return Err(Error::Precondition("win and stride must be positive".into()));
    }
    let s = extract_signature(a, img)?;
    let g = generate_signature(key, img.shape());
    let e = a.project_null(&g.field)?;

    let mut acc = vec![0.0; height * width];
    let mut cover = vec![0u32; height * width];
    let mut window_scores = Vec::new();
    let energy_floor = WINDOW_ENERGY_FLOOR * (win as f64); // per-window centered norm floor

    let rows: Vec<usize> = (0..=(height - win)).step_by(stride).collect();
    let cols: Vec<usize> = (0..=(width - win)).step_by(stride).collect();

    let mut sw = vec![0.0; win * win];
    let mut ew = vec![0.0; win * win];
    for &top in &rows {
        for &left in &cols {
            let mut any_valid = false;
            let mut win_sum = 0.0;
            let mut win_cnt = 0usize;
            for c in 0..channels {
                let sc = s.channel(c);
                let ec = e.channel(c);
                for r in 0..win {
                    let off = (top + r) * width + left;
                    sw[r * win..(r + 1) * win].copy_from_slice(&sc[off..off + win]);
                    ew[r * win..(r + 1) * win].copy_from_slice(&ec[off..off + win]);
                }
                let n = (win * win) as f64;
                let ms = sw.iter().sum::<f64>() / n;
                let me = ew.iter().sum::<f64>() / n;
                let mut num = 0.0;
                let mut ds = 0.0;
                let mut de = 0.0;
                for (x, y) in sw.iter().zip(&ew) {
                    let xs = x - ms;
                    let ye = y - me;
                    num += xs * ye;
                    ds += xs * xs;
                    de += ye * ye;
                }
                if de.sqrt() < energy_floor {
                    continue; // no signature evidence here
                }
                any_valid = true;
                let score = if ds <= 0.0 { 0.0 } else { num / (ds.sqrt() * de.sqrt()) };
                window_scores.push(score);
                win_sum += score;
                win_cnt += 1;
            }
            if any_valid {
                let score = win_sum / win_cnt as f64;
                for r in 0..win {
                    for q in 0..win {
                        let idx = (top + r) * width + (left + q);
                        acc[idx] += score;
                        cover[idx] += 1;
                    }
                }
            }
        }
    }

    if window_scores.is_empty() {
        return Err(Error::DegenerateSignature);
    }

    let mut scores = vec![0.0; height * width];
    let mut valid = vec![false; height * width];
    for idx in 0..height * width {
        if cover[idx] > 0 {
            scores[idx] = acc[idx] / cover[idx] as f64;
            valid[idx] = true;
        }
    }

    // Fill invalid pixels from valid neighbors within a 3-window radius.
    if valid.iter().any(|&v| !v) {
        let radius = FILL_RADIUS_WINDOWS * win;
        let filled: Vec<f64> = (0..height * width)
            .map(|idx| {
                if valid[idx] {
                    return scores[idx];
                }
                let row = idx / width;
                let col = idx % width;
                let r0 = row.saturating_sub(radius);
                let r1 = (row + radius + 1).min(height);
                let c0 = col.saturating_sub(radius);
                let c1 = (col + radius + 1).min(width);
                let mut sum = 0.0;
                let mut cnt = 0usize;
                for r in r0..r1 {
                    for c in c0..c1 {
                        let j = r * width + c;
                        if valid[j] {
                            sum += scores[j];
                            cnt += 1;
                        }
                    }
                }
                if cnt == 0 {
                    0.0
                } else {
                    sum / cnt as f64
                }
            })
            .collect();
        scores = filled;
    }

    Ok(AuthenticityMap {
        height,
        width,
        scores,
        valid,
        window_scores,
    })
}

/// Thresholds a map into a tamper mask and a global verdict.
pub fn decide(map: &AuthenticityMap, theta_pix: f64, theta_global: f64) -> TamperReport {
    let mask = map.scores.iter().map(|&m| m < theta_pix).collect();
    let global_score = map.global_score();
    TamperReport {
        height: map.height,
        width: map.width,
        mask,
        global_score,
        authentic: global_score >= theta_global,
        theta_pix,
        theta_global,
    }
}

/// Calibration outcome: thresholds plus the separation achieved.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Calibration {
    pub theta_pix: f64,
    pub theta_global: f64,
    pub pixel_f1_at_theta: f64,
    /// Set when the best pixel-F1 stayed <= 0.6 (authentic/tampered score
    /// distributions barely separate).
    pub weak_separation: bool,
}

/// 101 uniformly spaced thresholds over the score range [-1, 1].
pub fn threshold_grid() -> Vec<f64> {
    (0..=100).map(|i| -1.0 + i as f64 * 0.02).collect()
}

/// Picks theta_pix by maximizing mean pixel-F1 over the calibration pairs
/// (midpoint of the argmax plateau) and theta_global as the midpoint between
/// the 5th percentile of authentic-image global scores and the 95th
/// percentile of fully tampered-image global scores.
pub fn calibrate_thresholds(pairs: &[(AuthenticityMap, Vec<bool>)]) -> Result<Calibration> {
    if pairs.len() < 10 {
        return Err(Error::InsufficientCalibration(format!(
            "need at least 10 pairs, got {}",
            pairs.len()
        )));
    }
    for (map, gt) in pairs {
        if gt.len() != map.height * map.width {
            return Err(Error::ShapeMismatch {
                expected: format!("{} pixels", map.height * map.width),
                got: format!("{}", gt.len()),
            });
        }
    }

    let grid = threshold_grid();
    let mut mean_f1 = vec![0.0; grid.len()];
    for (map, gt) in pairs {
        for (ti, &t) in grid.iter().enumerate() {
            let mut tp = 0u64;
            let mut fp = 0u64;
            let mut fn_ = 0u64;
            for (m, &tampered) in map.scores.iter().zip(gt.iter()) {
                let pred = *m < t;
                match (pred, tampered) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => {}
                }
            }
            let denom = 2 * tp + fp + fn_;
            let f1 = if denom == 0 {
                1.0 // empty ground truth, empty prediction
            } else {
                2.0 * tp as f64 / denom as f64
            };
            mean_f1[ti] += f1 / pairs.len() as f64;
        }
    }

    let best = mean_f1.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let plateau: Vec<usize> = mean_f1
        .iter()
        .enumerate()
        .filter(|(_, &f)| (best - f) <= 1e-12)
        .map(|(i, _)| i)
        .collect();
    let mid = plateau[plateau.len() / 2];
    let theta_pix = grid[mid];

    let authentic: Vec<f64> = pairs
        .iter()
        .filter(|(_, gt)| gt.iter().all(|&t| !t))
        .map(|(m, _)| m.global_score())
        .collect();
    let full: Vec<f64> = pairs
        .iter()
        .filter(|(_, gt)| gt.iter().all(|&t| t))
        .map(|(m, _)| m.global_score())
        .collect();
    if authentic.is_empty() || full.is_empty() {
        return Err(Error::InsufficientCalibration(
            "need authentic (empty mask) and fully tampered (full mask) examples for theta_global"
                .into(),
        ));
    }
    let theta_global = (percentile(&authentic, 5.0) + percentile(&full, 95.0)) / 2.0;

    Ok(Calibration {
        theta_pix,
        theta_global,
        pixel_f1_at_theta: best,
        weak_separation: best <= 0.6,
    })
}

/// Linear-interpolation percentile (p in [0,100]).
fn percentile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Localization quality of a predicted mask against ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub f1: f64,
    pub iou: f64,
    pub auc: f64,
    /// 101 (fpr, tpr) points from sweeping thresholds over -m.
    pub roc: Vec<(f64, f64)>,
}

/// F1/IoU of the binary mask plus a threshold-swept ROC over the score map
/// (tamper score = -m), AUC by trapezoid.
pub fn evaluate(mask: &[bool], gt: &[bool], map: &AuthenticityMap) -> Result<DetectionMetrics> {
    let n = map.height * map.width;
    if mask.len() != n || gt.len() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} pixels"),
            got: format!("{} / {}", mask.len(), gt.len()),
        });
    }
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    for (&p, &t) in mask.iter().zip(gt) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let f1 = if 2 * tp + fp + fn_ == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };
    let iou = if tp + fp + fn_ == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp + fn_) as f64
    };

    let pos = gt.iter().filter(|&&t| t).count() as f64;
    let neg = n as f64 - pos;
    let grid = threshold_grid();
    let mut roc: Vec<(f64, f64)> = grid
        .iter()
        .map(|&t| {
            // tampered when -m >= t, i.e. m <= -t
            let mut tpr_n = 0u64;
            let mut fpr_n = 0u64;
            for (&m, &tampered) in map.scores.iter().zip(gt.iter()) {
                if -m >= t {
                    if tampered {
                        tpr_n += 1;
                    } else {
                        fpr_n += 1;
                    }
                }
            }
            let tpr = if pos > 0.0 { tpr_n as f64 / pos } else { 0.0 };
            let fpr = if neg > 0.0 { fpr_n as f64 / neg } else { 0.0 };
            (fpr, tpr)
        })
        .collect();
    roc.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let auc = trapezoid_auc(&roc);
    Ok(DetectionMetrics { f1, iou, auc, roc })
}

/// Trapezoidal integral of an ROC curve sorted by FPR.
pub fn trapezoid_auc(roc: &[(f64, f64)]) -> f64 {
    let mut auc = 0.0;
    for pair in roc.windows(2) {
        let (x0, y0) = pair[0];
        let (x1, y1) = pair[1];
        auc += (x1 - x0) * (y0 + y1) / 2.0;
    }
    auc
}
