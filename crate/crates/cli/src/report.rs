//! Report schemas written by the CLI. Every report declares schema_version;
//! the bench report is byte-deterministic apart from runtime_seconds.

use nowa_core::detector::DetectionMetrics;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Verification report (cmd_verify).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub schema_version: u32,
    pub global_score: f64,
    /// Command-level verdict (global consistency AND detected area floor).
    pub authentic: bool,
    /// Raw global-threshold decision from the detector.
    pub global_authentic: bool,
    pub tampered_fraction: f64,
    pub theta_pix: f64,
    pub theta_g: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsSummary>,
    pub operator_fingerprint: String,
    pub key_fingerprint: String,
}

/// Metrics without the 101-point curve (the curve lives in bench reports).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub f1: f64,
    pub iou: f64,
    pub auc: f64,
}

impl From<&DetectionMetrics> for MetricsSummary {
    fn from(m: &DetectionMetrics) -> Self {
        Self {
            f1: m.f1,
            iou: m.iou,
            auc: m.auc,
        }
    }
}

/// One evaluation condition of the bench protocol.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionReport {
    pub name: String,
    /// Means over tampered scenes.
    pub auc: f64,
    pub iou: f64,
    pub f1: f64,
    pub mean_global_authentic: f64,
    pub mean_global_tampered: f64,
    /// Authentic images verified authentic.
    pub authentic_pass: usize,
    /// Tampered images flagged tampered.
    pub tampered_detected: usize,
    pub scenes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub theta_pix: f64,
    pub theta_global: f64,
    pub pixel_f1: f64,
    pub weak_separation: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub n: usize,
    pub seed: u64,
    pub null_capacity: f64,
    pub operator_fingerprint: String,
    pub key_fingerprint: String,
    pub calibration: CalibrationReport,
    pub conditions: Vec<ConditionReport>,
    pub config: BTreeMap<String, serde_json::Value>,
    /// Wall-clock seconds; excluded from determinism comparisons.
    pub runtime_seconds: f64,
}

impl BenchReport {
    /// Serialization with the runtime zeroed, for byte-level comparisons.
    pub fn deterministic_bytes(&self) -> Vec<u8> {
        let mut copy = self.clone();
        copy.runtime_seconds = 0.0;
        serde_json::to_vec_pretty(&copy).expect("report serializes")
    }
}
