//! Error types shared across the toolkit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("unsupported Zernike mode j={0} (supported range 1..=36)")]
    UnsupportedMode(usize),

    #[error("invalid Zernike coefficients: {0}")]
    InvalidCoeffs(String),

    #[error("invalid optical config: {0}")]
    InvalidConfig(String),

    #[error("psf clipping: crop window captures {captured:.4} of total energy (< {required:.2}); enlarge kernel_size")]
    PsfClipping { captured: f64, required: f64 },

    #[error("degenerate psf: {0}")]
    DegeneratePsf(String),

    #[error("degenerate operator: {0}")]
    DegenerateOperator(String),

    #[error("embedding failure: leakage {leakage:.3e} still above {budget:.1e} after {retries} retries (image too saturated)")]
    EmbeddingFailure {
        leakage: f64,
        budget: f64,
        retries: usize,
    },

    #[error("degenerate signature: no valid detector windows (null space spatially vacuous)")]
    DegenerateSignature,

    #[error("insufficient calibration data: {0}")]
    InsufficientCalibration(String),

    #[error("tamper spec error: {0}")]
    TamperSpec(String),

    #[error("insufficient budget: {got} evaluations for {needed} required")]
    InsufficientBudget { got: usize, needed: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, Error>;
