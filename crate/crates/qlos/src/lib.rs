//! Quasi-line-of-sight THz MIMO link simulation.
//!
//! Channel models for partially blocked links (ray, wave and cascaded
//! virtual-array models), Airy and focusing beam synthesis, correlation
//! driven codebooks, beam search and spectral-efficiency evaluation.

pub mod beam;
pub mod channel;
pub mod codebook;
pub mod config;
pub mod eval;
pub mod export;
pub mod numerics;
pub mod scenario;
pub mod search;

pub use nalgebra;
pub use num_complex;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Dense complex matrix used for channels and beamformers.
pub type CMat = DMatrix<Complex64>;
/// Dense complex column vector.
pub type CVec = DVector<Complex64>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("non-finite input to {0}")]
    NonFinite(&'static str),
    #[error("bracket [{lo}, {hi}] does not straddle target {target}")]
    NoBracket { lo: f64, hi: f64, target: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("channel already calibrated")]
    AlreadyCalibrated,
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("config parse: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        field,
        reason: reason.into(),
    }
}
