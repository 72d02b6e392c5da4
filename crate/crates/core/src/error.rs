use thiserror::Error;

use crate::alm::AlmReport;

#[derive(Debug, Error)]
pub enum Error {
    /// A point or parameter lies outside the discretized domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two objects that must share a lattice (or a length) do not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    /// A functional produced a non-finite value.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("certificate refused: {0}")]
    CertificateRefused(String),

    /// The augmented-Lagrangian loops hit an iteration cap. The partial
    /// report is carried so callers can still inspect and export it.
    #[error("not converged: {reason}")]
    NotConverged {
        reason: String,
        report: Box<AlmReport>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
