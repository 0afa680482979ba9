use thiserror::Error;

/// Errors raised by the numerical kernels and estimators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("degenerate projection: point lies in the removed subspace (|P_W x| = {norm:e})")]
    DegenerateProjection { norm: f64 },
    #[error("projective space of the trivial subspace is empty")]
    EmptyTarget,
    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("intersection error: {0}")]
    Intersection(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("non-proximal product: sigma1/sigma2 = {ratio}")]
    NonProximal { ratio: f64 },
    #[error("insufficient mass: {0}")]
    InsufficientMass(String),
    #[error("slab too thin: acceptance rate {rate:e} after {drawn} draws")]
    SlabTooThin { rate: f64, drawn: usize },
    #[error("dimension unsupported: {0}")]
    DimensionUnsupported(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("diagnostics contradiction: {0}")]
    DiagnosticsContradiction(String),
}

pub type Result<T> = std::result::Result<T, LabError>;
