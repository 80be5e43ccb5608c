use thiserror::Error;

/// Errors produced by the separation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("invalid filter bank geometry: {0}")]
    InvalidGeometry(String),

    #[error("degenerate normalization reference at coefficient {index} (|value| = {value:e})")]
    DegenerateReference { index: usize, value: f64 },

    #[error("modulus of filtered field vanishes at filter {filter}, pixel {pixel} (|u| = {modulus:e})")]
    NearZeroModulus {
        filter: usize,
        pixel: usize,
        modulus: f64,
    },

    #[error("matrix A^T A is singular (smallest eigenvalue {0:e})")]
    SingularMatrix(f64),

    #[error("brute-force domain too large: {0}")]
    DomainTooLarge(String),

    #[error("constant reference field: PSNR peak is zero")]
    ConstantReference,

    #[error("reference coefficients of class {0} have zero norm")]
    ZeroReferenceNorm(&'static str),

    #[error("representation does not support {0}")]
    Unsupported(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite loss at stage {stage}, iteration {iteration}")]
    NonFiniteLoss { stage: usize, iteration: usize },

    #[error("malformed grid file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
