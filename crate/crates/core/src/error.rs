use alloc::string::String;

/// Errors produced by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("singular mass matrix (determinant {det:e})")]
    SingularMassMatrix { det: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("empty set: {0}")]
    Empty(&'static str),
    #[error("rejection sampling gave up after {0} rejections")]
    RejectionLimit(usize),
    #[error("state lies on a switching surface of the safety index")]
    AtSwitchingSurface,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
