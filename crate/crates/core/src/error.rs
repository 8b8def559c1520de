use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("dimension mismatch: expected n = {expected}, found n = {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("dilation factor must be nonnegative, got {0}")]
    NegativeDilation(f64),
    #[error("index {index} out of range 0..{bound}")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("point {0:?} lies outside the box")]
    OutsideBox(Vec<f64>),
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("region is not contained in the box: {0}")]
    RegionOutsideBox(String),
    #[error("shrunken region is empty: {0}")]
    EmptyRegion(String),
    #[error("admissibility violated: {0}")]
    Admissibility(String),
    #[error("scale parameter must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("support violation: {0}")]
    SupportViolation(String),
    #[error("characteristic escaped the evaluable region at {0:?}")]
    CharacteristicEscape(Vec<f64>),
    #[error("degenerate Jacobian determinant {0}")]
    DegenerateJacobian(f64),
    #[error("vector field is not contact")]
    NotContact,
    #[error("noise floor reached: {0}")]
    NoiseFloor(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, LabError>;
