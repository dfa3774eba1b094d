use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid volume grid: {0}")]
    Grid(String),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid phantom: {0}")]
    Phantom(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// `last_finite_cost` is NaN when no finite cost was recorded.
    #[error("non-finite cost at iteration {iteration} (last finite cost {last_finite_cost})")]
    NonFiniteCost { iteration: usize, last_finite_cost: f64 },
}

impl Error {
    pub(crate) fn shape(expected: impl core::fmt::Display, actual: impl core::fmt::Display) -> Self {
        use alloc::string::ToString;
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
