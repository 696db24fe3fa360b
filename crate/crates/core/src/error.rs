use thiserror::Error;

pub type Result<T> = std::result::Result<T, TeraError>;

#[derive(Debug, Error)]
pub enum TeraError {
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("index {index} out of range for a scene of {len} points")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("a loop needs two distinct points, got ({0}, {0})")]
    RepeatedIndex(usize),

    #[error("trilateration anchors are collinear (triangle area {area:e} m^2)")]
    DegenerateAnchors { area: f64 },

    #[error("parameter `{name}` must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("scene has no points")]
    EmptyScene,

    #[error("reconstruction has no placed points")]
    EmptyReconstruction,

    #[error("point sets differ in size ({0} vs {1})")]
    SizeMismatch(usize, usize),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
