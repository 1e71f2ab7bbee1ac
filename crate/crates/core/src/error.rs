use thiserror::Error;

/// Errors raised by the measure, quantization and evaluation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("weight #{index} is not a positive finite number ({weight})")]
    NonPositiveWeight { index: usize, weight: f64 },

    #[error("point #{index} has a non-finite coordinate")]
    NonFiniteCoordinate { index: usize },

    #[error("point #{index} has norm {norm} outside the ball of radius {radius}")]
    PointOutsideBall { index: usize, norm: f64, radius: f64 },

    #[error("ball radius must be positive and finite, got {0}")]
    InvalidRadius(f64),

    #[error("measure has an empty support")]
    EmptySupport,

    #[error("sample contains no measures")]
    EmptySample,

    #[error("mini-batch of {size} measures is too small (need at least {required})")]
    BatchTooSmall { size: usize, required: usize },

    #[error("kernel argument must be non-negative, got {0}")]
    NegativeArgument(f64),

    #[error("linkage threshold must be non-negative, got {0}")]
    BadThreshold(f64),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("sample has no labels")]
    MissingLabels,

    #[error("label {label} at position {index} is outside 1..={max}")]
    InvalidLabel { index: usize, label: usize, max: usize },

    #[error("total masses differ: {0} vs {1}")]
    MassMismatch(f64, f64),

    #[error("unsupported instance: {0}")]
    UnsupportedInstance(String),

    #[error("support of {support} atoms exceeds the enumeration cap of {max}")]
    TooLarge { support: usize, max: usize },

    #[error("invalid mixture spec: {0}")]
    SpecInvalid(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed input at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad parameters rather than bad data.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_)
                | Error::SpecInvalid(_)
                | Error::BadThreshold(_)
                | Error::BatchTooSmall { .. }
                | Error::NegativeArgument(_)
                | Error::InvalidRadius(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
