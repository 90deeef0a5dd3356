use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("matrix has {got} values, expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("row {0} has zero norm")]
    ZeroNormRow(usize),
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("{0} rows are not unit-normalized")]
    NotNormalized(&'static str),
    #[error("label {label} at row {row} is out of range for {classes} classes")]
    LabelOutOfRange { row: usize, label: usize, classes: usize },
    #[error("label count {got} does not match row count {expected}")]
    LabelCountMismatch { expected: usize, got: usize },
    #[error("ground-truth label missing for sample {0}")]
    MissingGroundTruth(usize),
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{samples} samples cannot be split into {quantiles} quantiles")]
    TooFewSamples { samples: usize, quantiles: usize },
    #[error("cannot form {clusters} clusters from {points} points")]
    NotEnoughPoints { points: usize, clusters: usize },
    #[error("cluster {0} is empty")]
    EmptyCluster(usize),
    #[error("anchor index {0} appears more than once")]
    DuplicateAnchor(usize),
    #[error("index {index} out of range for {len} samples")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("top-k of {k} exceeds {classes} classes")]
    TopKExceedsClasses { k: usize, classes: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("evaluation set is empty")]
    EmptyEvaluationSet,
    #[error("gradient contains non-finite values")]
    NonFiniteGradient,
    #[error("could not place {classes} separated class means in {dim} dimensions")]
    RejectionBudgetExceeded { classes: usize, dim: usize },
    #[error("label sets violate an invariant: {0}")]
    InvalidLabelSets(String),
}

pub type Result<T> = core::result::Result<T, Error>;
