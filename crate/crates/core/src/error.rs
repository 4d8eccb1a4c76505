use thiserror::Error;

/// Errors produced by estimation, testing, simulation and I/O.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("design has {rows} rows but {params} parameters")]
    Underdetermined { rows: usize, params: usize },

    #[error("design matrix is rank deficient at column {column}")]
    RankDeficient { column: usize },

    #[error("series of length {len} is too short for an AR(1) fit (need at least 3)")]
    SeriesTooShort { len: usize },

    #[error("degenerate series: lagged sum of squares is zero")]
    DegenerateSeries,

    #[error("observation {index} has leverage {leverage}, Cook's distance is undefined")]
    LeverageOne { index: usize, leverage: f64 },

    #[error("initial forward-search subset is singular")]
    InitialSubsetSingular,

    #[error("unit {unit} could not be estimated: {reason}")]
    UnestimableUnit { unit: usize, reason: String },

    #[error("time point {time} could not be estimated: {reason}")]
    UnestimableTimePoint { time: usize, reason: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid settings: {0}")]
    InvalidSettings(String),

    #[error("unbalanced panel: no observation for unit {unit} at time {time}")]
    UnbalancedPanel { unit: String, time: String },

    #[error("row {row}: duplicate observation for unit {unit} at time {time}")]
    DuplicateCell { row: usize, unit: String, time: String },

    #[error("row {row}: column {column} has non-numeric value {value:?}")]
    NonNumericField { row: usize, column: String, value: String },

    #[error("missing column {0}")]
    MissingColumn(String),

    #[error("row {row}: unit {unit} changes neighborhood label")]
    InconsistentNeighborhood { row: usize, unit: String },

    #[error("layout is missing cell {0}")]
    IncompleteGrid(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Parse(err.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Parse(err.to_string())
    }
}
