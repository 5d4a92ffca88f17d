use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("empty input")]
    EmptyInput,

    #[error("missing label at row {row}, column {column:?}")]
    MissingLabel { row: usize, column: String },

    #[error("length mismatch: {left} vs {right}")]
    Alignment { left: usize, right: usize },

    #[error("duplicate task name {0:?}")]
    DuplicateTask(String),

    #[error("unknown task {0:?}")]
    UnknownTask(String),

    #[error("class {class} of the conditioning task never occurs")]
    ZeroMarginal { class: usize },

    #[error("training diverged at iteration {iteration}")]
    TrainingDiverged { iteration: usize },

    #[error("size {0} is not a multiple of 16")]
    BadSize(usize),

    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),

    #[error("correlation undefined: {0}")]
    CorrelationUndefined(String),

    #[error("nothing to plot")]
    EmptyPlot,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
