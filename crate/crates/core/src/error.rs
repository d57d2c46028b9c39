use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unscored group")]
    UnscoredGroup,

    #[error("no solutions")]
    NoSolutions,

    #[error("more levels than tests ({levels} levels, {tests} tests)")]
    MoreLevelsThanTests { levels: usize, tests: usize },

    #[error("difficulty level {0} is empty")]
    EmptyLevel(usize),

    #[error("unknown test id {0}")]
    UnknownTest(String),

    #[error("problem {0} needs a difficulty grouping for this reward scheme")]
    MissingGrouping(String),

    #[error("degenerate group: {0} responses, need at least 2")]
    DegenerateGroup(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("numerical blowup")]
    NumericalBlowup,

    #[error("batch of {batch} not divisible by mini-batch {mini}")]
    BatchNotDivisible { batch: usize, mini: usize },

    #[error("dataset exhausted")]
    DatasetExhausted,

    #[error("insufficient valid samples ({have} of {need})")]
    InsufficientValid { have: usize, need: usize },

    #[error("invalid transition for task {task}: {from} -> {to}")]
    InvalidTransition {
        task: u64,
        from: &'static str,
        to: &'static str,
    },

    #[error("batch unreachable within simulated time budget {budget}s")]
    Unreachable { budget: f64 },

    #[error("unknown problem {0}")]
    UnknownProblem(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing column {0}")]
    MissingColumn(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
