use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("failed to read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

impl ScenarioError {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ScenarioError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DelayError {
    #[error("command stamp {stamp} precedes last pushed stamp {last}")]
    NonMonotonicStamp { stamp: f64, last: f64 },
    #[error("command stamp must be finite, got {0}")]
    NonFiniteStamp(f64),
    #[error("delay must be finite and non-negative, got {0}")]
    InvalidDelay(f64),
}

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no samples")]
    Empty,
    #[error("all paired differences are zero; the signed-rank test is undefined")]
    AllZeroDifferences,
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("failed to read plan: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse plan: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid plan: {0}")]
    Invalid(String),
    #[error("scenario `{path}`: {source}")]
    Scenario {
        path: String,
        #[source]
        source: ScenarioError,
    },
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("failed to read run log: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse run log line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("run `{run}` has no tick log to replay")]
    MissingTicks { run: String },
}

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("pose ({x}, {y}) lies outside the map")]
    PoseOutOfBounds { x: f64, y: f64 },
    #[error("point ({x}, {y}) lies outside the costmap window")]
    OutsideWindow { x: f64, y: f64 },
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse run log line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("failed to encode output: {0}")]
    Encode(#[from] serde_json::Error),
    #[error("failed to write csv: {0}")]
    Csv(#[from] csv::Error),
}
