use thiserror::Error;

/// Errors raised across the characterization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("enumeration of {outcomes} outcomes exceeds the budget of {budget}; use the Monte-Carlo test instead")]
    Capacity { outcomes: f64, budget: u64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("transport failure: {0}")]
    Transport(String),

    #[error("endpoint capability missing: {0}")]
    Capability(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degraded result: {0}")]
    Degraded(String),

    #[error("dataset ingestion failed:\n{}", format_lines(.0))]
    Ingestion(Vec<LineError>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit status distinguishing failure classes.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_) | Error::Capacity { .. } => 2,
            Error::Ingestion(_) => 3,
            Error::Transport(_) | Error::Capability(_) => 4,
            Error::Numeric(_) => 5,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => 6,
            Error::Contract(_) | Error::Degraded(_) => 7,
        }
    }
}

/// One offending line of an input file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

fn format_lines(lines: &[LineError]) -> String {
    lines
        .iter()
        .map(|l| format!("  line {}: {}", l.line, l.message))
        .collect::<Vec<_>>()
        .join("\n")
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
