use thiserror::Error;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Bad flags, bad config keys or values. Exit code 1.
    Usage,
    /// Malformed or inconsistent input data. Exit code 2.
    Data,
    /// I/O or internal failure. Exit code 3.
    Runtime,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("malformed trace header: expected `user_id,timestamp,region_id`, got `{0}`")]
    MalformedHeader(String),

    #[error("malformed trace row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },

    #[error("unknown user `{0}`")]
    UnknownUser(String),

    #[error("unknown region `{0}`")]
    UnknownRegion(String),

    #[error("user `{0}` has no events")]
    NoEvents(String),

    #[error("user `{0}` has no usable events in or before the learning window")]
    NoUsableEvents(String),

    #[error("region registry mismatch: profile covers {profile} regions, state covers {state}")]
    RegistryMismatch { profile: usize, state: usize },

    #[error("window [{start}, {end}) lies outside the trace time span")]
    WindowOutOfSpan { start: String, end: String },

    #[error("invalid time window: start {start} is not before end {end}")]
    InvalidWindow { start: String, end: String },

    #[error("invalid timestamp `{0}`: expected YYYY-MM-DDTHH:MM:SSZ (UTC)")]
    InvalidTimestamp(String),

    #[error("traces cover {available} days but the run needs {needed}")]
    InsufficientCoverage { available: u32, needed: u32 },

    #[error("seed region `{0}` has no occupants on day 0")]
    EmptySeedRegion(String),

    #[error("user index {0} is already quarantined")]
    AlreadyQuarantined(u32),

    #[error("user index {0} has no mobility profile")]
    MissingProfile(u32),

    #[error("horizon day {horizon} exceeds series length {len}")]
    HorizonBeyondSeries { horizon: u32, len: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("malformed {kind} CSV at line {line}: {reason}")]
    MalformedCsv {
        kind: &'static str,
        line: u64,
        reason: String,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("run failed (policy {policy}, run {run}): {source}")]
    RunFailed {
        policy: String,
        run: u32,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) => ErrorCategory::Usage,
            Error::Io { .. } => ErrorCategory::Runtime,
            Error::RunFailed { source, .. } => source.category(),
            _ => ErrorCategory::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
