use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("malformed model document at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("relationship `{relationship}` references unknown class `{class}`")]
    DanglingReference { relationship: String, class: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("class `{class}` declares method `{method}` twice")]
    DuplicateMethod { class: String, method: String },
    #[error("{what} must not be empty")]
    EmptyField { what: String },
    #[error("a model needs at least 2 classes, found {0}")]
    TooFewClasses(usize),
    #[error("generalization `{0}` relates a class to itself")]
    SelfGeneralization(String),
    #[error("relationship `{relationship}` must have navigable = {expected}")]
    Navigability { relationship: String, expected: bool },
    #[error("cannot generate model: {0}")]
    Generation(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl ConfigError {
    pub(crate) fn new(msg: impl Into<String>) -> Self {
        ConfigError::Invalid(msg.into())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PreferenceError {
    #[error("confidence must be a Likert value in 1..=5, got {0}")]
    Confidence(u8),
    #[error("unknown class `{0}` in preference")]
    UnknownClass(String),
    #[error("unknown operation `{class}::{method}` in preference")]
    UnknownOperation { class: String, method: String },
    #[error("invalid preference payload: {0}")]
    Payload(String),
}

/// Violations of the interaction protocol.
#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("no interaction is pending")]
    NotAwaiting,
    #[error("feedback addresses stop {got}, but stop {expected} is pending")]
    WrongStop { expected: usize, got: usize },
    #[error("solution {0} was not shown at this stop")]
    UnknownSolution(u64),
    #[error("solution {0} appears more than once in the bundle")]
    DuplicateEntry(u64),
    #[error("solution {solution} has no component {component}")]
    UnknownComponent { solution: u64, component: usize },
    #[error("solution {0} cannot be both archived and removed")]
    ConflictingActions(u64),
    #[error(transparent)]
    Preference(#[from] PreferenceError),
}

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("event log does not start with a session header")]
    MissingHeader,
    #[error("seed mismatch: log was recorded with seed {recorded}, replay requested seed {requested}")]
    SeedMismatch { recorded: u64, requested: u64 },
    #[error("event log ends before feedback for stop {0}")]
    MissingStop(usize),
    #[error("malformed event at line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// Top-level error for engine and harness entry points.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Preference(#[from] PreferenceError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json { context: context.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
