use thiserror::Error;

/// Errors produced by network ingestion, simulation, and optimization.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse: {0}")]
    Parse(String),

    #[error("validation: {element}: {message}")]
    Validation { element: String, message: String },

    #[error("disconnected network: components {components:?}")]
    Disconnected { components: Vec<Vec<String>> },

    #[error("domain: {0}")]
    Domain(String),

    #[error("non-positive density in state slot {slot} (value {value}) at t = {time} s")]
    StateValidity { slot: usize, value: f64, time: f64 },

    #[error("time {t} s outside [0, {horizon}] s")]
    TimeOutOfRange { t: f64, horizon: f64 },
}

impl Error {
    pub fn validation(element: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            element: element.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable kind tag, used by the CLI error channel.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Parse(_) => "parse",
            Error::Validation { .. } => "validation",
            Error::Disconnected { .. } => "disconnected",
            Error::Domain(_) => "domain",
            Error::StateValidity { .. } => "state_validity",
            Error::TimeOutOfRange { .. } => "time_out_of_range",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
