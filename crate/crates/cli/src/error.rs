//! Command failures split into bad input (exit 1) and runtime failures
//! (exit 2), reported as one JSON object on stderr.

use panoact_debrief::DebriefError;
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Validation,
    Runtime,
}

#[derive(Debug, Serialize)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

pub fn invalid(message: impl Into<String>) -> CliError {
    CliError {
        kind: Kind::Validation,
        message: message.into(),
    }
}

pub fn runtime(message: impl Into<String>) -> CliError {
    CliError {
        kind: Kind::Runtime,
        message: message.into(),
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            Kind::Validation => 1,
            Kind::Runtime => 2,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": { "kind": self.kind, "message": self.message, "exit_code": self.exit_code() } }).to_string()
    }
}

impl From<panoact::Error> for CliError {
    fn from(e: panoact::Error) -> Self {
        use panoact::Error as E;
        match e {
            E::Shape { .. } | E::InvalidArgument(_) | E::OutOfRange(_) | E::Decode(_) | E::Csv { .. } | E::Json(_) => {
                invalid(e.to_string())
            }
            _ => runtime(e.to_string()),
        }
    }
}

impl From<DebriefError> for CliError {
    fn from(e: DebriefError) -> Self {
        match e {
            DebriefError::Core(c) => c.into(),
            DebriefError::Io { .. } | DebriefError::External(_) => runtime(e.to_string()),
            _ => invalid(e.to_string()),
        }
    }
}
