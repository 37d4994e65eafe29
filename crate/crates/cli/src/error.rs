use std::fmt;
use std::io;
use std::path::Path;

use tkfnet::data::DataError;
use tkfnet::weights::WeightsError;

/// Failure category; decides the exit status and the message prefix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Verify,
    Train,
    Config,
    Io,
    Mismatch,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Verify | ErrorKind::Train => 1,
            ErrorKind::Config => 2,
            ErrorKind::Io => 3,
            ErrorKind::Mismatch => 4,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ErrorKind::Verify => "verify",
            ErrorKind::Train => "train",
            ErrorKind::Config => "config",
            ErrorKind::Io => "io",
            ErrorKind::Mismatch => "mismatch",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Config, message)
    }

    pub fn mismatch(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Mismatch, message)
    }

    pub fn io(path: &Path, err: io::Error) -> Self {
        Self::new(ErrorKind::Io, format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

/// Renders as `error[<tag>]: <message>` on a single line.
impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flat: Vec<&str> = self.message.split_whitespace().collect();
        write!(f, "error[{}]: {}", self.kind.tag(), flat.join(" "))
    }
}

impl std::error::Error for CliError {}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let kind = match e {
            DataError::Invalid(_) => ErrorKind::Config,
            _ => ErrorKind::Io,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<WeightsError> for CliError {
    fn from(e: WeightsError) -> Self {
        let kind = match e {
            WeightsError::Missing(_) | WeightsError::Unknown(_) | WeightsError::Shape { .. } => ErrorKind::Mismatch,
            _ => ErrorKind::Io,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<tkfnet::Error> for CliError {
    fn from(e: tkfnet::Error) -> Self {
        use tkfnet::Error as E;
        match e {
            E::Data(d) => d.into(),
            E::Weights(w) => w.into(),
            E::Tensor(_) => CliError::mismatch(e.to_string()),
            E::Config(_) | E::InputSize { .. } | E::DuplicateParam(_) => CliError::config(e.to_string()),
            E::MissingGradient | E::Training(_) => CliError::new(ErrorKind::Train, e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
