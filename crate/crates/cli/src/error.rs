use std::fmt;
use std::path::Path;

use dpn::DpnError;

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_MISMATCH: u8 = 4;
pub const EXIT_MALFORMED: u8 = 5;

/// A message and the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        Self {
            code: EXIT_IO,
            message: format!("{}: {err}", path.display()),
        }
    }

    pub fn mismatch(message: impl Into<String>) -> Self {
        Self { code: EXIT_MISMATCH, message: message.into() }
    }

    pub fn malformed(message: impl Into<String>) -> Self {
        Self { code: EXIT_MALFORMED, message: message.into() }
    }

    /// Attaches the file a library error came from.
    pub fn at(path: &Path, err: DpnError) -> Self {
        let mut e = Self::from(err);
        e.message = format!("{}: {}", path.display(), e.message);
        e
    }
}

impl From<DpnError> for CliError {
    fn from(err: DpnError) -> Self {
        let code = match &err {
            DpnError::Io(_) => EXIT_IO,
            DpnError::Format(_) => EXIT_MALFORMED,
            DpnError::Shape { .. } | DpnError::Tensor(_) => EXIT_MISMATCH,
            DpnError::Config(_) => EXIT_USAGE,
            DpnError::NonFinite { .. } => EXIT_FAILURE,
        };
        Self { code, message: err.to_string() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}
