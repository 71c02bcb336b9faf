use std::fmt;

use narrinf_core::Error;

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_EMPTY: u8 = 3;
pub const EXIT_CONVERGENCE: u8 = 4;
pub const EXIT_UNSUPPORTED: u8 = 5;
pub const EXIT_SINGULAR: u8 = 6;

/// A command failure carrying its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self::new(EXIT_INPUT, message)
    }

    /// Prefixes the message with `context`.
    pub fn context(self, context: impl fmt::Display) -> Self {
        Self {
            code: self.code,
            message: format!("{context}: {}", self.message),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::NoRecords { .. } => EXIT_EMPTY,
            Error::Unsupported(_) => EXIT_UNSUPPORTED,
            Error::SingularDesign { .. } => EXIT_SINGULAR,
            _ => EXIT_INPUT,
        };
        Self::new(code, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::input(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self::input(e.to_string())
    }
}

pub type CmdResult<T = ()> = std::result::Result<T, Failure>;

/// Attaches a path to I/O-ish failures.
pub trait WithPath<T> {
    fn at(self, path: &std::path::Path) -> CmdResult<T>;
}

impl<T, E: Into<Failure>> WithPath<T> for std::result::Result<T, E> {
    fn at(self, path: &std::path::Path) -> CmdResult<T> {
        self.map_err(|e| e.into().context(path.display()))
    }
}
