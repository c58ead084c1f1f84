use std::fmt;

/// Failure classes with distinct exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config,
    Input,
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = match self.kind {
            Kind::Config => "config error",
            Kind::Input => "input error",
            Kind::Numerical => "numerical failure",
        };
        write!(f, "{label}: {}", self.message)
    }
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError { kind: Kind::Config, message: message.into() }
    }

    pub fn input(message: impl Into<String>) -> Self {
        CliError { kind: Kind::Input, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        CliError { kind: Kind::Numerical, message: message.into() }
    }

    pub fn exit_code(&self) -> u8 {
        match self.kind {
            Kind::Config => 2,
            Kind::Input => 3,
            Kind::Numerical => 4,
        }
    }

    /// Prefixes the message with context, keeping the kind.
    pub fn context(self, what: impl fmt::Display) -> Self {
        CliError { kind: self.kind, message: format!("{what}: {}", self.message) }
    }
}

impl From<ghostqc_core::Error> for CliError {
    fn from(e: ghostqc_core::Error) -> Self {
        use ghostqc_core::Error as E;
        let kind = match &e {
            E::NonFinite(_) => Kind::Numerical,
            E::ShapeMismatch(_) | E::LengthMismatch { .. } => Kind::Input,
            _ => Kind::Config,
        };
        CliError { kind, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::input(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
