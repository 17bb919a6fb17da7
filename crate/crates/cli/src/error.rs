use std::fmt;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Validation,
    Runtime,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Validation => 2,
            ErrorKind::Runtime => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub msg: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Usage,
            msg: msg.into(),
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Validation,
            msg: msg.into(),
        }
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Runtime,
            msg: msg.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for CliError {}

impl From<nilink::Error> for CliError {
    fn from(e: nilink::Error) -> Self {
        use nilink::Error as E;
        let kind = match &e {
            E::Parse { .. } | E::Validation(_) | E::Shape(_) | E::InvalidArgument(_) => ErrorKind::Validation,
            E::Io { .. } | E::NonFinite { .. } => ErrorKind::Runtime,
        };
        CliError {
            kind,
            msg: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Wraps an I/O failure on `path` as a runtime error.
pub fn io_err(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::runtime(format!("{}: {e}", path.display()))
}
