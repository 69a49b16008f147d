use contract_match::Error;

/// Exit statuses of the command-line tool.
pub const EXIT_PASS: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CAPACITY: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// A malformed or inconsistent input, located by file and field path.
    #[error("{path}: {message}")]
    Input { path: String, message: String },

    #[error("{path}: {source}")]
    Core {
        path: String,
        #[source]
        source: Error,
    },

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn input(path: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Input {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn core(path: impl Into<String>, source: Error) -> Self {
        CliError::Core {
            path: path.into(),
            source,
        }
    }

    /// Prefixes the location with `outer`, such as a file name.
    pub fn within(self, outer: &str) -> Self {
        match self {
            CliError::Input { path, message } => CliError::Input {
                path: format!("{outer}: {path}"),
                message,
            },
            CliError::Core { path, source } => CliError::Core {
                path: format!("{outer}: {path}"),
                source,
            },
            other => other,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core {
                source: Error::Capacity { .. },
                ..
            } => EXIT_CAPACITY,
            _ => EXIT_USAGE,
        }
    }
}

/// Whether a core error means the input violates an axiom rather than
/// being malformed.
pub fn is_violation(e: &Error) -> bool {
    matches!(
        e,
        Error::Precondition(_) | Error::Ambiguity { .. } | Error::Rationalization(_)
    )
}
