use std::fmt;

/// One problem with one config field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: &str, message: String) -> Self {
        Self {
            field: field.to_string(),
            message,
        }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn list(errs: &[FieldError]) -> String {
    errs.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot parse config: {0}")]
    Parse(String),

    #[error("invalid config:\n{}", list(.0))]
    ConfigInvalid(Vec<FieldError>),

    #[error(transparent)]
    Core(#[from] cutoff_lab::Error),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot serialize output: {0}")]
    Serialize(String),

    #[error("invalid environment variable {name}: {message}")]
    Env { name: &'static str, message: String },
}

impl CliError {
    /// 2 for bad input, 1 for failures during the run.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::ConfigInvalid(_) | CliError::Env { .. } => 2,
            _ => 1,
        }
    }

    pub fn field_errors(&self) -> &[FieldError] {
        match self {
            CliError::ConfigInvalid(e) => e,
            _ => &[],
        }
    }
}
