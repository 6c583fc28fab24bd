use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Line 0 marks a command-line override.
    #[error("{}", if *line == 0 { message.clone() } else { format!("line {line}: {message}") })]
    Parse { line: usize, message: String },
    #[error("{field}: {message}")]
    Validation { field: String, message: String },
    #[error("{0}")]
    Core(#[from] assim_core::Error),
    #[error("estimate blew up at step {step}")]
    BlowUp { step: usize },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("checks failed: {}", .0.join("; "))]
    CheckFailed(Vec<String>),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    /// 2 parse/validation, 3 runtime failure, 4 failed check, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Validation { .. } | CliError::Usage(_) => 2,
            CliError::Core(_) | CliError::BlowUp { .. } => 3,
            CliError::CheckFailed(_) => 4,
            CliError::Io { .. } => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Parse { .. } => "parse",
            CliError::Validation { .. } => "validation",
            CliError::Core(_) => "runtime",
            CliError::BlowUp { .. } => "blow_up",
            CliError::Io { .. } => "io",
            CliError::CheckFailed(_) => "check",
            CliError::Usage(_) => "usage",
        }
    }

    /// Structured error record in the config grammar.
    pub fn record(&self, experiment: &str) -> String {
        let mut s = format!("# assim error v1\nerror.experiment = {experiment}\nerror.kind = {}\nerror.exit_code = {}\n", self.kind(), self.exit_code());
        match self {
            CliError::Parse { line, .. } => s.push_str(&format!("error.line = {line}\n")),
            CliError::Validation { field, .. } => s.push_str(&format!("error.field = {field}\n")),
            CliError::BlowUp { step } => s.push_str(&format!("error.step = {step}\n")),
            _ => {}
        }
        s.push_str(&format!("error.message = {}\n", self.to_string().replace('\n', " ")));
        s
    }
}
