use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {field}: {reason}")]
    Config { field: String, reason: String },
    #[error("{0}")]
    Runtime(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no log files found in {0}")]
    MissingLog(PathBuf),
}

impl CliError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    /// 0 success, 1 config, 2 runtime, 3 IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 1,
            CliError::Runtime(_) => 2,
            CliError::Io { .. } | CliError::MissingLog(_) => 3,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        let context = "csv".to_string();
        match e.into_kind() {
            csv::ErrorKind::Io(source) => CliError::Io { context, source },
            other => CliError::Io {
                context,
                source: std::io::Error::other(format!("{other:?}")),
            },
        }
    }
}
