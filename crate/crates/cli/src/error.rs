use std::io;
use std::path::Path;

use spot_core::Error as CoreError;

/// Command failures, one variant per exit-code family.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    Dimension(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Other(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Io { .. } => 4,
            CliError::Format(_) => 5,
            CliError::Dimension(_) => 6,
            CliError::Numeric(_) => 7,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Format(_) => "format",
            CliError::Dimension(_) => "dimension",
            CliError::Numeric(_) => "numeric",
            CliError::Other(_) => "other",
        }
    }

    /// Single-line report: `error kind=<kind> code=<code> msg=<json string>`.
    pub fn report(&self) -> String {
        let msg = serde_json::to_string(&self.to_string()).expect("string serializes");
        format!("error kind={} code={} msg={msg}", self.kind(), self.exit_code())
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::Config(_) | CoreError::EmptySupport { .. } => CliError::Config(msg),
            CoreError::Io(source) => CliError::Io {
                path: "<stream>".into(),
                source,
            },
            CoreError::Format(_) | CoreError::Version { .. } | CoreError::Truncated(_) => CliError::Format(msg),
            CoreError::Dimension(_) | CoreError::Shape { .. } => CliError::Dimension(msg),
            CoreError::NonFinite(_) | CoreError::Training { .. } => CliError::Numeric(msg),
            CoreError::Contract(_) => CliError::Other(msg),
        }
    }
}
