//! Pipeline commands and run configuration behind the `p2m` binary.

pub mod commands;
pub mod config;

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{} of {total} file(s) failed:\n{}", failed.len(), failed.iter().map(|(f, e)| format!("  {f}: {e}")).collect::<Vec<_>>().join("\n"))]
    Partial { total: usize, failed: Vec<(String, String)> },
}

impl From<pose2motion::Error> for CliError {
    fn from(e: pose2motion::Error) -> Self {
        use pose2motion::Error as E;
        let m = e.to_string();
        match e {
            E::Diverged { .. } | E::Numerical(_) => CliError::Numerical(m),
            E::Io { .. } | E::Diff(_) => CliError::Runtime(m),
            _ => CliError::Validation(m),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) | CliError::Partial { .. } => 2,
            CliError::Numerical(_) => 3,
        }
    }
}
