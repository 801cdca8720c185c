use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("stage `{stage}` needs the output of stage `{missing}`: {} not found; run `{missing}` first", artifact.display())]
    MissingDependency {
        stage: &'static str,
        missing: &'static str,
        artifact: PathBuf,
    },

    #[error(transparent)]
    Core(#[from] groupcl::Error),
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}
