use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage {stage} needs {} (produced by stage {upstream})", missing.display())]
    StageDependency { stage: &'static str, upstream: &'static str, missing: PathBuf },
    #[error("i/o error at {}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Corpus(#[from] mmprofile::corpus::CorpusError),
    #[error(transparent)]
    Image(#[from] mmprofile::image_model::ImageModelError),
    #[error(transparent)]
    Text(#[from] mmprofile::text_model::TextModelError),
    #[error(transparent)]
    Stacking(#[from] mmprofile::stacking::StackingError),
    #[error(transparent)]
    Evaluation(#[from] mmprofile::evaluation::EvalError),
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, e: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.into(), message: e.to_string() }
    }

    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
