use std::path::PathBuf;

use misr_core::layout::LayoutError;
use misr_core::neuralnet::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Network(#[from] NnError),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    /// 1 for a training divergence, 2 for usage, configuration, data and
    /// I/O problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Network(NnError::Divergence { .. }) => 1,
            _ => 2,
        }
    }

    pub fn data(e: impl std::fmt::Display) -> Self {
        CliError::Data(e.to_string())
    }
}

pub(crate) fn io_at(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
