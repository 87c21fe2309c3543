//! Experiment orchestration behind the `condensegraph` binary.

pub mod config;
pub mod experiments;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("{context}: {source}")]
    Runtime {
        context: String,
        #[source]
        source: condensegraph::Error,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for configuration problems, 3 for everything that fails later.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } => 2,
            Self::Runtime { .. } | Self::Io { .. } => 3,
        }
    }

    pub(crate) fn runtime(context: impl Into<String>) -> impl FnOnce(condensegraph::Error) -> Self {
        let context = context.into();
        move |source| match source {
            condensegraph::Error::Config { field, reason } => Self::Config {
                field: field.to_string(),
                reason,
            },
            source => Self::Runtime { context, source },
        }
    }

    pub(crate) fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Self {
        let context = context.into();
        move |source| Self::Io { context, source }
    }
}

impl From<condensegraph::Error> for CliError {
    fn from(e: condensegraph::Error) -> Self {
        CliError::runtime("loading the graph")(e)
    }
}
