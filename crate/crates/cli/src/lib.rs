//! Batch front-end for quenched limit-theorem experiments.
//!
//! A scenario file describes the base process, the map family, the grid and
//! the observable. [`pipeline::execute`] runs the requested stages and writes
//! CSV results plus a `manifest.json` with digests of every emitted file.

pub mod config;
pub mod manifest;
pub mod pipeline;

pub use config::{ExperimentConfig, Scenario};
pub use manifest::Manifest;
pub use pipeline::{execute, validate_report, Verb};

/// Failures, each mapped to a fixed process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config field `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: quenched::Error,
    },
    #[error("output error: {0}")]
    Output(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Validation { .. } => 3,
            CliError::Stage { .. } | CliError::Output(_) => 4,
        }
    }

    pub(crate) fn in_stage(stage: &str, e: quenched::Error) -> Self {
        match e {
            quenched::Error::Config { field, message } => CliError::Validation {
                field,
                message: format!("{message} (stage {stage})"),
            },
            source => CliError::Stage {
                stage: stage.to_string(),
                source,
            },
        }
    }
}

impl From<quenched::Error> for CliError {
    fn from(e: quenched::Error) -> Self {
        CliError::in_stage("validate", e)
    }
}
