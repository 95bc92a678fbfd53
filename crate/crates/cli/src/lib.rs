//! Batch pipeline behind the `tonecontour` binary: ingest, fit, evaluate,
//! and the synthetic corpus generator.

pub mod config;
pub mod pipeline;
pub mod svg;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Input data failed validation; every violation found is listed.
    #[error("validation failed:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl PipelineError {
    /// 2 for bad input or configuration, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) | PipelineError::Config(_) => 2,
            PipelineError::Stage { .. } | PipelineError::Io(_) => 1,
        }
    }
}
