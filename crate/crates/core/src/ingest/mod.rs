//! Reading the corpus files and trimming them into a clean dataset.
//!
//! File layouts (all UTF-8 CSV with a header row):
//!
//! * `tokens.csv`: `token_id,word,tone_pattern,speaker,gender,preceding_tone,following_tone,speech_rate,norm_utt_pos,bg_prob_prev,bg_prob_fol,sense_type`,
//!   optionally followed by extension columns
//! * `f0.csv`: `token_id,t_ms,f0_hz`
//! * `durations.csv`: `token_id,duration_ms`
//! * `embeddings.csv`: `token_id,e0,e1,...`

mod read;
mod trim;

pub use read::{
    read_embeddings, read_f0, read_tokens, write_durations, write_embeddings, write_f0,
    write_tokens, TOKEN_COLUMNS,
};
pub use trim::{
    outlier_filter, trim, ContextSummary, OutlierResult, OutlierScale, Removal, RemovalReason,
    TrimConfig, TrimReport,
};

use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("missing input file {0}")]
    MissingFile(String),
    #[error("line {line}, column {column}: {reason}")]
    Parse {
        line: u64,
        column: String,
        reason: String,
    },
    #[error("line {line}: unknown tone pattern {value:?}")]
    UnknownTonePattern { line: u64, value: String },
    #[error("line {line}: token {token_id} has non-positive f0")]
    NonPositiveF0 { line: u64, token_id: String },
    #[error("token {0}: sample times are not strictly increasing")]
    NonMonotoneTime(String),
    #[error("token {0} has f0 rows but no duration")]
    MissingDuration(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got} (line {line})")]
    EmbeddingDimMismatch {
        line: u64,
        expected: usize,
        got: usize,
    },
    #[error("invalid trim configuration: {0}")]
    Config(String),
    #[error("no tokens survive trimming")]
    EmptyResult,
    #[error("{0}")]
    Many(Violations),
}

/// Several independent problems found in one pass over the inputs.
#[derive(Debug)]
pub struct Violations(pub Vec<IngestError>);

impl fmt::Display for Violations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} problems:", self.0.len())?;
        for e in &self.0 {
            write!(f, "\n  {e}")?;
        }
        Ok(())
    }
}

impl IngestError {
    pub(crate) fn collect(mut errors: Vec<IngestError>) -> Option<IngestError> {
        match errors.len() {
            0 => None,
            1 => errors.pop(),
            _ => Some(IngestError::Many(Violations(errors))),
        }
    }

    /// All leaf errors, flattening `Many`.
    pub fn leaves(&self) -> Vec<&IngestError> {
        match self {
            IngestError::Many(v) => v.0.iter().flat_map(|e| e.leaves()).collect(),
            other => vec![other],
        }
    }
}
