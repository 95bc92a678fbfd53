//! Additive models of log f0 and the three pitch-vector constructions.
//!
//! Models are sums of treatment-coded factors, centred smooths, per-level
//! smooths, factor smooths and random intercepts over sample-level rows (one
//! row per f0 sample; token covariates are broadcast). Residuals are AR(1)
//! whitened within each token and every penalized term gets its own GCV-chosen
//! smoothing parameter.

mod design;
mod methods;
mod model;
mod spec;

pub use methods::{
    contours_method1, contours_method2, contours_method3, contours_method3_fitted, fit_context_models,
    gold_contours, normalize_matrix, normalize_rows, read_contours, write_contours, ContourSet, Exclusion,
    Method, Method2Config, METHOD1_K, MIN_SAMPLES,
};
pub use model::{
    compare_aic, compare_aic_fitted, fit_model, fit_model_with, FitOptions, FittedModel, ModelSummary,
    TermSummary,
};
pub use spec::{ModelSpec, TermKind, TermSpec, DEFAULT_FS_K, DEFAULT_FS_RIDGE, DEFAULT_SMOOTH_K, TIME};

use thiserror::Error;

use crate::data::DataError;
use crate::splines::SplineError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContourError {
    #[error("no observations: {0}")]
    EmptyData(String),
    #[error("no tokens for tone pattern {0}")]
    EmptyPattern(String),
    #[error("unknown field {0:?}")]
    UnknownField(String),
    #[error("level {level:?} of {factor} was not present at fit time")]
    UnseenLevel { factor: String, level: String },
    #[error("covariate {0} does not vary")]
    DegenerateCovariate(String),
    #[error("model has no term {0:?}")]
    UnknownTerm(String),
    #[error("token {0} has too few samples")]
    TooFewSamples(String),
    #[error("row {0} has zero variance")]
    ZeroVariance(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error(transparent)]
    Data(#[from] DataError),
}
