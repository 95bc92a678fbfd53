//! Penalized B-spline regression engine.
//!
//! Cubic (by default) B-spline bases on open-uniform knots, difference
//! penalties, penalized least squares with a block-structured solver, GCV
//! smoothing-parameter selection, effective degrees of freedom, AIC, and AR(1)
//! whitening of time-ordered observations.
//!
//! Values of edf and AIC are specific to this engine and comparable only
//! between fits it produced.

mod ar1;
mod basis;
mod fit;
pub mod linalg;
mod penalty;

pub use ar1::{ar1_whiten, ar1_whiten_groups, ar1_whiten_rows};
pub use basis::{bspline_design, BasisSpec};
pub use fit::{
    aic, default_lambda_grid, gcv_score, gcv_select, penalized_ls, select_gcv_index,
    PenalizedFit, Weights,
};
pub use linalg::{Penalty, PenaltyBlock, PenalizedSystem, SystemSolution};
pub use penalty::{difference_penalty, smooth_penalty, PenaltySpec};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SplineError {
    #[error("x = {0} lies outside the basis domain")]
    OutOfDomain(f64),
    #[error("invalid basis: {0}")]
    InvalidBasis(String),
    #[error("penalized normal matrix is singular (column {column})")]
    SingularSystem { column: usize },
    #[error("residual sum of squares is zero; AIC undefined")]
    DegenerateFit,
    #[error("AR(1) coefficient {0} must lie in [0, 1)")]
    InvalidRho(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}
