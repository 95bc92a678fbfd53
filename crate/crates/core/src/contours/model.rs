use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::design::{Design, SparseRow};
use super::spec::{ModelSpec, TermKind};
use super::ContourError;
use crate::data::{CorpusDataset, TokenRecord};
use crate::splines::{
    ar1_whiten, ar1_whiten_rows, default_lambda_grid, gcv_score, select_gcv_index, PenalizedSystem, SplineError,
};

/// Smoothing-parameter search settings.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Candidate values for every term's λ.
    pub grid: Vec<f64>,
    /// Upper bound on coordinate sweeps over the terms.
    pub max_sweeps: usize,
    /// Starting λ per term label; terms not listed start at 1.
    pub start: Vec<(String, f64)>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            grid: default_lambda_grid(),
            max_sweeps: 4,
            start: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub(crate) design: Design,
    pub coefficients: DVector<f64>,
    /// λ per penalized term, in term order.
    pub lambdas: Vec<(String, f64)>,
    /// edf per term, in term order (intercept excluded).
    pub term_edf: Vec<(String, f64)>,
    pub edf: f64,
    pub rss: f64,
    pub n_obs: usize,
    pub n_tokens: usize,
    pub gcv: f64,
    /// `None` when the residuals vanish.
    pub aic: Option<f64>,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermSummary {
    pub term: String,
    pub kind: TermKind,
    pub n_coef: usize,
    pub n_levels: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub edf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    pub ar1_rho: f64,
    pub n_obs: usize,
    pub n_tokens: usize,
    pub n_coef: usize,
    pub intercept: f64,
    pub terms: Vec<TermSummary>,
    pub edf: f64,
    pub rss: f64,
    pub gcv: f64,
    pub aic: Option<f64>,
    pub gcv_evaluations: usize,
}

fn lambda_key(idx: &[usize]) -> Vec<usize> {
    idx.to_vec()
}

struct Evaluation {
    beta: DVector<f64>,
    edf: f64,
    traces: Vec<f64>,
    rss: f64,
    gcv: f64,
}

/// Fit `spec` to the (context-filtered) dataset with default search settings.
pub fn fit_model(spec: &ModelSpec, dataset: &CorpusDataset) -> Result<FittedModel, ContourError> {
    fit_model_with(spec, dataset, &FitOptions::default())
}

pub fn fit_model_with(spec: &ModelSpec, dataset: &CorpusDataset, opts: &FitOptions) -> Result<FittedModel, ContourError> {
    spec.validate()?;
    if opts.grid.is_empty() || opts.grid.iter().any(|l| !(*l >= 0.0)) {
        return Err(ContourError::Config("λ grid must be non-empty and non-negative".into()));
    }
    let context = spec.context_filter()?;
    let tokens: Vec<&TokenRecord> = dataset
        .tokens
        .iter()
        .filter(|t| context.is_none_or(|c| t.tonal_context() == c))
        .collect();
    if tokens.is_empty() {
        return Err(ContourError::EmptyData(spec.name.clone()));
    }
    let mut times = Vec::with_capacity(tokens.len());
    let mut ys = Vec::with_capacity(tokens.len());
    for t in &tokens {
        let track = dataset
            .track(&t.token_id)
            .ok_or_else(|| ContourError::EmptyData(format!("no f0 track for {}", t.token_id)))?;
        times.push(track.normalized_times());
        ys.push(track.log_values());
    }
    let design = Design::build(spec, &tokens, &times)?;
    let p = design.p;

    // whitened normal equations
    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    let mut yy = 0.0;
    let mut n_obs = 0;
    let mut row = SparseRow::new();
    for ((tok, ts), y) in tokens.iter().zip(&times).zip(&ys) {
        let mut rows = Vec::with_capacity(ts.len());
        for &t in ts {
            design.row(tok, t, &mut row)?;
            rows.push(row.clone());
        }
        let (rows, y) = if spec.ar1_rho > 0.0 {
            (ar1_whiten_rows(&rows, spec.ar1_rho)?, ar1_whiten(y, spec.ar1_rho)?)
        } else {
            (rows, y.clone())
        };
        for (r, &yv) in rows.iter().zip(&y) {
            for &(i, vi) in r {
                rhs[i] += vi * yv;
                for &(j, vj) in r {
                    if j >= i {
                        gram[i * p + j] += vi * vj;
                    }
                }
            }
            yy += yv * yv;
        }
        n_obs += y.len();
    }
    for i in 0..p {
        for j in 0..i {
            gram[i * p + j] = gram[j * p + i];
        }
    }
    let gram = DMatrix::from_row_slice(p, p, &gram);
    let rhs = DVector::from_vec(rhs);
    let system = PenalizedSystem::new(gram.clone(), rhs.clone(), design.penalties.clone(), design.separable_ranges())?;

    let evaluate = |lams: &[f64]| -> Result<Evaluation, SplineError> {
        let sol = system.solve(lams)?;
        let fb = &gram * &sol.beta;
        let rss = (yy - 2.0 * sol.beta.dot(&rhs) + sol.beta.dot(&fb)).max(0.0);
        Ok(Evaluation {
            gcv: gcv_score(n_obs, rss, sol.edf),
            beta: sol.beta,
            edf: sol.edf,
            traces: sol.penalty_traces,
            rss,
        })
    };

    // coordinate descent over the per-term grids
    let m = design.penalties.len();
    let grid = &opts.grid;
    let start_index = |lam: f64| {
        (0..grid.len())
            .min_by(|&a, &b| {
                let da = (grid[a].max(1e-300).ln() - lam.max(1e-300).ln()).abs();
                let db = (grid[b].max(1e-300).ln() - lam.max(1e-300).ln()).abs();
                da.partial_cmp(&db).unwrap()
            })
            .unwrap()
    };
    let penalized: Vec<&str> = design
        .terms
        .iter()
        .filter(|t| t.penalty.is_some())
        .map(|t| t.label.as_str())
        .collect();
    let mut idx: Vec<usize> = penalized
        .iter()
        .map(|label| {
            let lam = opts.start.iter().find(|(l, _)| l == label).map_or(1.0, |(_, v)| *v);
            start_index(lam)
        })
        .collect();
    let scale = yy / n_obs as f64;
    let mut cache: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut evaluations = 0;
    if m > 0 {
        for _sweep in 0..opts.max_sweeps.max(1) {
            let mut changed = false;
            for j in 0..m {
                let candidates: Vec<Vec<usize>> = (0..grid.len())
                    .map(|g| {
                        let mut c = idx.clone();
                        c[j] = g;
                        c
                    })
                    .collect();
                let todo: Vec<&Vec<usize>> = candidates.iter().filter(|c| !cache.contains_key(*c)).collect();
                let fresh: Vec<(Vec<usize>, f64)> = todo
                    .par_iter()
                    .map(|c| {
                        let lams: Vec<f64> = c.iter().map(|&g| grid[g]).collect();
                        let score = evaluate(&lams).map_or(f64::INFINITY, |e| e.gcv);
                        (lambda_key(c), score)
                    })
                    .collect();
                evaluations += fresh.len();
                cache.extend(fresh);
                let scores: Vec<f64> = candidates.iter().map(|c| cache[c]).collect();
                if scores.iter().all(|s| !s.is_finite()) {
                    continue;
                }
                let pick = select_gcv_index(&scores, grid, scale);
                if pick != idx[j] {
                    idx[j] = pick;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }
    let lams: Vec<f64> = idx.iter().map(|&g| grid[g]).collect();
    let best = evaluate(&lams)?;
    evaluations += 1;

    let mut term_edf = Vec::with_capacity(design.terms.len());
    for t in &design.terms {
        let e = match t.penalty {
            Some(j) => t.ncols as f64 - best.traces[j],
            None => t.ncols as f64,
        };
        term_edf.push((t.label.clone(), e));
    }
    let probe = crate::splines::PenalizedFit {
        coefficients: DVector::zeros(0),
        lambdas: lams.clone(),
        edf: best.edf,
        rss: best.rss,
        n_obs,
        yy,
        penalty_traces: Vec::new(),
    };
    let aic = crate::splines::aic(&probe).ok();
    Ok(FittedModel {
        spec: spec.clone(),
        lambdas: penalized.iter().map(|s| s.to_string()).zip(lams).collect(),
        term_edf,
        coefficients: best.beta,
        edf: best.edf,
        rss: best.rss,
        gcv: best.gcv,
        n_obs,
        n_tokens: tokens.len(),
        aic,
        evaluations,
        design,
    })
}

impl FittedModel {
    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn term_labels(&self) -> Vec<String> {
        self.design.terms.iter().map(|t| t.label.clone()).collect()
    }

    pub fn term_index(&self, label: &str) -> Option<usize> {
        self.design.terms.iter().position(|t| t.label == label)
    }

    /// First term of `kind` grouped by `factor`.
    pub fn find_term(&self, kind: TermKind, factor: &str) -> Option<usize> {
        self.design
            .terms
            .iter()
            .position(|t| t.spec.kind == kind && t.spec.factor.as_deref() == Some(factor))
    }

    pub fn levels(&self, term: usize) -> &[String] {
        &self.design.terms[term].levels
    }

    /// Contribution of one term at covariate value `x` for factor `level`.
    pub fn partial(&self, term: usize, level: Option<&str>, x: f64) -> Result<f64, ContourError> {
        let mut row = SparseRow::new();
        self.design.terms[term].entries(x, level, &mut row)?;
        Ok(row.iter().map(|&(c, v)| v * self.coefficients[c]).sum())
    }

    /// Log-f0 prediction for `token` at the within-token times `t`.
    pub fn predict_token(&self, token: &TokenRecord, t: &[f64]) -> Result<Vec<f64>, ContourError> {
        let mut row = SparseRow::new();
        t.iter()
            .map(|&ti| {
                self.design.row(token, ti, &mut row)?;
                Ok(row.iter().map(|&(c, v)| v * self.coefficients[c]).sum())
            })
            .collect()
    }

    pub fn summary(&self) -> ModelSummary {
        let terms = self
            .design
            .terms
            .iter()
            .zip(&self.term_edf)
            .map(|(t, (_, edf))| TermSummary {
                term: t.label.clone(),
                kind: t.spec.kind,
                n_coef: t.ncols,
                n_levels: t.levels.len(),
                lambda: self.lambdas.iter().find(|(l, _)| *l == t.label).map(|(_, v)| *v),
                edf: *edf,
            })
            .collect();
        ModelSummary {
            name: self.spec.name.clone(),
            context: self.spec.context.clone(),
            ar1_rho: self.spec.ar1_rho,
            n_obs: self.n_obs,
            n_tokens: self.n_tokens,
            n_coef: self.design.p,
            intercept: self.intercept(),
            terms,
            edf: self.edf,
            rss: self.rss,
            gcv: self.gcv,
            aic: self.aic,
            gcv_evaluations: self.evaluations,
        }
    }

    pub fn aic_value(&self) -> Result<f64, ContourError> {
        self.aic.ok_or(ContourError::Spline(SplineError::DegenerateFit))
    }
}

/// `AIC(reduced) - AIC(full)`: positive when the withheld term helped.
pub fn compare_aic(full: &ModelSpec, reduced: &ModelSpec, dataset: &CorpusDataset) -> Result<f64, ContourError> {
    let f = fit_model(full, dataset)?;
    if full == reduced {
        return Ok(0.0);
    }
    let r = fit_model(reduced, dataset)?;
    Ok(r.aic_value()? - f.aic_value()?)
}

/// Same as [`compare_aic`] but reusing a fitted full model and warm-starting
/// the reduced fit from its smoothing parameters.
pub fn compare_aic_fitted(full: &FittedModel, withheld: &str, dataset: &CorpusDataset) -> Result<(FittedModel, f64), ContourError> {
    let reduced = full.spec.without(withheld)?;
    let opts = FitOptions {
        start: full.lambdas.clone(),
        ..FitOptions::default()
    };
    let r = fit_model_with(&reduced, dataset, &opts)?;
    let d = r.aic_value()? - full.aic_value()?;
    Ok((r, d))
}
