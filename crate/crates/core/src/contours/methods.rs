//! The three pitch-vector constructions and their CSV form.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::{debug, info, warn};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{fit_model, FittedModel};
use super::spec::{ModelSpec, TermKind, DEFAULT_FS_K, TIME};
use super::ContourError;
use crate::data::{time_grid, CorpusDataset, Gender, PitchMatrix, TokenRecord};
use crate::splines::{bspline_design, default_lambda_grid, gcv_select, smooth_penalty, BasisSpec, Penalty};
use crate::stats::zscore_in_place;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    I,
    II,
    III,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::I, Method::II, Method::III];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::I => "I",
            Method::II => "II",
            Method::III => "III",
        })
    }
}

impl FromStr for Method {
    type Err = ContourError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "I" | "1" => Ok(Method::I),
            "II" | "2" => Ok(Method::II),
            "III" | "3" => Ok(Method::III),
            other => Err(ContourError::Config(format!("unknown method {other:?}"))),
        }
    }
}

/// A token that got no row, and why.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Exclusion {
    pub token_id: String,
    pub reason: String,
}

/// Contours of one method, one row per (retained) token in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourSet {
    pub method: Method,
    pub matrix: PitchMatrix,
    /// Which fit produced each row.
    pub provenance: Vec<String>,
    pub excluded: Vec<Exclusion>,
}

pub const METHOD1_K: usize = 10;
pub const MIN_SAMPLES: usize = 4;

/// Method I: a separate penalized spline per token (k = 10, second-order
/// penalty, GCV), evaluated on a `grid_p`-point grid. Tokens with fewer than
/// four samples are excluded.
pub fn contours_method1(dataset: &CorpusDataset, grid_p: usize) -> Result<ContourSet, ContourError> {
    let grid = time_grid(grid_p);
    let spec = BasisSpec::cubic(METHOD1_K, 0.0, 1.0)?;
    let g_design = bspline_design(&spec, &grid)?;
    let penalty = vec![Penalty::single(0, smooth_penalty(&spec, 2))];
    let lambdas: Vec<Vec<f64>> = default_lambda_grid().into_iter().map(|l| vec![l]).collect();

    let fits: Vec<Result<Option<Vec<f64>>, ContourError>> = dataset
        .tokens
        .par_iter()
        .map(|tok| {
            let track = dataset
                .track(&tok.token_id)
                .ok_or_else(|| ContourError::EmptyData(format!("no f0 track for {}", tok.token_id)))?;
            if track.len() < MIN_SAMPLES {
                return Ok(None);
            }
            let x = bspline_design(&spec, &track.normalized_times())?;
            let y = DVector::from_vec(track.log_values());
            let (_, fit) = gcv_select(&x, &y, &penalty, &lambdas)?;
            Ok(Some((&g_design * &fit.coefficients).iter().copied().collect()))
        })
        .collect();

    let mut rows = Vec::new();
    let mut ids = Vec::new();
    let mut excluded = Vec::new();
    for (tok, fit) in dataset.tokens.iter().zip(fits) {
        match fit? {
            Some(r) => {
                rows.push(r);
                ids.push(tok.token_id.clone());
            }
            None => {
                warn!("method I: {} has fewer than {MIN_SAMPLES} samples; excluded", tok.token_id);
                excluded.push(Exclusion {
                    token_id: tok.token_id.clone(),
                    reason: "TooFewSamples".into(),
                });
            }
        }
    }
    let provenance = ids.iter().map(|id| format!("token {id}")).collect();
    Ok(ContourSet {
        method: Method::I,
        matrix: assemble(rows, ids, grid)?,
        provenance,
        excluded,
    })
}

fn assemble(rows: Vec<Vec<f64>>, ids: Vec<String>, grid: Vec<f64>) -> Result<PitchMatrix, ContourError> {
    let p = grid.len();
    let values = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
    Ok(PitchMatrix::new(values, ids, grid)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Method2Config {
    /// Grouping factor for the factor smooth (`word` or `sense_type`).
    pub group: String,
    pub time_k: usize,
    pub fs_k: usize,
    pub ar1_rho: f64,
}

impl Default for Method2Config {
    fn default() -> Self {
        Self {
            group: "word".into(),
            time_k: 10,
            fs_k: DEFAULT_FS_K,
            ar1_rho: 0.95,
        }
    }
}

/// Method II: per tone pattern, `s(t) + fs(t, group)`; every token of a
/// group level gets the same row (intercept + time smooth + its level curve).
pub fn contours_method2(
    dataset: &CorpusDataset,
    grid_p: usize,
    cfg: &Method2Config,
) -> Result<(ContourSet, Vec<FittedModel>), ContourError> {
    let grid = time_grid(grid_p);
    let patterns: Vec<String> = dataset
        .tokens
        .iter()
        .map(|t| t.tone_pattern.to_string())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if patterns.is_empty() {
        return Err(ContourError::EmptyData("no tokens for method II".into()));
    }
    let fitted: Vec<Result<(String, FittedModel, BTreeMap<String, Vec<f64>>), ContourError>> = patterns
        .par_iter()
        .map(|pat| {
            let subset = dataset.filter(|t| t.tone_pattern.to_string() == *pat);
            if subset.is_empty() {
                return Err(ContourError::EmptyPattern(pat.clone()));
            }
            let spec = ModelSpec::pattern_model(pat, &cfg.group, cfg.time_k, cfg.fs_k, cfg.ar1_rho);
            let model = fit_model(&spec, &subset)?;
            debug!("method II: pattern {pat}: edf {:.1}, {} GCV evaluations", model.edf, model.evaluations);
            let s = model.term_index(&format!("s({TIME})")).expect("time smooth present");
            let fs = model.find_term(TermKind::FactorSmooth, &cfg.group).expect("factor smooth present");
            let base: Vec<f64> = grid
                .iter()
                .map(|&t| Ok(model.intercept() + model.partial(s, None, t)?))
                .collect::<Result<_, ContourError>>()?;
            let mut curves = BTreeMap::new();
            for level in model.levels(fs) {
                let c = grid
                    .iter()
                    .zip(&base)
                    .map(|(&t, b)| Ok(b + model.partial(fs, Some(level), t)?))
                    .collect::<Result<Vec<f64>, ContourError>>()?;
                curves.insert(level.clone(), c);
            }
            Ok((pat.clone(), model, curves))
        })
        .collect();
    let mut models = Vec::new();
    let mut curves: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in fitted {
        let (pat, model, c) = r?;
        for (level, v) in c {
            curves.insert((pat.clone(), level), v);
        }
        models.push(model);
    }
    let mut rows = Vec::with_capacity(dataset.len());
    let mut ids = Vec::with_capacity(dataset.len());
    let mut provenance = Vec::with_capacity(dataset.len());
    for tok in &dataset.tokens {
        let pat = tok.tone_pattern.to_string();
        let level = tok
            .factor_value(&cfg.group)
            .ok_or_else(|| ContourError::UnknownField(cfg.group.clone()))?;
        rows.push(curves[&(pat.clone(), level)].clone());
        ids.push(tok.token_id.clone());
        provenance.push(format!("pattern {pat}"));
    }
    Ok((
        ContourSet {
            method: Method::II,
            matrix: assemble(rows, ids, grid)?,
            provenance,
            excluded: Vec::new(),
        },
        models,
    ))
}

fn model_for<'a>(models: &'a [FittedModel], tok: &TokenRecord) -> Option<&'a FittedModel> {
    let ctx = tok.tonal_context();
    models.iter().find(|m| match m.spec.context_filter() {
        Ok(Some(c)) => c == ctx,
        Ok(None) => true,
        Err(_) => false,
    })
}

/// Fit the per-context models (in parallel).
pub fn fit_context_models(specs: &[ModelSpec], dataset: &CorpusDataset) -> Result<Vec<FittedModel>, ContourError> {
    specs
        .par_iter()
        .map(|s| {
            let m = fit_model(s, dataset)?;
            info!("{}: {} tokens, edf {:.1}, {} GCV evaluations", s.name, m.n_tokens, m.edf, m.evaluations);
            Ok(m)
        })
        .collect()
}

/// Method III: each token's own prediction from its context's model.
pub fn contours_method3(
    dataset: &CorpusDataset,
    specs: &[ModelSpec],
    grid_p: usize,
) -> Result<(ContourSet, Vec<FittedModel>), ContourError> {
    let models = fit_context_models(specs, dataset)?;
    let set = contours_method3_fitted(dataset, &models, grid_p)?;
    Ok((set, models))
}

pub fn contours_method3_fitted(
    dataset: &CorpusDataset,
    models: &[FittedModel],
    grid_p: usize,
) -> Result<ContourSet, ContourError> {
    let grid = time_grid(grid_p);
    let mut rows = Vec::with_capacity(dataset.len());
    let mut ids = Vec::with_capacity(dataset.len());
    let mut provenance = Vec::with_capacity(dataset.len());
    let mut excluded = Vec::new();
    for tok in &dataset.tokens {
        match model_for(models, tok) {
            Some(m) => {
                rows.push(m.predict_token(tok, &grid)?);
                ids.push(tok.token_id.clone());
                provenance.push(m.spec.name.clone());
            }
            None => {
                warn!("method III: no model for context {} of {}", tok.tonal_context(), tok.token_id);
                excluded.push(Exclusion {
                    token_id: tok.token_id.clone(),
                    reason: format!("no model for context {}", tok.tonal_context()),
                });
            }
        }
    }
    Ok(ContourSet {
        method: Method::III,
        matrix: assemble(rows, ids, grid)?,
        provenance,
        excluded,
    })
}

/// Per-pattern reference contours: intercept + female time smooth + the
/// pattern's factor-smooth curve, averaged over the context models that saw
/// the pattern, then z-normalized.
pub fn gold_contours(models: &[FittedModel], grid_p: usize) -> Result<BTreeMap<String, Vec<f64>>, ContourError> {
    let grid = time_grid(grid_p);
    let female = Gender::Female.to_string();
    let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for m in models {
        let fs = m
            .find_term(TermKind::FactorSmooth, "tone_pattern")
            .ok_or_else(|| ContourError::Config(format!("{} has no tone-pattern factor smooth", m.spec.name)))?;
        let by = m
            .design
            .terms
            .iter()
            .position(|t| {
                t.spec.kind == TermKind::ByFactorSmooth
                    && t.spec.factor.as_deref() == Some("gender")
                    && t.spec.covariate.as_deref() == Some(TIME)
            });
        for pat in m.levels(fs).to_vec() {
            let mut v = Vec::with_capacity(grid.len());
            for &t in &grid {
                let mut y = m.intercept() + m.partial(fs, Some(&pat), t)?;
                if let Some(b) = by {
                    if m.levels(b).contains(&female) {
                        y += m.partial(b, Some(&female), t)?;
                    }
                }
                v.push(y);
            }
            let e = sums.entry(pat).or_insert_with(|| (vec![0.0; grid.len()], 0));
            for (a, b) in e.0.iter_mut().zip(&v) {
                *a += b;
            }
            e.1 += 1;
        }
    }
    let mut out = BTreeMap::new();
    for (pat, (mut v, n)) in sums {
        for x in v.iter_mut() {
            *x /= n as f64;
        }
        if !zscore_in_place(&mut v) {
            return Err(ContourError::ZeroVariance(format!("gold contour {pat}")));
        }
        out.insert(pat, v);
    }
    Ok(out)
}

/// z-score every row (mean 0, sample sd 1).
pub fn normalize_rows(contours: &ContourSet) -> Result<PitchMatrix, ContourError> {
    normalize_matrix(&contours.matrix)
}

pub fn normalize_matrix(m: &PitchMatrix) -> Result<PitchMatrix, ContourError> {
    let mut out = m.clone();
    for i in 0..m.nrows() {
        let mut r = m.row_vec(i);
        if !zscore_in_place(&mut r) {
            return Err(ContourError::ZeroVariance(m.row_ids[i].clone()));
        }
        for (j, v) in r.into_iter().enumerate() {
            out.values[(i, j)] = v;
        }
    }
    Ok(out)
}

/// Write `token_id,method,g0,...` rows.
pub fn write_contours(path: &Path, method: Method, m: &PitchMatrix) -> Result<(), ContourError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| ContourError::Io(e.to_string()))?;
    let mut header = vec!["token_id".to_string(), "method".to_string()];
    header.extend((0..m.ncols()).map(|j| format!("g{j}")));
    w.write_record(&header).map_err(|e| ContourError::Io(e.to_string()))?;
    for i in 0..m.nrows() {
        let mut rec = vec![m.row_ids[i].clone(), method.to_string()];
        rec.extend((0..m.ncols()).map(|j| format!("{}", m.values[(i, j)])));
        w.write_record(&rec).map_err(|e| ContourError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| ContourError::Io(e.to_string()))
}

pub fn read_contours(path: &Path) -> Result<(Method, PitchMatrix), ContourError> {
    let io = |e: csv::Error| ContourError::Io(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(io)?;
    let p = r.headers().map_err(io)?.len().saturating_sub(2);
    let mut method = None;
    let mut ids = Vec::new();
    let mut vals = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(io)?;
        ids.push(rec[0].to_string());
        method = Some(rec[1].parse::<Method>()?);
        for j in 0..p {
            let v: f64 = rec[j + 2]
                .parse()
                .map_err(|_| ContourError::Io(format!("{}: bad number {:?}", path.display(), &rec[j + 2])))?;
            vals.push(v);
        }
    }
    let method = method.ok_or_else(|| ContourError::EmptyData(path.display().to_string()))?;
    let values = DMatrix::from_row_slice(ids.len(), p, &vals);
    Ok((method, PitchMatrix::new(values, ids, time_grid(p))?))
}
