use std::fmt;

use serde::{Deserialize, Serialize};

use super::ContourError;
use crate::data::TonalContext;

/// The within-token time covariate: sample time divided by token duration.
pub const TIME: &str = "normalized_t";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    /// Treatment-coded factor; the first level in sorted order is the reference.
    ParametricFactor,
    /// Centred univariate smooth of a covariate.
    Smooth,
    /// One centred smooth per level of a factor (needs the factor's main effect elsewhere).
    ByFactorSmooth,
    /// Per-level curve with first-order difference penalty plus ridge, sharing one λ.
    FactorSmooth,
    /// Per-level constant under a ridge penalty.
    RandomIntercept,
}

/// One additive term. Unset numeric fields take per-kind defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermSpec {
    pub kind: TermKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    /// Ridge weight relative to the difference penalty (factor smooths only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ridge: Option<f64>,
}

pub const DEFAULT_SMOOTH_K: usize = 10;
pub const DEFAULT_FS_K: usize = 10;
pub const DEFAULT_FS_RIDGE: f64 = 0.1;

impl TermSpec {
    fn bare(kind: TermKind) -> Self {
        Self {
            kind,
            covariate: None,
            factor: None,
            k: None,
            degree: None,
            order: None,
            ridge: None,
        }
    }

    pub fn parametric(factor: &str) -> Self {
        Self {
            factor: Some(factor.into()),
            ..Self::bare(TermKind::ParametricFactor)
        }
    }

    pub fn smooth(covariate: &str, k: usize) -> Self {
        Self {
            covariate: Some(covariate.into()),
            k: Some(k),
            ..Self::bare(TermKind::Smooth)
        }
    }

    pub fn by_smooth(covariate: &str, factor: &str, k: usize) -> Self {
        Self {
            covariate: Some(covariate.into()),
            factor: Some(factor.into()),
            k: Some(k),
            ..Self::bare(TermKind::ByFactorSmooth)
        }
    }

    pub fn factor_smooth(covariate: &str, factor: &str, k: usize) -> Self {
        Self {
            covariate: Some(covariate.into()),
            factor: Some(factor.into()),
            k: Some(k),
            ..Self::bare(TermKind::FactorSmooth)
        }
    }

    pub fn random_intercept(factor: &str) -> Self {
        Self {
            factor: Some(factor.into()),
            ..Self::bare(TermKind::RandomIntercept)
        }
    }

    pub fn k(&self) -> usize {
        self.k.unwrap_or(match self.kind {
            TermKind::FactorSmooth => DEFAULT_FS_K,
            _ => DEFAULT_SMOOTH_K,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree.unwrap_or(3)
    }

    pub fn order(&self) -> usize {
        self.order.unwrap_or(match self.kind {
            TermKind::FactorSmooth => 1,
            _ => 2,
        })
    }

    pub fn ridge(&self) -> f64 {
        self.ridge.unwrap_or(DEFAULT_FS_RIDGE)
    }

    pub fn is_penalized(&self) -> bool {
        self.kind != TermKind::ParametricFactor
    }

    /// mgcv-style label, used to refer to terms (e.g. when withholding one).
    pub fn label(&self) -> String {
        let cov = self.covariate.as_deref().unwrap_or("?");
        let fac = self.factor.as_deref().unwrap_or("?");
        match self.kind {
            TermKind::ParametricFactor => fac.to_string(),
            TermKind::Smooth => format!("s({cov})"),
            TermKind::ByFactorSmooth => format!("s({cov}, by={fac})"),
            TermKind::FactorSmooth => format!("s({cov}, {fac}, bs=fs)"),
            TermKind::RandomIntercept => format!("s({fac}, bs=re)"),
        }
    }

    pub(crate) fn check(&self) -> Result<(), ContourError> {
        let needs_cov = !matches!(self.kind, TermKind::ParametricFactor | TermKind::RandomIntercept);
        let needs_fac = self.kind != TermKind::Smooth;
        if needs_cov && self.covariate.is_none() {
            return Err(ContourError::Config(format!("{:?} term needs a covariate", self.kind)));
        }
        if needs_fac && self.factor.is_none() {
            return Err(ContourError::Config(format!("{:?} term needs a factor", self.kind)));
        }
        if needs_cov {
            let (k, d, m) = (self.k(), self.degree(), self.order());
            if k < d + 1 || m >= k || m == 0 {
                return Err(ContourError::Config(format!(
                    "{}: need degree + 1 <= k and 0 < order < k (k={k}, degree={d}, order={m})",
                    self.label()
                )));
            }
        }
        if let Some(r) = self.ridge {
            if !(r > 0.0 && r.is_finite()) {
                return Err(ContourError::Config(format!("{}: ridge must be positive", self.label())));
            }
        }
        Ok(())
    }
}

impl fmt::Display for TermSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

fn default_rho() -> f64 {
    0.95
}

/// An additive model for log f0 with a single global intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    /// Restrict to one tonal context, e.g. `"4.4"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(default = "default_rho")]
    pub ar1_rho: f64,
    pub terms: Vec<TermSpec>,
}

impl ModelSpec {
    pub fn context_filter(&self) -> Result<Option<TonalContext>, ContourError> {
        self.context
            .as_deref()
            .map(|c| c.parse().map_err(|_| ContourError::Config(format!("unknown tonal context {c:?}"))))
            .transpose()
    }

    /// The same model without the term labelled `label`.
    pub fn without(&self, label: &str) -> Result<ModelSpec, ContourError> {
        let terms: Vec<TermSpec> = self.terms.iter().filter(|t| t.label() != label).cloned().collect();
        if terms.len() == self.terms.len() {
            return Err(ContourError::UnknownTerm(label.to_string()));
        }
        Ok(ModelSpec {
            name: format!("{} - {label}", self.name),
            terms,
            ..self.clone()
        })
    }

    pub fn validate(&self) -> Result<(), ContourError> {
        if !(0.0..1.0).contains(&self.ar1_rho) {
            return Err(ContourError::Config(format!("ar1_rho {} outside [0, 1)", self.ar1_rho)));
        }
        self.context_filter()?;
        let mut seen = std::collections::BTreeSet::new();
        for t in &self.terms {
            t.check()?;
            if !seen.insert(t.label()) {
                return Err(ContourError::Config(format!("duplicate term {}", t.label())));
            }
        }
        Ok(())
    }

    /// The per-context word model: gender, by-gender time smooths, speaker
    /// random intercepts, factor smooths over tone pattern and word, and
    /// smooths of the four token-level covariates.
    pub fn word_model(context: &str, fs_k: usize) -> ModelSpec {
        ModelSpec {
            name: format!("context {context}"),
            context: Some(context.to_string()),
            ar1_rho: 0.95,
            terms: vec![
                TermSpec::parametric("gender"),
                TermSpec::by_smooth(TIME, "gender", 4),
                TermSpec::random_intercept("speaker"),
                TermSpec::factor_smooth(TIME, "tone_pattern", fs_k),
                TermSpec::factor_smooth(TIME, "word", fs_k),
                TermSpec::by_smooth("speech_rate", "gender", 4),
                TermSpec::smooth("norm_utt_pos", 4),
                TermSpec::smooth("bg_prob_prev", 4),
                TermSpec::smooth("bg_prob_fol", 4),
            ],
        }
    }

    /// Time smooth plus a factor smooth over `group`, fitted within one tone pattern.
    pub fn pattern_model(pattern: &str, group: &str, time_k: usize, fs_k: usize, ar1_rho: f64) -> ModelSpec {
        ModelSpec {
            name: format!("pattern {pattern}"),
            context: None,
            ar1_rho,
            terms: vec![TermSpec::smooth(TIME, time_k), TermSpec::factor_smooth(TIME, group, fs_k)],
        }
    }
}
