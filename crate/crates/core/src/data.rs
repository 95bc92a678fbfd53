//! Domain data model: f0 tracks, token metadata, the cross-referenced corpus,
//! and the row-aligned pitch and semantic matrices.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("token {0} has no f0 track")]
    MissingTrack(String),
    #[error("token {0} appears more than once")]
    DuplicateToken(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    EmbeddingDimMismatch { expected: usize, got: usize },
    #[error("token {0} has no embedding")]
    MissingEmbedding(String),
    #[error("token {token_id}: non-positive f0 at t = {t_ms} ms")]
    NonPositiveF0 { token_id: String, t_ms: f64 },
    #[error("token {token_id}: {reason}")]
    InvalidTrack { token_id: String, reason: String },
    #[error("unknown tone pattern {0:?}")]
    UnknownTonePattern(String),
    #[error("invalid value {value:?} for {field}")]
    InvalidValue { field: &'static str, value: String },
    #[error("matrix shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Every violation found while cross-referencing inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<DataError>,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} validation error(s):", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationReport {}

/// A disyllabic tone pattern: first syllable T1..T4, second T0..T4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TonePattern {
    first: u8,
    second: u8,
}

impl TonePattern {
    pub fn new(first: u8, second: u8) -> Result<Self, DataError> {
        if (1..=4).contains(&first) && second <= 4 {
            Ok(Self { first, second })
        } else {
            Err(DataError::UnknownTonePattern(format!("T{first}-T{second}")))
        }
    }

    pub fn first(&self) -> u8 {
        self.first
    }

    pub fn second(&self) -> u8 {
        self.second
    }

    /// The twenty patterns in conventional order (neutral tone last within each first tone).
    pub fn all() -> Vec<TonePattern> {
        let mut out = Vec::with_capacity(20);
        for first in 1..=4 {
            for second in [1, 2, 3, 4, 0] {
                out.push(TonePattern { first, second });
            }
        }
        out
    }
}

impl fmt::Display for TonePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}-T{}", self.first, self.second)
    }
}

impl FromStr for TonePattern {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DataError::UnknownTonePattern(s.to_string());
        let (a, b) = s.trim().split_once('-').ok_or_else(bad)?;
        let digit = |p: &str| -> Option<u8> {
            let d = p.strip_prefix('T').or_else(|| p.strip_prefix('t'))?;
            if d.len() == 1 {
                d.parse().ok()
            } else {
                None
            }
        };
        let first = digit(a).ok_or_else(bad)?;
        let second = digit(b).ok_or_else(bad)?;
        TonePattern::new(first, second).map_err(|_| bad())
    }
}

impl TryFrom<String> for TonePattern {
    type Error = DataError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<TonePattern> for String {
    fn from(p: TonePattern) -> String {
        p.to_string()
    }
}

/// Tone of a neighbouring syllable, or a pause.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ContextTone {
    T0,
    T1,
    T2,
    T3,
    T4,
    Pause,
}

impl ContextTone {
    pub const ALL: [ContextTone; 6] = [
        ContextTone::T1,
        ContextTone::T2,
        ContextTone::T3,
        ContextTone::T4,
        ContextTone::T0,
        ContextTone::Pause,
    ];
}

impl fmt::Display for ContextTone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ContextTone::T0 => "0",
            ContextTone::T1 => "1",
            ContextTone::T2 => "2",
            ContextTone::T3 => "3",
            ContextTone::T4 => "4",
            ContextTone::Pause => "PAUSE",
        };
        f.write_str(s)
    }
}

impl FromStr for ContextTone {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "0" => Ok(ContextTone::T0),
            "1" => Ok(ContextTone::T1),
            "2" => Ok(ContextTone::T2),
            "3" => Ok(ContextTone::T3),
            "4" => Ok(ContextTone::T4),
            p if p.eq_ignore_ascii_case("pause") => Ok(ContextTone::Pause),
            other => Err(DataError::InvalidValue {
                field: "context tone",
                value: other.to_string(),
            }),
        }
    }
}

/// (preceding tone, following tone); rendered as e.g. `4.4` or `PAUSE.1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TonalContext {
    pub preceding: ContextTone,
    pub following: ContextTone,
}

impl TonalContext {
    pub fn new(preceding: ContextTone, following: ContextTone) -> Self {
        Self {
            preceding,
            following,
        }
    }

    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for TonalContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.preceding, self.following)
    }
}

impl FromStr for TonalContext {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s.trim().split_once('.').ok_or_else(|| DataError::InvalidValue {
            field: "tonal context",
            value: s.to_string(),
        })?;
        Ok(TonalContext::new(a.parse()?, b.parse()?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Female => "female",
            Gender::Male => "male",
        })
    }
}

impl FromStr for Gender {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "female" | "f" => Ok(Gender::Female),
            "male" | "m" => Ok(Gender::Male),
            _ => Err(DataError::InvalidValue {
                field: "gender",
                value: s.to_string(),
            }),
        }
    }
}

/// Whether track values are raw Hz or natural-log Hz.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum F0Scale {
    Hz,
    LogHz,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F0Sample {
    /// Time since token onset, ms.
    pub t_ms: f64,
    /// f0 in the unit given by the owning track's scale.
    pub f0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F0Track {
    pub token_id: String,
    pub samples: Vec<F0Sample>,
    pub duration_ms: f64,
    pub scale: F0Scale,
}

impl F0Track {
    /// Validating constructor for a raw (Hz) track.
    pub fn new(
        token_id: impl Into<String>,
        samples: Vec<F0Sample>,
        duration_ms: f64,
    ) -> Result<Self, DataError> {
        let token_id = token_id.into();
        let invalid = |reason: String| DataError::InvalidTrack {
            token_id: token_id.clone(),
            reason,
        };
        if !(duration_ms > 0.0) || !duration_ms.is_finite() {
            return Err(invalid(format!("duration {duration_ms} must be positive")));
        }
        if samples.is_empty() {
            return Err(invalid("track has no samples".into()));
        }
        for (i, s) in samples.iter().enumerate() {
            if !(s.f0 > 0.0) || !s.f0.is_finite() {
                return Err(DataError::NonPositiveF0 {
                    token_id: token_id.clone(),
                    t_ms: s.t_ms,
                });
            }
            if !(s.t_ms >= 0.0) || s.t_ms > duration_ms {
                return Err(invalid(format!(
                    "sample time {} outside [0, {duration_ms}]",
                    s.t_ms
                )));
            }
            if i > 0 && s.t_ms <= samples[i - 1].t_ms {
                return Err(invalid(format!("time {} not strictly increasing", s.t_ms)));
            }
        }
        Ok(Self {
            token_id,
            samples,
            duration_ms,
            scale: F0Scale::Hz,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample times divided by the token duration, in [0, 1].
    pub fn normalized_times(&self) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| (s.t_ms / self.duration_ms).clamp(0.0, 1.0))
            .collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.f0).collect()
    }

    /// Values on the natural-log scale, regardless of the stored scale.
    pub fn log_values(&self) -> Vec<f64> {
        match self.scale {
            F0Scale::Hz => self.samples.iter().map(|s| s.f0.ln()).collect(),
            F0Scale::LogHz => self.values(),
        }
    }
}

/// Replace every f0 value by its natural logarithm.
pub fn log_f0(track: &F0Track) -> Result<F0Track, DataError> {
    if track.scale == F0Scale::LogHz {
        return Ok(track.clone());
    }
    let mut samples = Vec::with_capacity(track.samples.len());
    for s in &track.samples {
        if !(s.f0 > 0.0) {
            return Err(DataError::NonPositiveF0 {
                token_id: track.token_id.clone(),
                t_ms: s.t_ms,
            });
        }
        samples.push(F0Sample {
            t_ms: s.t_ms,
            f0: s.f0.ln(),
        });
    }
    Ok(F0Track {
        token_id: track.token_id.clone(),
        samples,
        duration_ms: track.duration_ms,
        scale: F0Scale::LogHz,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub token_id: String,
    pub word: String,
    pub tone_pattern: TonePattern,
    pub speaker: String,
    pub gender: Gender,
    pub preceding_tone: ContextTone,
    pub following_tone: ContextTone,
    /// Syllables per second.
    pub speech_rate: f64,
    pub norm_utt_pos: f64,
    pub bg_prob_prev: f64,
    pub bg_prob_fol: f64,
    pub sense_type: Option<String>,
    /// Extension columns, kept verbatim and usable as model covariates or factors.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

impl TokenRecord {
    pub fn tonal_context(&self) -> TonalContext {
        TonalContext::new(self.preceding_tone, self.following_tone)
    }

    /// Checks field ranges; categorical fields are valid by construction.
    pub fn validate(&self) -> Result<(), DataError> {
        let check = |field: &'static str, v: f64, ok: bool| {
            if ok && v.is_finite() {
                Ok(())
            } else {
                Err(DataError::InvalidValue {
                    field,
                    value: v.to_string(),
                })
            }
        };
        check("speech_rate", self.speech_rate, self.speech_rate > 0.0)?;
        check(
            "norm_utt_pos",
            self.norm_utt_pos,
            (0.0..=1.0).contains(&self.norm_utt_pos),
        )?;
        check(
            "bg_prob_prev",
            self.bg_prob_prev,
            (0.0..=1.0).contains(&self.bg_prob_prev),
        )?;
        check(
            "bg_prob_fol",
            self.bg_prob_fol,
            (0.0..=1.0).contains(&self.bg_prob_fol),
        )?;
        Ok(())
    }

    /// Value of a categorical field by name.
    pub fn factor_value(&self, name: &str) -> Option<String> {
        match name {
            "word" => Some(self.word.clone()),
            "tone_pattern" => Some(self.tone_pattern.to_string()),
            "speaker" => Some(self.speaker.clone()),
            "gender" => Some(self.gender.to_string()),
            "preceding_tone" => Some(self.preceding_tone.to_string()),
            "following_tone" => Some(self.following_tone.to_string()),
            "tonal_context" => Some(self.tonal_context().label()),
            "sense_type" => self.sense_type.clone(),
            other => self.extra.get(other).cloned(),
        }
    }

    /// Value of a token-level numeric field by name.
    pub fn covariate_value(&self, name: &str) -> Option<f64> {
        match name {
            "speech_rate" => Some(self.speech_rate),
            "norm_utt_pos" => Some(self.norm_utt_pos),
            "bg_prob_prev" => Some(self.bg_prob_prev),
            "bg_prob_fol" => Some(self.bg_prob_fol),
            other => self.extra.get(other).and_then(|v| v.trim().parse().ok()),
        }
    }
}

/// Tokens, their tracks and (optionally) embeddings, cross-referenced.
/// Tokens are held in ascending `token_id` order.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusDataset {
    pub tokens: Vec<TokenRecord>,
    pub tracks: BTreeMap<String, F0Track>,
    pub embeddings: Option<BTreeMap<String, Vec<f64>>>,
}

impl CorpusDataset {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.embeddings
            .as_ref()
            .and_then(|e| e.values().next().map(Vec::len))
    }

    pub fn track(&self, token_id: &str) -> Option<&F0Track> {
        self.tracks.get(token_id)
    }

    pub fn words(&self) -> BTreeSet<String> {
        self.tokens.iter().map(|t| t.word.clone()).collect()
    }

    /// Keep only tokens satisfying the predicate (tracks and embeddings follow).
    pub fn filter<F: Fn(&TokenRecord) -> bool>(&self, keep: F) -> CorpusDataset {
        let tokens: Vec<TokenRecord> = self.tokens.iter().filter(|t| keep(t)).cloned().collect();
        let ids: BTreeSet<&str> = tokens.iter().map(|t| t.token_id.as_str()).collect();
        let tracks = self
            .tracks
            .iter()
            .filter(|(k, _)| ids.contains(k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let embeddings = self.embeddings.as_ref().map(|e| {
            e.iter()
                .filter(|(k, _)| ids.contains(k.as_str()))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect()
        });
        CorpusDataset {
            tokens,
            tracks,
            embeddings,
        }
    }

    /// Embedding rows for the given token ids, in order.
    pub fn semantic_matrix(&self, ids: &[String]) -> Result<SemanticMatrix, DataError> {
        let emb = self
            .embeddings
            .as_ref()
            .ok_or_else(|| DataError::ShapeMismatch("dataset has no embeddings".into()))?;
        let q = self.embedding_dim().unwrap_or(0);
        let mut values = DMatrix::zeros(ids.len(), q);
        for (i, id) in ids.iter().enumerate() {
            let v = emb
                .get(id)
                .ok_or_else(|| DataError::MissingEmbedding(id.clone()))?;
            for (j, x) in v.iter().enumerate() {
                values[(i, j)] = *x;
            }
        }
        SemanticMatrix::new(values, ids.to_vec())
    }
}

/// Cross-reference tokens, tracks and embeddings into a dataset,
/// reporting every violation rather than stopping at the first.
pub fn build_dataset(
    tokens: Vec<TokenRecord>,
    tracks: BTreeMap<String, F0Track>,
    embeddings: Option<BTreeMap<String, Vec<f64>>>,
) -> Result<CorpusDataset, ValidationReport> {
    let mut violations = Vec::new();
    let mut seen = BTreeSet::new();
    let mut kept = Vec::with_capacity(tokens.len());
    for t in tokens {
        if !seen.insert(t.token_id.clone()) {
            violations.push(DataError::DuplicateToken(t.token_id.clone()));
            continue;
        }
        if let Err(e) = t.validate() {
            violations.push(e);
        }
        if !tracks.contains_key(&t.token_id) {
            violations.push(DataError::MissingTrack(t.token_id.clone()));
        }
        kept.push(t);
    }
    if let Some(emb) = &embeddings {
        let mut expected: Option<usize> = None;
        for t in &kept {
            match emb.get(&t.token_id) {
                None => violations.push(DataError::MissingEmbedding(t.token_id.clone())),
                Some(v) => match expected {
                    None => expected = Some(v.len()),
                    Some(q) if q != v.len() => violations.push(DataError::EmbeddingDimMismatch {
                        expected: q,
                        got: v.len(),
                    }),
                    _ => {}
                },
            }
        }
    }
    if !violations.is_empty() {
        return Err(ValidationReport { violations });
    }
    kept.sort_by(|a, b| a.token_id.cmp(&b.token_id));
    let tracks = tracks
        .into_iter()
        .filter(|(k, _)| seen.contains(k))
        .collect();
    let embeddings = embeddings.map(|e| e.into_iter().filter(|(k, _)| seen.contains(k)).collect());
    Ok(CorpusDataset {
        tokens: kept,
        tracks,
        embeddings,
    })
}

/// `p` equally spaced points covering [0, 1].
pub fn time_grid(p: usize) -> Vec<f64> {
    match p {
        0 => Vec::new(),
        1 => vec![0.5],
        _ => (0..p).map(|i| i as f64 / (p - 1) as f64).collect(),
    }
}

/// Row-aligned n x p matrix of contour values over a normalized-time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchMatrix {
    pub values: DMatrix<f64>,
    pub row_ids: Vec<String>,
    pub grid: Vec<f64>,
}

impl PitchMatrix {
    pub fn new(values: DMatrix<f64>, row_ids: Vec<String>, grid: Vec<f64>) -> Result<Self, DataError> {
        if values.nrows() != row_ids.len() || values.ncols() != grid.len() {
            return Err(DataError::ShapeMismatch(format!(
                "{}x{} values for {} rows and {} grid points",
                values.nrows(),
                values.ncols(),
                row_ids.len(),
                grid.len()
            )));
        }
        Ok(Self {
            values,
            row_ids,
            grid,
        })
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn row_vec(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    /// Largest |row mean| and |row sd - 1| over all rows.
    pub fn normalization_error(&self) -> (f64, f64) {
        let mut worst_mean = 0.0f64;
        let mut worst_sd = 0.0f64;
        for i in 0..self.nrows() {
            let r = self.row_vec(i);
            worst_mean = worst_mean.max(crate::stats::mean(&r).abs());
            worst_sd = worst_sd.max((crate::stats::sample_sd(&r) - 1.0).abs());
        }
        (worst_mean, worst_sd)
    }

    /// Sub-matrix with the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> PitchMatrix {
        let values = DMatrix::from_fn(rows.len(), self.ncols(), |i, j| self.values[(rows[i], j)]);
        PitchMatrix {
            values,
            row_ids: rows.iter().map(|&r| self.row_ids[r].clone()).collect(),
            grid: self.grid.clone(),
        }
    }
}

/// Row-aligned n x q embedding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMatrix {
    pub values: DMatrix<f64>,
    pub row_ids: Vec<String>,
}

impl SemanticMatrix {
    pub fn new(values: DMatrix<f64>, row_ids: Vec<String>) -> Result<Self, DataError> {
        if values.nrows() != row_ids.len() {
            return Err(DataError::ShapeMismatch(format!(
                "{} rows for {} ids",
                values.nrows(),
                row_ids.len()
            )));
        }
        Ok(Self { values, row_ids })
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }
}
