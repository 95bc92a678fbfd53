//! Word and tone-pattern centroids in embedding space, their projection
//! through a fitted mapping, and similarity to reference pattern contours.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::data::CorpusDataset;
use crate::mapping::{predict, MapError, MappingG};
use crate::stats::{cosine, euclidean, pearson, zscore_in_place};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CentroidError {
    #[error("no words for tone pattern {0}")]
    EmptyPattern(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no embeddings in dataset")]
    NoEmbeddings,
}

impl From<MapError> for CentroidError {
    fn from(e: MapError) -> Self {
        CentroidError::ShapeMismatch(e.to_string())
    }
}

/// Published per-method mean similarities (cosine, correlation, Euclidean)
/// for Methods I, II and III, shown next to our own numbers in reports.
pub const REFERENCE_MEANS: [(&str, f64, f64, f64); 3] =
    [("I", 0.59, 0.69, 1.48), ("II", 0.81, 0.82, 1.57), ("III", 0.66, 0.78, 1.43)];

fn mean_of<'a>(vs: impl IntoIterator<Item = &'a [f64]>) -> Result<Vec<f64>, CentroidError> {
    let mut acc: Option<Vec<f64>> = None;
    let mut n = 0usize;
    for v in vs {
        match &mut acc {
            None => acc = Some(v.to_vec()),
            Some(a) => {
                if a.len() != v.len() {
                    return Err(CentroidError::ShapeMismatch(format!("{} vs {} dimensions", a.len(), v.len())));
                }
                a.iter_mut().zip(v).for_each(|(x, y)| *x += y);
            }
        }
        n += 1;
    }
    let mut a = acc.unwrap_or_default();
    a.iter_mut().for_each(|x| *x /= n as f64);
    Ok(a)
}

/// Mean embedding per word from `(word, embedding)` pairs.
pub fn word_centroids<'a>(
    rows: impl IntoIterator<Item = (&'a str, &'a [f64])>,
) -> Result<BTreeMap<String, Vec<f64>>, CentroidError> {
    let mut by_word: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
    for (w, e) in rows {
        by_word.entry(w).or_default().push(e);
    }
    by_word
        .into_iter()
        .map(|(w, es)| Ok((w.to_string(), mean_of(es)?)))
        .collect()
}

pub fn dataset_word_centroids(dataset: &CorpusDataset) -> Result<BTreeMap<String, Vec<f64>>, CentroidError> {
    let emb = dataset.embeddings.as_ref().ok_or(CentroidError::NoEmbeddings)?;
    let rows: Vec<(&str, &[f64])> = dataset
        .tokens
        .iter()
        .filter_map(|t| emb.get(&t.token_id).map(|e| (t.word.as_str(), e.as_slice())))
        .collect();
    word_centroids(rows)
}

/// Unweighted mean of word centroids per pattern, with the number of words
/// that contributed. Every pattern in `patterns` must have at least one word.
pub fn pattern_centroids(
    words: &BTreeMap<String, Vec<f64>>,
    word_pattern: &BTreeMap<String, String>,
    patterns: &[String],
) -> Result<BTreeMap<String, (Vec<f64>, usize)>, CentroidError> {
    let mut out = BTreeMap::new();
    for pat in patterns {
        let members: Vec<&[f64]> = words
            .iter()
            .filter(|(w, _)| word_pattern.get(*w) == Some(pat))
            .map(|(_, c)| c.as_slice())
            .collect();
        if members.is_empty() {
            return Err(CentroidError::EmptyPattern(pat.clone()));
        }
        let n = members.len();
        out.insert(pat.clone(), (mean_of(members)?, n));
    }
    Ok(out)
}

/// The `top_k` words closest (Euclidean) to `centroid`; ties go to the
/// smaller label.
pub fn nearest_words(centroid: &[f64], words: &BTreeMap<String, Vec<f64>>, top_k: usize) -> Vec<(String, f64)> {
    let mut d: Vec<(String, f64)> = words.iter().map(|(w, c)| (w.clone(), euclidean(centroid, c))).collect();
    // BTreeMap order is label order and the sort is stable
    d.sort_by(|a, b| a.1.total_cmp(&b.1));
    d.truncate(top_k);
    d
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatternPrototype {
    pub method: String,
    pub tone_pattern: String,
    pub n_words: usize,
    pub centroid: Vec<f64>,
    /// Centroid projected through the mapping, before normalization.
    pub projected_raw: Vec<f64>,
    /// Same, z-normalized.
    pub projected_contour: Vec<f64>,
    pub gold_contour: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityRow {
    pub method: String,
    pub tone_pattern: String,
    pub cosine: f64,
    pub pearson: f64,
    pub euclidean: f64,
}

/// Project each pattern centroid through `g` and compare it with the
/// pattern's reference contour (both z-normalized).
pub fn prototype_contours(
    method: &str,
    g: &MappingG,
    patterns: &BTreeMap<String, (Vec<f64>, usize)>,
    gold: &BTreeMap<String, Vec<f64>>,
) -> Result<(Vec<PatternPrototype>, Vec<SimilarityRow>), CentroidError> {
    let mut protos = Vec::with_capacity(patterns.len());
    let mut sims = Vec::with_capacity(patterns.len());
    for (pat, (centroid, n_words)) in patterns {
        let Some(gold_row) = gold.get(pat) else {
            return Err(CentroidError::ShapeMismatch(format!("no reference contour for pattern {pat}")));
        };
        let s = DMatrix::from_row_slice(1, centroid.len(), centroid);
        let raw: Vec<f64> = predict(g, &s)?.row(0).iter().copied().collect();
        if raw.len() != gold_row.len() {
            return Err(CentroidError::ShapeMismatch(format!(
                "projection has {} points, reference {}",
                raw.len(),
                gold_row.len()
            )));
        }
        let mut proj = raw.clone();
        zscore_in_place(&mut proj);
        let mut gz = gold_row.clone();
        zscore_in_place(&mut gz);
        sims.push(SimilarityRow {
            method: method.to_string(),
            tone_pattern: pat.clone(),
            cosine: cosine(&proj, &gz),
            pearson: pearson(&proj, &gz),
            euclidean: euclidean(&proj, &gz),
        });
        protos.push(PatternPrototype {
            method: method.to_string(),
            tone_pattern: pat.clone(),
            n_words: *n_words,
            centroid: centroid.clone(),
            projected_raw: raw,
            projected_contour: proj,
            gold_contour: gz,
        });
    }
    Ok((protos, sims))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodMeans {
    pub method: String,
    pub cosine: f64,
    pub pearson: f64,
    pub euclidean: f64,
    pub reference: Option<(f64, f64, f64)>,
}

/// Mean similarity per method, in first-seen order.
pub fn method_means(rows: &[SimilarityRow]) -> Vec<MethodMeans> {
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        if !order.contains(&r.method.as_str()) {
            order.push(&r.method);
        }
    }
    order
        .into_iter()
        .map(|m| {
            let sel: Vec<&SimilarityRow> = rows.iter().filter(|r| r.method == m).collect();
            let n = sel.len() as f64;
            MethodMeans {
                method: m.to_string(),
                cosine: sel.iter().map(|r| r.cosine).sum::<f64>() / n,
                pearson: sel.iter().map(|r| r.pearson).sum::<f64>() / n,
                euclidean: sel.iter().map(|r| r.euclidean).sum::<f64>() / n,
                reference: REFERENCE_MEANS.iter().find(|r| r.0 == m).map(|r| (r.1, r.2, r.3)),
            }
        })
        .collect()
}
