//! Linear meaning-to-pitch mapping `S G = C` and its nearest-neighbour evaluation.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CorpusDataset, PitchMatrix};
use crate::stats::{mean, sample_sd};

pub const DEFAULT_TRAIN_FRAC: f64 = 0.8039;
/// Singular values below this fraction of the largest are treated as zero.
pub const SVD_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MapError {
    #[error("word {0:?} has fewer than two tokens")]
    WordTooSmall(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("token {0:?} has no row")]
    MissingRow(String),
    #[error("empty {0}")]
    Empty(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    /// word -> (n_train, n_test)
    pub allocation: BTreeMap<String, (usize, usize)>,
    pub seed: u64,
}

/// Per-word train/test split: `round(frac * n)` tokens of each word go to
/// training, clamped so both sides keep at least one. `items` are
/// `(token_id, word)` pairs; the output lists are sorted by token id.
pub fn make_split(items: &[(String, String)], train_frac: f64, seed: u64) -> Result<SplitPlan, MapError> {
    if items.is_empty() {
        return Err(MapError::Empty("token list"));
    }
    let mut by_word: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (id, w) in items {
        by_word.entry(w).or_default().push(id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan = SplitPlan {
        train_ids: Vec::new(),
        test_ids: Vec::new(),
        allocation: BTreeMap::new(),
        seed,
    };
    for (w, mut ids) in by_word {
        let n = ids.len();
        if n < 2 {
            return Err(MapError::WordTooSmall(w.to_string()));
        }
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        let n_train = ((train_frac * n as f64).round() as usize).clamp(1, n - 1);
        plan.train_ids.extend(ids[..n_train].iter().map(|s| s.to_string()));
        plan.test_ids.extend(ids[n_train..].iter().map(|s| s.to_string()));
        plan.allocation.insert(w.to_string(), (n_train, n - n_train));
    }
    plan.train_ids.sort();
    plan.test_ids.sort();
    Ok(plan)
}

pub fn split_dataset(dataset: &CorpusDataset, train_frac: f64, seed: u64) -> Result<SplitPlan, MapError> {
    let items: Vec<(String, String)> = dataset
        .tokens
        .iter()
        .map(|t| (t.token_id.clone(), t.word.clone()))
        .collect();
    make_split(&items, train_frac, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappingG {
    /// q x p
    pub matrix: DMatrix<f64>,
    pub rank: usize,
    /// Absolute singular-value threshold that was applied.
    pub cutoff: f64,
    pub n_train: usize,
    pub ridge: f64,
}

/// Least-squares (optionally ridge) solution of `S G = C` through the SVD of
/// `S`; the minimum-norm solution when `S` is rank deficient.
pub fn fit_mapping(s: &DMatrix<f64>, c: &DMatrix<f64>, ridge: f64) -> Result<MappingG, MapError> {
    if s.nrows() != c.nrows() {
        return Err(MapError::ShapeMismatch(format!(
            "S has {} rows but C has {}",
            s.nrows(),
            c.nrows()
        )));
    }
    if s.nrows() == 0 {
        return Err(MapError::Empty("training set"));
    }
    let (q, p) = (s.ncols(), c.ncols());
    let svd = s.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = SVD_CUTOFF * smax;
    let mut g = DMatrix::zeros(q, p);
    let mut rank = 0;
    for (i, &sv) in svd.singular_values.iter().enumerate() {
        if !(sv > cutoff) {
            continue;
        }
        rank += 1;
        let f = sv / (sv * sv + ridge);
        // g += v_i * f * (u_i' C)
        let uc = u.column(i).transpose() * c;
        let vi = v_t.row(i).transpose();
        g.ger(f, &vi, &uc.transpose(), 1.0);
    }
    Ok(MappingG {
        matrix: g,
        rank,
        cutoff,
        n_train: s.nrows(),
        ridge,
    })
}

pub fn predict(g: &MappingG, s: &DMatrix<f64>) -> Result<DMatrix<f64>, MapError> {
    if s.ncols() != g.matrix.nrows() {
        return Err(MapError::ShapeMismatch(format!(
            "embeddings have {} columns, mapping expects {}",
            s.ncols(),
            g.matrix.nrows()
        )));
    }
    Ok(s * &g.matrix)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelfMatch {
    /// A token's own gold row is a candidate.
    Allow,
    /// A token's own gold row is skipped.
    Exclude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborRow {
    pub token_id: String,
    pub neighbor_id: String,
    pub distance: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NnResult {
    pub accuracy: f64,
    pub neighbors: Vec<NeighborRow>,
}

/// Index and distance of the gold row nearest to `x`; the first index wins ties.
/// `gold` is row-major with rows of length `x.len()`.
fn nearest(x: &[f64], gold: &[f64], skip: Option<usize>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, row) in gold.chunks_exact(x.len()).enumerate() {
        if skip == Some(j) {
            continue;
        }
        let d2: f64 = x.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.is_none_or(|(_, b)| d2 < b) {
            best = Some((j, d2));
        }
    }
    best.map(|(j, d2)| (j, d2.sqrt()))
}

/// Nearest gold row (Euclidean) for each predicted row; a prediction is
/// correct when that row belongs to the same word as the predicted token.
pub fn nn_evaluate(
    predicted: &DMatrix<f64>,
    predicted_ids: &[String],
    gold: &PitchMatrix,
    word_of: &BTreeMap<String, String>,
    self_match: SelfMatch,
) -> Result<NnResult, MapError> {
    if predicted.nrows() != predicted_ids.len() {
        return Err(MapError::ShapeMismatch(format!(
            "{} predictions but {} ids",
            predicted.nrows(),
            predicted_ids.len()
        )));
    }
    if predicted.ncols() != gold.ncols() {
        return Err(MapError::ShapeMismatch(format!(
            "predictions have {} columns, gold rows {}",
            predicted.ncols(),
            gold.ncols()
        )));
    }
    if gold.nrows() == 0 {
        return Err(MapError::Empty("gold matrix"));
    }
    let gold_index: BTreeMap<&str, usize> = gold.row_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let word = |id: &str| word_of.get(id).ok_or_else(|| MapError::MissingRow(id.to_string()));
    for id in predicted_ids.iter().chain(&gold.row_ids) {
        word(id)?;
    }
    let rows: Vec<f64> = gold.values.transpose().as_slice().to_vec();
    let neighbors: Vec<NeighborRow> = (0..predicted.nrows())
        .into_par_iter()
        .map(|i| {
            let x: Vec<f64> = predicted.row(i).iter().copied().collect();
            let skip = match self_match {
                SelfMatch::Allow => None,
                SelfMatch::Exclude => gold_index.get(predicted_ids[i].as_str()).copied(),
            };
            let id = &predicted_ids[i];
            match nearest(&x, &rows, skip) {
                Some((j, d)) => NeighborRow {
                    token_id: id.clone(),
                    neighbor_id: gold.row_ids[j].clone(),
                    distance: d,
                    correct: word_of[id] == word_of[&gold.row_ids[j]],
                },
                None => NeighborRow {
                    token_id: id.clone(),
                    neighbor_id: String::new(),
                    distance: f64::INFINITY,
                    correct: false,
                },
            }
        })
        .collect();
    let hits = neighbors.iter().filter(|n| n.correct).count();
    let accuracy = if neighbors.is_empty() { 0.0 } else { hits as f64 / neighbors.len() as f64 };
    Ok(NnResult { accuracy, neighbors })
}

/// Share of test tokens whose word is the most frequent training word
/// (ties go to the first label).
pub fn majority_baseline(train_words: &[&str], test_words: &[&str]) -> Result<f64, MapError> {
    if test_words.is_empty() {
        return Err(MapError::Empty("test set"));
    }
    if train_words.is_empty() {
        return Err(MapError::Empty("training set"));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for w in train_words {
        *counts.entry(w).or_default() += 1;
    }
    let mut top: Option<(&str, usize)> = None;
    for (w, c) in counts {
        if top.is_none_or(|(_, b)| c > b) {
            top = Some((w, c));
        }
    }
    let top = top.expect("non-empty").0;
    Ok(test_words.iter().filter(|w| **w == top).count() as f64 / test_words.len() as f64)
}

/// Expected accuracy when predictions land on gold rows independently of
/// their word: the mean share of gold rows carrying each test token's word.
pub fn chance_accuracy(test_words: &[&str], gold_words: &[&str]) -> f64 {
    if test_words.is_empty() || gold_words.is_empty() {
        return 0.0;
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for w in gold_words {
        *counts.entry(w).or_default() += 1;
    }
    let n = gold_words.len() as f64;
    test_words
        .iter()
        .map(|w| counts.get(w).copied().unwrap_or(0) as f64 / n)
        .sum::<f64>()
        / test_words.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PermutationBaseline {
    pub mean: f64,
    pub sd: f64,
    pub repetitions: usize,
    pub accuracies: Vec<f64>,
    pub seed: u64,
}

/// The aligned training and test material one mapping is fit and scored on.
#[derive(Debug, Clone, Copy)]
pub struct MappingData<'a> {
    pub s_train: &'a DMatrix<f64>,
    pub c_train: &'a DMatrix<f64>,
    pub s_test: &'a DMatrix<f64>,
    pub test_ids: &'a [String],
    pub gold: &'a PitchMatrix,
    pub word_of: &'a BTreeMap<String, String>,
}

/// Test accuracy after refitting with training rows of `C` reordered by `perm`
/// (row `i` of `S` is paired with row `perm[i]` of `C`).
pub fn permuted_accuracy(data: &MappingData<'_>, perm: &[usize], ridge: f64) -> Result<f64, MapError> {
    if perm.len() != data.c_train.nrows() {
        return Err(MapError::ShapeMismatch("permutation length".into()));
    }
    let c = DMatrix::from_fn(perm.len(), data.c_train.ncols(), |i, j| data.c_train[(perm[i], j)]);
    let g = fit_mapping(data.s_train, &c, ridge)?;
    let pred = predict(&g, data.s_test)?;
    Ok(nn_evaluate(&pred, data.test_ids, data.gold, data.word_of, SelfMatch::Allow)?.accuracy)
}

/// Mean and sd of test accuracy over `r` label permutations. Repetition `i`
/// draws its permutation from its own ChaCha stream, so results do not
/// depend on scheduling.
pub fn permutation_baseline(data: &MappingData<'_>, r: usize, seed: u64, ridge: f64) -> Result<PermutationBaseline, MapError> {
    if r == 0 {
        return Err(MapError::Empty("permutation repetitions"));
    }
    let n = data.c_train.nrows();
    let accuracies: Vec<f64> = (0..r)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            permuted_accuracy(data, &perm, ridge)
        })
        .collect::<Result<_, _>>()?;
    Ok(PermutationBaseline {
        mean: mean(&accuracies),
        sd: sample_sd(&accuracies),
        repetitions: r,
        accuracies,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub method: String,
    pub n_train: usize,
    pub n_test: usize,
    pub rank: usize,
    pub accuracy_train: f64,
    /// Training accuracy with each token's own gold row removed from the candidates.
    pub accuracy_train_excluding_self: f64,
    pub accuracy_test: f64,
    pub majority_baseline: f64,
    pub permutation_baseline: Option<PermutationBaseline>,
    pub permutation_expected: f64,
    pub neighbors: Vec<NeighborRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub train_frac: f64,
    pub split_seed: u64,
    pub permutations: usize,
    pub permutation_seed: u64,
    pub ridge: f64,
    /// Restrict neighbour candidates to the partition being evaluated.
    pub restrict_candidates: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            train_frac: DEFAULT_TRAIN_FRAC,
            split_seed: 1,
            permutations: 20,
            permutation_seed: 7,
            ridge: 0.0,
            restrict_candidates: false,
        }
    }
}

/// Fit and score one method's mapping. `contours` must hold one normalized
/// row per token of `split`; embeddings come from `dataset`.
pub fn evaluate_mapping(
    method: &str,
    contours: &PitchMatrix,
    dataset: &CorpusDataset,
    split: &SplitPlan,
    cfg: &EvalConfig,
) -> Result<(EvalReport, MappingG), MapError> {
    let row_of: BTreeMap<&str, usize> = contours.row_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let rows = |ids: &[String]| -> Result<Vec<usize>, MapError> {
        ids.iter()
            .map(|id| row_of.get(id.as_str()).copied().ok_or_else(|| MapError::MissingRow(id.clone())))
            .collect()
    };
    let train_rows = rows(&split.train_ids)?;
    let test_rows = rows(&split.test_ids)?;
    let semantic = |ids: &[String]| {
        dataset
            .semantic_matrix(ids)
            .map(|m| m.values)
            .map_err(|e| MapError::ShapeMismatch(e.to_string()))
    };
    let s_train = semantic(&split.train_ids)?;
    let s_test = semantic(&split.test_ids)?;
    let c_train = contours.select_rows(&train_rows).values;
    let word_of: BTreeMap<String, String> = dataset
        .tokens
        .iter()
        .map(|t| (t.token_id.clone(), t.word.clone()))
        .collect();

    let g = fit_mapping(&s_train, &c_train, cfg.ridge)?;
    let (gold_train, gold_test) = if cfg.restrict_candidates {
        (contours.select_rows(&train_rows), contours.select_rows(&test_rows))
    } else {
        (contours.clone(), contours.clone())
    };
    let pred_train = predict(&g, &s_train)?;
    let pred_test = predict(&g, &s_test)?;
    let train = nn_evaluate(&pred_train, &split.train_ids, &gold_train, &word_of, SelfMatch::Allow)?;
    let train_ex = nn_evaluate(&pred_train, &split.train_ids, &gold_train, &word_of, SelfMatch::Exclude)?;
    let test = nn_evaluate(&pred_test, &split.test_ids, &gold_test, &word_of, SelfMatch::Allow)?;

    let words = |ids: &[String]| -> Vec<&str> { ids.iter().map(|id| word_of[id].as_str()).collect() };
    let train_words = words(&split.train_ids);
    let test_words = words(&split.test_ids);
    let gold_words = words(&gold_test.row_ids);
    let majority = majority_baseline(&train_words, &test_words)?;
    let permutation = if cfg.permutations > 0 {
        let data = MappingData {
            s_train: &s_train,
            c_train: &c_train,
            s_test: &s_test,
            test_ids: &split.test_ids,
            gold: &gold_test,
            word_of: &word_of,
        };
        Some(permutation_baseline(&data, cfg.permutations, cfg.permutation_seed, cfg.ridge)?)
    } else {
        None
    };
    let mut neighbors = train.neighbors;
    neighbors.extend(test.neighbors);
    neighbors.sort_by(|a, b| a.token_id.cmp(&b.token_id));
    let report = EvalReport {
        method: method.to_string(),
        n_train: split.train_ids.len(),
        n_test: split.test_ids.len(),
        rank: g.rank,
        accuracy_train: train.accuracy,
        accuracy_train_excluding_self: train_ex.accuracy,
        accuracy_test: test.accuracy,
        majority_baseline: majority,
        permutation_baseline: permutation,
        permutation_expected: chance_accuracy(&test_words, &gold_words),
        neighbors,
    };
    Ok((report, g))
}
