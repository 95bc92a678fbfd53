use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::data::{CorpusDataset, F0Track, Gender};
use crate::stats::{quantile_linear, sample_sd};

/// Which scale successive f0 differences are taken on for outlier screening.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutlierScale {
    #[default]
    LogF0,
    Hz,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrimConfig {
    pub min_tokens_per_word: usize,
    pub max_tokens_per_word: usize,
    pub outlier_decile: f64,
    pub require_both_genders: bool,
    pub rng_seed: u64,
    pub outlier_scale: OutlierScale,
}

impl Default for TrimConfig {
    fn default() -> Self {
        Self {
            min_tokens_per_word: 6,
            max_tokens_per_word: 200,
            outlier_decile: 0.9,
            require_both_genders: true,
            rng_seed: 1,
            outlier_scale: OutlierScale::LogF0,
        }
    }
}

impl TrimConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.min_tokens_per_word > self.max_tokens_per_word {
            return Err(IngestError::Config(format!(
                "min_tokens_per_word {} exceeds max_tokens_per_word {}",
                self.min_tokens_per_word, self.max_tokens_per_word
            )));
        }
        if !(self.outlier_decile > 0.0 && self.outlier_decile < 1.0) {
            return Err(IngestError::Config(format!(
                "outlier_decile {} must lie in (0, 1)",
                self.outlier_decile
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalReason {
    TooShort,
    Outlier,
    BelowMinTokens,
    AboveCap,
    SingleGender,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub token_id: String,
    pub reason: RemovalReason,
    /// Successive-difference SD for outlier removals.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierResult {
    pub kept: Vec<String>,
    pub removed: Vec<Removal>,
    pub threshold: Option<f64>,
}

fn diff_sd(track: &F0Track, scale: OutlierScale) -> f64 {
    let v = match scale {
        OutlierScale::LogF0 => track.log_values(),
        OutlierScale::Hz => match track.scale {
            crate::data::F0Scale::Hz => track.values(),
            crate::data::F0Scale::LogHz => track.values().iter().map(|x| x.exp()).collect(),
        },
    };
    let diffs: Vec<f64> = v.windows(2).map(|w| w[1] - w[0]).collect();
    // one difference has no spread
    if diffs.len() < 2 {
        0.0
    } else {
        sample_sd(&diffs)
    }
}

/// Remove tracks whose SD of successive f0 differences exceeds the given
/// quantile of that SD across all tracks. Ties with the threshold are kept.
pub fn outlier_filter<'a>(
    tracks: impl IntoIterator<Item = &'a F0Track>,
    decile: f64,
    scale: OutlierScale,
) -> OutlierResult {
    let mut removed = Vec::new();
    let mut sds: Vec<(String, f64)> = Vec::new();
    for t in tracks {
        if t.samples.len() < 2 {
            removed.push(Removal {
                token_id: t.token_id.clone(),
                reason: RemovalReason::TooShort,
                sd: None,
            });
        } else {
            sds.push((t.token_id.clone(), diff_sd(t, scale)));
        }
    }
    let values: Vec<f64> = sds.iter().map(|(_, s)| *s).collect();
    let threshold = if values.is_empty() {
        None
    } else {
        Some(quantile_linear(&values, decile))
    };
    let mut kept = Vec::new();
    for (id, sd) in sds {
        match threshold {
            Some(th) if sd > th => removed.push(Removal {
                token_id: id,
                reason: RemovalReason::Outlier,
                sd: Some(sd),
            }),
            _ => kept.push(id),
        }
    }
    OutlierResult {
        kept,
        removed,
        threshold,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSummary {
    pub tokens: usize,
    pub words: usize,
    pub tone_patterns: usize,
}

/// Audit log of a trim run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimReport {
    /// Rule order as applied.
    pub rule_order: Vec<String>,
    pub config: TrimConfig,
    pub input_tokens: usize,
    pub input_words: usize,
    pub outlier_threshold: Option<f64>,
    pub removed_too_short: usize,
    pub removed_outlier: usize,
    pub removed_below_min_tokens: usize,
    pub words_below_min_tokens: usize,
    pub removed_above_cap: usize,
    pub words_capped: usize,
    pub removed_single_gender: usize,
    pub words_single_gender: usize,
    pub retained_tokens: usize,
    pub retained_words: usize,
    pub per_context: BTreeMap<String, ContextSummary>,
    pub removals: Vec<Removal>,
}

impl TrimReport {
    pub fn removed_tokens(&self) -> usize {
        self.removed_too_short
            + self.removed_outlier
            + self.removed_below_min_tokens
            + self.removed_above_cap
            + self.removed_single_gender
    }
}

fn word_seed(seed: u64, word: &str) -> u64 {
    // FNV-1a keeps each word's draw independent of which other words survive
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in word.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    seed ^ h
}

/// Apply, in order: outlier removal, minimum tokens per word, the per-word
/// sampling cap, and the both-genders requirement.
pub fn trim(dataset: &CorpusDataset, config: &TrimConfig) -> Result<(CorpusDataset, TrimReport), IngestError> {
    config.validate()?;
    let input_tokens = dataset.len();
    let input_words = dataset.words().len();
    let mut removals: Vec<Removal> = Vec::new();

    let tracks = dataset
        .tokens
        .iter()
        .filter_map(|t| dataset.tracks.get(&t.token_id));
    let outliers = outlier_filter(tracks, config.outlier_decile, config.outlier_scale);
    let removed_too_short = outliers
        .removed
        .iter()
        .filter(|r| r.reason == RemovalReason::TooShort)
        .count();
    let removed_outlier = outliers.removed.len() - removed_too_short;
    removals.extend(outliers.removed.iter().cloned());
    let alive: BTreeSet<&str> = outliers.kept.iter().map(String::as_str).collect();

    let mut by_word: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in dataset.tokens.iter().enumerate() {
        if alive.contains(t.token_id.as_str()) {
            by_word.entry(t.word.as_str()).or_default().push(i);
        }
    }

    let mut removed_below_min_tokens = 0;
    let mut words_below_min_tokens = 0;
    let mut removed_above_cap = 0;
    let mut words_capped = 0;
    let mut removed_single_gender = 0;
    let mut words_single_gender = 0;
    let mut keep: BTreeSet<usize> = BTreeSet::new();

    for (word, idx) in by_word {
        let mut idx = idx;
        if idx.len() < config.min_tokens_per_word {
            words_below_min_tokens += 1;
            removed_below_min_tokens += idx.len();
            removals.extend(idx.iter().map(|&i| Removal {
                token_id: dataset.tokens[i].token_id.clone(),
                reason: RemovalReason::BelowMinTokens,
                sd: None,
            }));
            continue;
        }
        if idx.len() > config.max_tokens_per_word {
            words_capped += 1;
            let mut rng = ChaCha8Rng::seed_from_u64(word_seed(config.rng_seed, word));
            let chosen: BTreeSet<usize> = sample(&mut rng, idx.len(), config.max_tokens_per_word)
                .into_iter()
                .collect();
            let (kept, dropped): (Vec<(usize, usize)>, Vec<(usize, usize)>) =
                idx.iter().copied().enumerate().partition(|(k, _)| chosen.contains(k));
            removed_above_cap += dropped.len();
            removals.extend(dropped.iter().map(|&(_, i)| Removal {
                token_id: dataset.tokens[i].token_id.clone(),
                reason: RemovalReason::AboveCap,
                sd: None,
            }));
            idx = kept.into_iter().map(|(_, i)| i).collect();
        }
        if config.require_both_genders {
            let genders: BTreeSet<Gender> = idx.iter().map(|&i| dataset.tokens[i].gender).collect();
            if genders.len() < 2 {
                words_single_gender += 1;
                removed_single_gender += idx.len();
                removals.extend(idx.iter().map(|&i| Removal {
                    token_id: dataset.tokens[i].token_id.clone(),
                    reason: RemovalReason::SingleGender,
                    sd: None,
                }));
                continue;
            }
        }
        keep.extend(idx);
    }

    if keep.is_empty() {
        return Err(IngestError::EmptyResult);
    }
    let kept_ids: BTreeSet<&str> = keep
        .iter()
        .map(|&i| dataset.tokens[i].token_id.as_str())
        .collect();
    let trimmed = dataset.filter(|t| kept_ids.contains(t.token_id.as_str()));

    let mut per_context: BTreeMap<String, (usize, BTreeSet<String>, BTreeSet<String>)> = BTreeMap::new();
    for t in &trimmed.tokens {
        let e = per_context.entry(t.tonal_context().label()).or_default();
        e.0 += 1;
        e.1.insert(t.word.clone());
        e.2.insert(t.tone_pattern.to_string());
    }
    removals.sort_by(|a, b| a.token_id.cmp(&b.token_id));
    let report = TrimReport {
        rule_order: vec![
            "outliers".into(),
            "min_tokens_per_word".into(),
            "max_tokens_per_word".into(),
            "both_genders".into(),
        ],
        config: config.clone(),
        input_tokens,
        input_words,
        outlier_threshold: outliers.threshold,
        removed_too_short,
        removed_outlier,
        removed_below_min_tokens,
        words_below_min_tokens,
        removed_above_cap,
        words_capped,
        removed_single_gender,
        words_single_gender,
        retained_tokens: trimmed.len(),
        retained_words: trimmed.words().len(),
        per_context: per_context
            .into_iter()
            .map(|(k, (n, w, p))| {
                (
                    k,
                    ContextSummary {
                        tokens: n,
                        words: w.len(),
                        tone_patterns: p.len(),
                    },
                )
            })
            .collect(),
        removals,
    };
    Ok((trimmed, report))
}
