//! Synthetic corpus with known structure.
//!
//! Every token's log f0 is the sum of a gender offset, a speaker offset, its
//! word's contour (a tone-pattern template plus a word-specific Legendre
//! deviation), a small male-specific downtrend, tonal-context coarticulation
//! at both edges, additive covariate effects and AR(1) noise. Embeddings are a
//! fixed linear image of (pattern indicator, word deviation coefficients) plus
//! word-specific semantic noise and token spread, so the pitch of a word is
//! linearly predictable from its meaning. The first word of every pattern is
//! a prototype whose embedding sits at the mean of its pattern-mates.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    build_dataset, time_grid, ContextTone, CorpusDataset, F0Sample, F0Track, Gender, TonalContext, TokenRecord,
    TonePattern,
};
use crate::ingest::{write_durations, write_embeddings, write_f0, write_tokens};
use crate::stats::{euclidean, mean, zscore_in_place};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub n_patterns: usize,
    pub n_words: usize,
    pub tokens_per_word: (usize, usize),
    pub n_speakers: usize,
    pub q_embed: usize,
    /// SD of each Legendre coefficient of a word's contour deviation (log units).
    pub word_deviation_sd: f64,
    /// Per-dimension SD of token embeddings around their word centre.
    pub embed_cluster_sd: f64,
    /// Per-dimension SD of word-specific embedding content unrelated to pitch.
    pub semantic_noise_sd: f64,
    /// SD of per-token random Legendre shape coefficients (P1..P3); token-level
    /// variation that no word or context term explains.
    pub token_shape_sd: f64,
    /// Marginal SD of the AR(1) sample noise (log units).
    pub noise_sd: f64,
    pub ar1_rho: f64,
    pub missing_span_prob: f64,
    /// Probability that a token carries an octave (doubling/halving) error span.
    pub pitch_error_prob: f64,
    /// Multiplier on the gender-shape, context and covariate effects.
    pub nuisance_scale: f64,
    pub speaker_sd: f64,
    /// Tonal contexts and their sampling weights.
    pub contexts: Vec<(String, f64)>,
    pub sample_step_ms: f64,
    pub duration_ms: (f64, f64),
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_patterns: 20,
            n_words: 100,
            tokens_per_word: (10, 18),
            n_speakers: 24,
            q_embed: 128,
            word_deviation_sd: 0.06,
            embed_cluster_sd: 0.3,
            semantic_noise_sd: 0.5,
            token_shape_sd: 0.1,
            noise_sd: 0.035,
            ar1_rho: 0.9,
            missing_span_prob: 0.3,
            pitch_error_prob: 0.03,
            nuisance_scale: 1.0,
            speaker_sd: 0.06,
            contexts: vec![
                ("4.4".into(), 0.42),
                ("3.4".into(), 0.21),
                ("4.1".into(), 0.20),
                ("4.0".into(), 0.17),
            ],
            sample_step_ms: 15.0,
            duration_ms: (200.0, 450.0),
            seed: 20240501,
        }
    }
}

impl GenConfig {
    /// No sample noise, gaps, pitch errors, token spread or nuisance effects.
    pub fn noiseless() -> Self {
        Self {
            embed_cluster_sd: 0.0,
            token_shape_sd: 0.0,
            noise_sd: 0.0,
            missing_span_prob: 0.0,
            pitch_error_prob: 0.0,
            nuisance_scale: 0.0,
            ..Self::default()
        }
    }

    pub fn words_per_pattern(&self) -> usize {
        self.n_words / self.n_patterns.max(1)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.n_patterns == 0 || self.n_patterns > 20 {
            return bad(format!("n_patterns {} must be in 1..=20", self.n_patterns));
        }
        if self.n_words < 2 * self.n_patterns || self.n_words % self.n_patterns != 0 {
            return bad(format!(
                "n_words {} must be a multiple of n_patterns {} with at least two words each",
                self.n_words, self.n_patterns
            ));
        }
        let (lo, hi) = self.tokens_per_word;
        if lo < 2 || hi < lo {
            return bad(format!("tokens_per_word ({lo}, {hi}) must satisfy 2 <= lo <= hi"));
        }
        if self.n_speakers < 2 {
            return bad("need at least two speakers (one per gender)".into());
        }
        if self.q_embed == 0 {
            return bad("q_embed must be positive".into());
        }
        for (name, v) in [
            ("word_deviation_sd", self.word_deviation_sd),
            ("embed_cluster_sd", self.embed_cluster_sd),
            ("semantic_noise_sd", self.semantic_noise_sd),
            ("token_shape_sd", self.token_shape_sd),
            ("noise_sd", self.noise_sd),
            ("nuisance_scale", self.nuisance_scale),
            ("speaker_sd", self.speaker_sd),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} = {v} must be a non-negative number"));
            }
        }
        if !(0.0..1.0).contains(&self.ar1_rho) {
            return bad(format!("ar1_rho {} must lie in [0, 1)", self.ar1_rho));
        }
        for (name, v) in [
            ("missing_span_prob", self.missing_span_prob),
            ("pitch_error_prob", self.pitch_error_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} must lie in [0, 1]"));
            }
        }
        if self.contexts.is_empty() || self.contexts.iter().any(|(_, w)| !(*w > 0.0)) {
            return bad("contexts need positive weights".into());
        }
        for (c, _) in &self.contexts {
            c.parse::<TonalContext>()
                .map_err(|_| SynthError::Config(format!("unknown tonal context {c:?}")))?;
        }
        let (dlo, dhi) = self.duration_ms;
        if !(self.sample_step_ms > 0.0) || !(dlo > 0.0) || dhi < dlo || dlo < 8.0 * self.sample_step_ms {
            return bad("durations must allow at least 8 samples".into());
        }
        Ok(())
    }
}

/// Log-f0 anchor levels of a lexical tone within its syllable.
fn tone_anchors(tone: u8) -> &'static [f64] {
    match tone {
        1 => &[0.22, 0.20],
        2 => &[-0.02, -0.07, 0.22],
        3 => &[-0.12, -0.32, -0.24],
        4 => &[0.30, -0.20],
        _ => &[-0.10, -0.13],
    }
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Template contour of a tone pattern at normalized time `t` (log units,
/// relative to the speaker's baseline).
pub fn pattern_template(p: TonePattern, t: f64) -> f64 {
    // neutral tones are short
    let boundary = if p.second() == 0 { 0.65 } else { 0.5 };
    let gap = 0.08;
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for (a, b, tone) in [(0.0, boundary - gap, p.first()), (boundary + gap, 1.0, p.second())] {
        let anchors = tone_anchors(tone);
        let n = anchors.len();
        for (i, lvl) in anchors.iter().enumerate() {
            pts.push((a + (b - a) * i as f64 / (n - 1) as f64, *lvl));
        }
    }
    let declination = -0.06 * t;
    let i = pts.iter().rposition(|(x, _)| *x <= t).unwrap_or(0);
    let v = if i + 1 >= pts.len() {
        pts[i].1
    } else {
        let (x0, y0) = pts[i];
        let (x1, y1) = pts[i + 1];
        y0 + (y1 - y0) * smoothstep((t - x0) / (x1 - x0))
    };
    v + declination
}

/// Legendre polynomials P0..P3 on `x = 2t - 1`.
fn legendre(t: f64) -> [f64; 4] {
    let x = 2.0 * t - 1.0;
    [1.0, x, 0.5 * (3.0 * x * x - 1.0), 0.5 * (5.0 * x * x * x - 3.0 * x)]
}

/// Everything the generator planted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: GenConfig,
    pub grid_p: usize,
    pub word_pattern: BTreeMap<String, String>,
    /// Legendre coefficients of each word's contour deviation.
    pub word_coefficients: BTreeMap<String, [f64; 4]>,
    /// Template + deviation, on the `grid_p` grid.
    pub word_contours: BTreeMap<String, Vec<f64>>,
    pub word_deviations: BTreeMap<String, Vec<f64>>,
    pub pattern_templates: BTreeMap<String, Vec<f64>>,
    /// Noise-free embedding centre of each word.
    pub word_embeddings: BTreeMap<String, Vec<f64>>,
    /// Pattern -> its planted prototype word.
    pub prototypes: BTreeMap<String, String>,
    pub gender_offsets: BTreeMap<String, f64>,
    pub male_slope: f64,
    pub speaker_offsets: BTreeMap<String, f64>,
    pub speaker_gender: BTreeMap<String, Gender>,
    pub preceding_effect: BTreeMap<String, f64>,
    pub following_effect: BTreeMap<String, f64>,
    pub speech_rate_slope: f64,
    pub utt_pos_curvature: f64,
    pub bg_prev_slope: f64,
    pub bg_fol_slope: f64,
    pub n_tokens: usize,
    /// Tokens carrying a planted octave error.
    pub pitch_error_tokens: Vec<String>,
    /// Tokens with a planted voiceless gap.
    pub gap_tokens: Vec<String>,
}

impl GroundTruth {
    pub fn word_contour_at(&self, word: &str, t: f64) -> f64 {
        let pat: TonePattern = self.word_pattern[word].parse().expect("valid pattern");
        let c = &self.word_coefficients[word];
        pattern_template(pat, t) + legendre(t).iter().zip(c).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Noise-free log f0 of `token` at normalized time `t`.
    pub fn true_log_f0(&self, token: &TokenRecord, t: f64) -> f64 {
        let s = self.config.nuisance_scale;
        let mut v = self.gender_offsets[&token.gender.to_string()]
            + self.speaker_offsets.get(&token.speaker).copied().unwrap_or(0.0)
            + self.word_contour_at(&token.word, t);
        if token.gender == Gender::Male {
            v += s * self.male_slope * t;
        }
        v += s * self.preceding_effect.get(&token.preceding_tone.to_string()).copied().unwrap_or(0.0)
            * (1.0 - t).powi(3);
        v += s * self.following_effect.get(&token.following_tone.to_string()).copied().unwrap_or(0.0) * t.powi(3);
        v += s * (self.speech_rate_slope * (token.speech_rate - 5.0)
            + self.utt_pos_curvature * (token.norm_utt_pos - 0.5).powi(2)
            + self.bg_prev_slope * token.bg_prob_prev
            + self.bg_fol_slope * token.bg_prob_fol);
        v
    }
}

fn tone_of(c: ContextTone) -> String {
    c.to_string()
}

fn word_label(i: usize) -> String {
    format!("w{i:03}")
}

/// Generate a corpus and its ground truth. Deterministic in `config.seed`.
pub fn generate(config: &GenConfig) -> Result<(CorpusDataset, GroundTruth), SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let patterns: Vec<TonePattern> = TonePattern::all().into_iter().take(config.n_patterns).collect();
    let wpp = config.words_per_pattern();
    let q = config.q_embed;

    // speakers: alternate genders
    let mut speaker_gender = BTreeMap::new();
    let mut speaker_offsets = BTreeMap::new();
    let mut female = Vec::new();
    let mut male = Vec::new();
    for s in 0..config.n_speakers {
        let id = format!("spk{s:02}");
        let g = if s % 2 == 0 { Gender::Female } else { Gender::Male };
        speaker_offsets.insert(id.clone(), config.speaker_sd * normal.sample(&mut rng));
        speaker_gender.insert(id.clone(), g);
        match g {
            Gender::Female => female.push(id),
            Gender::Male => male.push(id),
        }
    }

    // word contour coefficients; the prototype gets the mean of its pattern-mates
    let latent = config.n_patterns + 4;
    let a_mat = DMatrix::from_fn(q, latent, |_, _| normal.sample(&mut rng) / (latent as f64).sqrt());
    let mut word_pattern = BTreeMap::new();
    let mut word_coefficients: BTreeMap<String, [f64; 4]> = BTreeMap::new();
    let mut word_embeddings = BTreeMap::new();
    let mut prototypes = BTreeMap::new();
    let pattern_scale = 3.0;
    let coef_scale = 1.5 / config.word_deviation_sd.max(1e-12);
    for (pi, pat) in patterns.iter().enumerate() {
        let words: Vec<usize> = (pi * wpp..(pi + 1) * wpp).collect();
        let mut coefs: Vec<[f64; 4]> = Vec::with_capacity(wpp);
        let mut sem: Vec<Vec<f64>> = Vec::with_capacity(wpp);
        for _ in &words {
            let mut c = [0.0; 4];
            for v in c.iter_mut() {
                *v = config.word_deviation_sd * normal.sample(&mut rng);
            }
            coefs.push(c);
            sem.push((0..q).map(|_| config.semantic_noise_sd * normal.sample(&mut rng)).collect());
        }
        // prototype: mean of the others plus a tenth of its own draw
        let others = wpp - 1;
        let mut pc = [0.0; 4];
        for c in &coefs[1..] {
            for (a, b) in pc.iter_mut().zip(c) {
                *a += b / others as f64;
            }
        }
        for (a, b) in pc.iter_mut().zip(&coefs[0]) {
            *a += 0.1 * b;
        }
        coefs[0] = pc;
        let mut ps = vec![0.0; q];
        for s in &sem[1..] {
            for (a, b) in ps.iter_mut().zip(s) {
                *a += b / others as f64;
            }
        }
        for (a, b) in ps.iter_mut().zip(&sem[0]) {
            *a += 0.1 * b;
        }
        sem[0] = ps;
        for (j, &w) in words.iter().enumerate() {
            let label = word_label(w);
            let mut z = vec![0.0; latent];
            z[pi] = pattern_scale;
            for d in 0..4 {
                z[config.n_patterns + d] = coef_scale * coefs[j][d];
            }
            let e: Vec<f64> = (0..q)
                .map(|r| (0..latent).map(|c| a_mat[(r, c)] * z[c]).sum::<f64>() + sem[j][r])
                .collect();
            word_pattern.insert(label.clone(), pat.to_string());
            word_coefficients.insert(label.clone(), coefs[j]);
            word_embeddings.insert(label.clone(), e);
        }
        prototypes.insert(pat.to_string(), word_label(words[0]));
    }

    let mut preceding_effect = BTreeMap::new();
    let mut following_effect = BTreeMap::new();
    for (tone, pre, fol) in [
        (ContextTone::T1, 0.08, 0.06),
        (ContextTone::T2, -0.04, -0.06),
        (ContextTone::T3, -0.12, -0.10),
        (ContextTone::T4, 0.10, 0.08),
        (ContextTone::T0, -0.06, -0.08),
        (ContextTone::Pause, 0.0, 0.0),
    ] {
        preceding_effect.insert(tone_of(tone), pre);
        following_effect.insert(tone_of(tone), fol);
    }
    let grid_p = 100;
    let mut truth = GroundTruth {
        config: config.clone(),
        grid_p,
        word_pattern,
        word_coefficients,
        word_contours: BTreeMap::new(),
        word_deviations: BTreeMap::new(),
        pattern_templates: BTreeMap::new(),
        word_embeddings,
        prototypes,
        gender_offsets: [("female".to_string(), 210f64.ln()), ("male".to_string(), 125f64.ln())].into(),
        male_slope: -0.08,
        speaker_offsets,
        speaker_gender,
        preceding_effect,
        following_effect,
        speech_rate_slope: -0.02,
        utt_pos_curvature: 0.08,
        bg_prev_slope: -0.1,
        bg_fol_slope: 0.0,
        n_tokens: 0,
        pitch_error_tokens: Vec::new(),
        gap_tokens: Vec::new(),
    };
    let grid = time_grid(grid_p);
    for pat in &patterns {
        truth
            .pattern_templates
            .insert(pat.to_string(), grid.iter().map(|&t| pattern_template(*pat, t)).collect());
    }
    let labels: Vec<String> = truth.word_pattern.keys().cloned().collect();
    for w in &labels {
        let pat: TonePattern = truth.word_pattern[w].parse().unwrap();
        let dev: Vec<f64> = grid
            .iter()
            .map(|&t| legendre(t).iter().zip(&truth.word_coefficients[w]).map(|(a, b)| a * b).sum())
            .collect();
        let full: Vec<f64> = grid.iter().zip(&dev).map(|(&t, d)| pattern_template(pat, t) + d).collect();
        truth.word_deviations.insert(w.clone(), dev);
        truth.word_contours.insert(w.clone(), full);
    }

    let contexts: Vec<(TonalContext, f64)> = config
        .contexts
        .iter()
        .map(|(c, w)| (c.parse().unwrap(), *w))
        .collect();
    let total_w: f64 = contexts.iter().map(|c| c.1).sum();

    // tokens, one independent stream per word
    let per_word: Vec<WordTokens> = labels
        .par_iter()
        .enumerate()
        .map(|(wi, w)| {
            let mut r = ChaCha8Rng::seed_from_u64(config.seed);
            r.set_stream(wi as u64 + 1);
            word_tokens(config, &truth, w, &female, &male, &contexts, total_w, &mut r)
        })
        .collect();

    let mut tokens = Vec::new();
    let mut tracks = BTreeMap::new();
    let mut embeddings = BTreeMap::new();
    for wt in per_word {
        truth.pitch_error_tokens.extend(wt.pitch_errors);
        truth.gap_tokens.extend(wt.gaps);
        for (tok, track, emb) in wt.tokens {
            tracks.insert(tok.token_id.clone(), track);
            embeddings.insert(tok.token_id.clone(), emb);
            tokens.push(tok);
        }
    }
    truth.n_tokens = tokens.len();
    let dataset = build_dataset(tokens, tracks, Some(embeddings))
        .map_err(|e| SynthError::Config(format!("generator produced an invalid corpus: {e}")))?;
    Ok((dataset, truth))
}

struct WordTokens {
    tokens: Vec<(TokenRecord, F0Track, Vec<f64>)>,
    pitch_errors: Vec<String>,
    gaps: Vec<String>,
}

#[allow(clippy::too_many_arguments)]
fn word_tokens(
    config: &GenConfig,
    truth: &GroundTruth,
    word: &str,
    female: &[String],
    male: &[String],
    contexts: &[(TonalContext, f64)],
    total_w: f64,
    rng: &mut ChaCha8Rng,
) -> WordTokens {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let beta = Beta::new(2.0, 5.0).unwrap();
    let (lo, hi) = config.tokens_per_word;
    let n = rng.random_range(lo..=hi);
    let pattern: TonePattern = truth.word_pattern[word].parse().unwrap();
    let centre = &truth.word_embeddings[word];
    let mut out = WordTokens {
        tokens: Vec::with_capacity(n),
        pitch_errors: Vec::new(),
        gaps: Vec::new(),
    };
    let innov = config.noise_sd * (1.0 - config.ar1_rho * config.ar1_rho).sqrt();
    for i in 0..n {
        let id = format!("{word}_t{i:03}");
        let pool = if i % 2 == 0 { female } else { male };
        let speaker = pool[rng.random_range(0..pool.len())].clone();
        let gender = truth.speaker_gender[&speaker];
        let mut u = rng.random_range(0.0..total_w);
        let mut ctx = contexts[contexts.len() - 1].0;
        for (c, w) in contexts {
            if u < *w {
                ctx = *c;
                break;
            }
            u -= w;
        }
        let tok = TokenRecord {
            token_id: id.clone(),
            word: word.to_string(),
            tone_pattern: pattern,
            speaker,
            gender,
            preceding_tone: ctx.preceding,
            following_tone: ctx.following,
            speech_rate: rng.random_range(3.0..8.0),
            norm_utt_pos: rng.random_range(0.0..1.0),
            bg_prob_prev: beta.sample(rng),
            bg_prob_fol: beta.sample(rng),
            sense_type: None,
            extra: BTreeMap::new(),
        };

        let duration = rng.random_range(config.duration_ms.0..=config.duration_ms.1).round();
        let n_samples = (duration / config.sample_step_ms).floor() as usize + 1;
        let mut keep = vec![true; n_samples];
        if rng.random_bool(config.missing_span_prob) {
            let len = rng.random_range(2..=5usize);
            if n_samples >= len + 8 + 2 {
                let start = rng.random_range(1..n_samples - len - 1);
                keep[start..start + len].iter_mut().for_each(|k| *k = false);
                out.gaps.push(id.clone());
            }
        }
        let mut factor = vec![1.0; n_samples];
        if rng.random_bool(config.pitch_error_prob) {
            let len = rng.random_range(2..=4usize);
            let start = rng.random_range(0..n_samples - len);
            let f = if rng.random_bool(0.5) { 2.0 } else { 0.5 };
            factor[start..start + len].iter_mut().for_each(|v| *v = f);
            out.pitch_errors.push(id.clone());
        }
        let shape: Vec<f64> = (0..3).map(|_| config.token_shape_sd * normal.sample(rng)).collect();
        let mut e = normal.sample(rng) * config.noise_sd;
        let mut samples = Vec::with_capacity(n_samples);
        for s in 0..n_samples {
            if s > 0 {
                e = config.ar1_rho * e + innov * normal.sample(rng);
            }
            if !keep[s] {
                continue;
            }
            let t_ms = s as f64 * config.sample_step_ms;
            let t = t_ms / duration;
            let wobble: f64 = legendre(t)[1..].iter().zip(&shape).map(|(a, b)| a * b).sum();
            let f0 = (truth.true_log_f0(&tok, t) + wobble + e).exp() * factor[s];
            samples.push(F0Sample { t_ms, f0 });
        }
        let track = F0Track::new(id.clone(), samples, duration).expect("generated track is valid");
        let emb: Vec<f64> = centre
            .iter()
            .map(|c| c + config.embed_cluster_sd * normal.sample(rng))
            .collect();
        out.tokens.push((tok, track, emb));
    }
    out
}

/// Write the four ingest files and `ground_truth.json` into `dir`.
pub fn write_corpus(dir: &Path, dataset: &CorpusDataset, truth: &GroundTruth) -> Result<(), SynthError> {
    let io = |p: &Path| {
        let path = p.display().to_string();
        move |source| SynthError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let p = dir.join("tokens.csv");
    write_tokens(&p, &dataset.tokens).map_err(io(&p))?;
    let p = dir.join("f0.csv");
    write_f0(&p, dataset.tracks.values()).map_err(io(&p))?;
    let p = dir.join("durations.csv");
    write_durations(&p, dataset.tracks.values()).map_err(io(&p))?;
    if let Some(e) = &dataset.embeddings {
        let p = dir.join("embeddings.csv");
        write_embeddings(&p, e).map_err(io(&p))?;
    }
    let p = dir.join("ground_truth.json");
    let json = serde_json::to_string_pretty(truth).expect("ground truth serializes");
    fs::write(&p, json + "\n").map_err(io(&p))?;
    Ok(())
}

/// What a pipeline produced, as far as the oracle can check it.
#[derive(Debug, Clone, Default)]
pub struct PipelineOutputs {
    /// Contour rows (any normalization) keyed by method label.
    pub contours: BTreeMap<String, crate::data::PitchMatrix>,
    /// Estimated word centroids in embedding space.
    pub word_centroids: Option<BTreeMap<String, Vec<f64>>>,
    /// Observed test accuracy per method label.
    pub accuracies: BTreeMap<String, f64>,
    /// Analytic expectation to compare each accuracy against (e.g. chance level).
    pub expected_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    /// Mean over words of the RMSE between the z-normalized word-average
    /// contour and the z-normalized planted word contour.
    pub word_contour_rmse: BTreeMap<String, f64>,
    /// Mean Euclidean distance between estimated and planted word centroids.
    pub centroid_displacement: Option<f64>,
    /// Observed minus expected accuracy.
    pub accuracy_delta: BTreeMap<String, f64>,
    /// Stages for which nothing was supplied.
    pub missing: Vec<String>,
}

/// Compare pipeline outputs against what was planted.
pub fn oracle_check(dataset: &CorpusDataset, truth: &GroundTruth, outputs: &PipelineOutputs) -> OracleReport {
    let mut missing = Vec::new();
    let word_of: BTreeMap<&str, &str> = dataset
        .tokens
        .iter()
        .map(|t| (t.token_id.as_str(), t.word.as_str()))
        .collect();
    let mut word_contour_rmse = BTreeMap::new();
    if outputs.contours.is_empty() {
        missing.push("contours".to_string());
    }
    for (method, m) in &outputs.contours {
        let mut by_word: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
        for i in 0..m.nrows() {
            let Some(w) = word_of.get(m.row_ids[i].as_str()) else { continue };
            let mut r = m.row_vec(i);
            if !zscore_in_place(&mut r) {
                continue;
            }
            let e = by_word.entry(w).or_insert_with(|| (vec![0.0; r.len()], 0));
            e.0.iter_mut().zip(&r).for_each(|(a, b)| *a += b);
            e.1 += 1;
        }
        let mut errs = Vec::new();
        for (w, (sum, n)) in by_word {
            let mut est: Vec<f64> = sum.iter().map(|v| v / n as f64).collect();
            let mut tru: Vec<f64> = m.grid.iter().map(|&t| truth.word_contour_at(w, t)).collect();
            if !zscore_in_place(&mut est) || !zscore_in_place(&mut tru) {
                continue;
            }
            let mse = est.iter().zip(&tru).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / est.len() as f64;
            errs.push(mse.sqrt());
        }
        word_contour_rmse.insert(method.clone(), if errs.is_empty() { f64::NAN } else { mean(&errs) });
    }
    let centroid_displacement = match &outputs.word_centroids {
        None => {
            missing.push("word_centroids".to_string());
            None
        }
        Some(c) => {
            let d: Vec<f64> = c
                .iter()
                .filter_map(|(w, v)| truth.word_embeddings.get(w).map(|t| euclidean(v, t)))
                .collect();
            Some(if d.is_empty() { f64::NAN } else { mean(&d) })
        }
    };
    let mut accuracy_delta = BTreeMap::new();
    if outputs.accuracies.is_empty() {
        missing.push("accuracies".to_string());
    }
    if let Some(exp) = outputs.expected_accuracy {
        for (m, a) in &outputs.accuracies {
            accuracy_delta.insert(m.clone(), a - exp);
        }
    }
    OracleReport {
        word_contour_rmse,
        centroid_displacement,
        accuracy_delta,
        missing,
    }
}
