//! The batch stages behind the subcommands. Each stage reads what the previous
//! one wrote under the output directory, so stages can be rerun separately.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::Serialize;
use tonecontour::centroid::{
    dataset_word_centroids, method_means, nearest_words, pattern_centroids, prototype_contours, MethodMeans,
    PatternPrototype, SimilarityRow,
};
use tonecontour::contours::{
    compare_aic_fitted, contours_method1, contours_method2, contours_method3_fitted, fit_context_models,
    gold_contours, normalize_rows, read_contours, write_contours, ContourSet, Method, ModelSpec, ModelSummary,
    MIN_SAMPLES,
};
use tonecontour::data::{build_dataset, time_grid, CorpusDataset, PitchMatrix};
use tonecontour::ingest::{
    read_embeddings, read_f0, read_tokens, trim, write_durations, write_embeddings, write_f0, write_tokens,
    IngestError, TrimReport,
};
use tonecontour::mapping::{evaluate_mapping, split_dataset, EvalReport, NeighborRow, PermutationBaseline};
use tonecontour::synth::{generate, write_corpus};

use crate::config::RunConfig;
use crate::svg;
use crate::PipelineError;

pub const SCHEMA_VERSION: u32 = 1;

/// Files under the output directory.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }
    pub fn ingested(&self) -> PathBuf {
        self.root.join("ingested")
    }
    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
    pub fn contours(&self, m: Method) -> PathBuf {
        self.root.join(format!("contours_{m}.csv"))
    }
}

fn stage_err(stage: &'static str) -> impl Fn(String) -> PipelineError {
    move |message| PipelineError::Stage { stage, message }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
    fs::write(path, text + "\n").map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    fs::write(path, text).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(path).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))
}

/// Wall-clock seconds per stage, kept apart from the deterministic outputs.
fn record_timing(layout: &Layout, stage: &str, seconds: f64) -> Result<(), PipelineError> {
    let path = layout.file("timings.json");
    let mut map: BTreeMap<String, f64> = fs::read_to_string(&path)
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or_default();
    map.insert(stage.to_string(), seconds);
    write_json(&path, &map)
}

/// Read the four corpus files from `dir` (embeddings optional) and cross-check them.
pub fn load_dataset(dir: &Path) -> Result<CorpusDataset, PipelineError> {
    let tokens_p = dir.join("tokens.csv");
    let f0_p = dir.join("f0.csv");
    let dur_p = dir.join("durations.csv");
    let emb_p = dir.join("embeddings.csv");
    let missing: Vec<String> = [&tokens_p, &f0_p, &dur_p]
        .iter()
        .filter(|p| !p.is_file())
        .map(|p| IngestError::MissingFile(p.display().to_string()).to_string())
        .collect();
    if !missing.is_empty() {
        return Err(PipelineError::Validation(missing));
    }
    let leaves = |file: &'static str| {
        move |e: IngestError| {
            PipelineError::Validation(e.leaves().iter().map(|l| format!("{file}: {l}")).collect())
        }
    };
    let tokens = read_tokens(&tokens_p).map_err(leaves("tokens.csv"))?;
    let tracks = read_f0(&f0_p, &dur_p).map_err(leaves("f0.csv/durations.csv"))?;
    let embeddings = if emb_p.is_file() {
        Some(read_embeddings(&emb_p).map_err(leaves("embeddings.csv"))?)
    } else {
        None
    };
    build_dataset(tokens, tracks, embeddings)
        .map_err(|r| PipelineError::Validation(r.violations.iter().map(|v| v.to_string()).collect()))
}

fn save_dataset(dir: &Path, ds: &CorpusDataset) -> Result<(), PipelineError> {
    create_dir(dir)?;
    let io = |p: &Path| {
        let p = p.display().to_string();
        move |e: std::io::Error| PipelineError::Io(format!("{p}: {e}"))
    };
    let p = dir.join("tokens.csv");
    write_tokens(&p, &ds.tokens).map_err(io(&p))?;
    let p = dir.join("f0.csv");
    write_f0(&p, ds.tracks.values()).map_err(io(&p))?;
    let p = dir.join("durations.csv");
    write_durations(&p, ds.tracks.values()).map_err(io(&p))?;
    if let Some(e) = &ds.embeddings {
        let p = dir.join("embeddings.csv");
        write_embeddings(&p, e).map_err(io(&p))?;
    }
    Ok(())
}

pub fn cmd_synth(cfg: &RunConfig, dir: &Path) -> Result<(), PipelineError> {
    let (ds, truth) = generate(&cfg.synth).map_err(|e| PipelineError::Config(e.to_string()))?;
    write_corpus(dir, &ds, &truth).map_err(|e| PipelineError::Io(e.to_string()))?;
    info!("synth: {} tokens, {} words -> {}", ds.len(), ds.words().len(), dir.display());
    Ok(())
}

pub fn cmd_ingest(cfg: &RunConfig) -> Result<TrimReport, PipelineError> {
    let t0 = Instant::now();
    let layout = Layout::new(&cfg.output);
    let ds = load_dataset(&cfg.input)?;
    info!("ingest: {} tokens, {} words", ds.len(), ds.words().len());
    let (trimmed, report) = trim(&ds, &cfg.trim).map_err(|e| match e {
        IngestError::Config(m) => PipelineError::Config(m),
        other => stage_err("ingest")(other.to_string()),
    })?;
    info!(
        "ingest: kept {} tokens of {} words after trimming",
        report.retained_tokens, report.retained_words
    );
    create_dir(&layout.root)?;
    save_dataset(&layout.ingested(), &trimmed)?;
    write_json(&layout.file("trim_report.json"), &report)?;
    record_timing(&layout, "ingest", t0.elapsed().as_secs_f64())?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelingScope {
    pub ingested_tokens: usize,
    pub dropped_other_context: usize,
    pub dropped_too_few_samples: usize,
    pub dropped_singleton_word: usize,
    pub modeled_tokens: usize,
    pub modeled_words: usize,
}

/// Tokens every method can give a row to: in a modeled context, with enough
/// samples, and of a word with at least two such tokens (so it can appear on
/// both sides of the split).
fn modeling_subset(cfg: &RunConfig, ds: &CorpusDataset) -> (CorpusDataset, ModelingScope) {
    let contexts: BTreeSet<&str> = cfg.models.contexts.iter().map(|s| s.as_str()).collect();
    let in_ctx = ds.filter(|t| contexts.contains(t.tonal_context().to_string().as_str()));
    let long = in_ctx.filter(|t| in_ctx.track(&t.token_id).is_some_and(|tr| tr.len() >= MIN_SAMPLES));
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &long.tokens {
        *counts.entry(t.word.as_str()).or_default() += 1;
    }
    let out = long.filter(|t| counts[t.word.as_str()] >= 2);
    let scope = ModelingScope {
        ingested_tokens: ds.len(),
        dropped_other_context: ds.len() - in_ctx.len(),
        dropped_too_few_samples: in_ctx.len() - long.len(),
        dropped_singleton_word: long.len() - out.len(),
        modeled_tokens: out.len(),
        modeled_words: out.words().len(),
    };
    (out, scope)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AicRow {
    pub context: String,
    pub withheld_term: String,
    pub aic_full: f64,
    pub aic_reduced: f64,
    pub delta_aic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub scope: ModelingScope,
    pub context_models: Vec<ModelSummary>,
    pub pattern_models: Vec<ModelSummary>,
    pub aic_comparisons: Vec<AicRow>,
    pub methods: Vec<Method>,
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<FitReport, PipelineError> {
    cfg.validate()?;
    let t0 = Instant::now();
    let layout = Layout::new(&cfg.output);
    let ingested = load_dataset(&layout.ingested())?;
    let (ds, scope) = modeling_subset(cfg, &ingested);
    if ds.is_empty() {
        return Err(stage_err("fit")("no tokens in the modeled contexts".into()));
    }
    info!(
        "fit: modeling {} tokens ({} outside the contexts, {} too short, {} singleton words dropped)",
        scope.modeled_tokens, scope.dropped_other_context, scope.dropped_too_few_samples, scope.dropped_singleton_word
    );
    let grid_p = cfg.models.grid_points;
    let fit_err = |e: tonecontour::contours::ContourError| stage_err("fit")(e.to_string());

    let specs: Vec<ModelSpec> = cfg
        .models
        .contexts
        .iter()
        .map(|c| {
            let mut s = ModelSpec::word_model(c, cfg.models.fs_k);
            s.ar1_rho = cfg.models.ar1_rho;
            s
        })
        .collect();
    for s in &specs {
        for label in &cfg.models.withhold {
            if !s.terms.iter().any(|t| &t.label() == label) {
                return Err(PipelineError::Config(format!("withheld term {label:?} is not in the word model")));
            }
        }
    }
    let models = fit_context_models(&specs, &ds).map_err(fit_err)?;

    let mut sets: Vec<ContourSet> = Vec::new();
    let mut pattern_models = Vec::new();
    for &m in &cfg.models.methods {
        let set = match m {
            Method::I => contours_method1(&ds, grid_p).map_err(fit_err)?,
            Method::II => {
                let (set, fitted) = contours_method2(&ds, grid_p, &cfg.method2).map_err(fit_err)?;
                pattern_models = fitted.iter().map(|f| f.summary()).collect();
                set
            }
            Method::III => contours_method3_fitted(&ds, &models, grid_p).map_err(fit_err)?,
        };
        if !set.excluded.is_empty() {
            warn!("method {m}: {} tokens without a row", set.excluded.len());
        }
        sets.push(set);
    }
    // all methods must describe the same tokens in the same order
    if let Some(first) = sets.first() {
        if let Some(bad) = sets.iter().find(|s| s.matrix.row_ids != first.matrix.row_ids) {
            return Err(stage_err("fit")(format!(
                "method {} rows do not line up with method {}",
                bad.method, first.method
            )));
        }
    }
    for set in &sets {
        let norm = normalize_rows(set).map_err(fit_err)?;
        write_contours(&layout.contours(set.method), set.method, &norm).map_err(fit_err)?;
    }

    let gold = gold_contours(&models, grid_p).map_err(fit_err)?;
    write_gold(&layout.file("gold_contours.csv"), &gold)?;

    let mut aic_rows = Vec::new();
    let targets: Vec<&String> = match &cfg.models.withhold_contexts {
        Some(list) => list.iter().collect(),
        None => cfg.models.contexts.iter().collect(),
    };
    for model in &models {
        let ctx = model.spec.context.clone().unwrap_or_default();
        if !targets.contains(&&ctx) {
            continue;
        }
        let full = model.aic_value().map_err(fit_err)?;
        for label in &cfg.models.withhold {
            let (reduced, delta) = compare_aic_fitted(model, label, &ds).map_err(fit_err)?;
            info!("fit: context {ctx}: withholding {label} changes AIC by {delta:.1}");
            aic_rows.push(AicRow {
                context: ctx.clone(),
                withheld_term: label.clone(),
                aic_full: full,
                aic_reduced: reduced.aic_value().map_err(fit_err)?,
                delta_aic: delta,
            });
        }
    }
    let mut csv = String::from("context,withheld_term,aic_full,aic_reduced,delta_aic\n");
    for r in &aic_rows {
        csv.push_str(&format!(
            "{},\"{}\",{},{},{}\n",
            r.context, r.withheld_term, r.aic_full, r.aic_reduced, r.delta_aic
        ));
    }
    write_text(&layout.file("aic_table.csv"), &csv)?;

    let report = FitReport {
        schema_version: SCHEMA_VERSION,
        scope,
        context_models: models.iter().map(|m| m.summary()).collect(),
        pattern_models,
        aic_comparisons: aic_rows,
        methods: cfg.models.methods.clone(),
    };
    write_json(&layout.file("model_summary.json"), &report)?;
    record_timing(&layout, "fit", t0.elapsed().as_secs_f64())?;
    Ok(report)
}

fn write_gold(path: &Path, gold: &BTreeMap<String, Vec<f64>>) -> Result<(), PipelineError> {
    let p = gold.values().next().map_or(0, |v| v.len());
    let mut out = String::from("tone_pattern");
    for j in 0..p {
        out.push_str(&format!(",g{j}"));
    }
    out.push('\n');
    for (pat, v) in gold {
        out.push_str(pat);
        for x in v {
            out.push_str(&format!(",{x}"));
        }
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn read_gold(path: &Path) -> Result<BTreeMap<String, Vec<f64>>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let mut parts = line.split(',');
        let pat = parts.next().unwrap_or_default().to_string();
        let v = parts
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| PipelineError::Io(format!("{}: line {}: {e}", path.display(), i + 1)))?;
        out.insert(pat, v);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitSummary {
    pub train_frac: f64,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_words: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub split: SplitSummary,
    pub restrict_candidates: bool,
    pub methods: Vec<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrototypeReport {
    pub schema_version: u32,
    pub nearest_words: BTreeMap<String, Vec<(String, f64)>>,
    pub prototypes: Vec<PatternPrototype>,
    pub similarity: Vec<SimilarityRow>,
    pub means: Vec<MethodMeans>,
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<(EvaluationReport, PrototypeReport), PipelineError> {
    cfg.validate()?;
    let t0 = Instant::now();
    let layout = Layout::new(&cfg.output);
    let eval_err = stage_err("evaluate");
    let ingested = load_dataset(&layout.ingested())?;
    if ingested.embeddings.is_none() {
        return Err(eval_err("the ingested corpus has no embeddings".into()));
    }
    let mut matrices: Vec<(Method, PitchMatrix)> = Vec::new();
    for &m in &cfg.models.methods {
        let (got, matrix) = read_contours(&layout.contours(m)).map_err(|e| eval_err(e.to_string()))?;
        if got != m {
            return Err(eval_err(format!("{} holds method {got} rows", layout.contours(m).display())));
        }
        if let Some((_, first)) = matrices.first() {
            if first.row_ids != matrix.row_ids {
                return Err(eval_err(format!("contour files for methods {} and {m} disagree on rows", matrices[0].0)));
            }
        }
        matrices.push((m, matrix));
    }
    let ids: BTreeSet<&str> = matrices[0].1.row_ids.iter().map(|s| s.as_str()).collect();
    let ds = ingested.filter(|t| ids.contains(t.token_id.as_str()));
    if ds.len() != ids.len() {
        return Err(eval_err("contour rows reference tokens missing from the corpus".into()));
    }
    let ecfg = &cfg.evaluate.mapping;
    let split = split_dataset(&ds, ecfg.train_frac, ecfg.split_seed).map_err(|e| eval_err(e.to_string()))?;
    info!("evaluate: {} train / {} test tokens", split.train_ids.len(), split.test_ids.len());

    let word_c = dataset_word_centroids(&ds).map_err(|e| eval_err(e.to_string()))?;
    let word_pattern: BTreeMap<String, String> =
        ds.tokens.iter().map(|t| (t.word.clone(), t.tone_pattern.to_string())).collect();
    let patterns: Vec<String> = word_pattern.values().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let pattern_c = pattern_centroids(&word_c, &word_pattern, &patterns).map_err(|e| eval_err(e.to_string()))?;
    let nearest: BTreeMap<String, Vec<(String, f64)>> = pattern_c
        .iter()
        .map(|(p, (c, _))| (p.clone(), nearest_words(c, &word_c, cfg.evaluate.top_k)))
        .collect();
    let gold = read_gold(&layout.file("gold_contours.csv"))?;

    let mut reports = Vec::new();
    let mut prototypes = Vec::new();
    let mut similarity = Vec::new();
    for (m, matrix) in &matrices {
        let name = m.to_string();
        let (report, g) = evaluate_mapping(&name, matrix, &ds, &split, ecfg).map_err(|e| eval_err(e.to_string()))?;
        info!(
            "evaluate: method {m}: train {:.3}, test {:.3}, majority {:.4}, permutation {}",
            report.accuracy_train,
            report.accuracy_test,
            report.majority_baseline,
            report
                .permutation_baseline
                .as_ref()
                .map_or("off".to_string(), |p| format!("{:.4}", p.mean))
        );
        let (p, s) = prototype_contours(&name, &g, &pattern_c, &gold).map_err(|e| eval_err(e.to_string()))?;
        prototypes.extend(p);
        similarity.extend(s);
        reports.push(report);
    }
    let eval = EvaluationReport {
        schema_version: SCHEMA_VERSION,
        split: SplitSummary {
            train_frac: ecfg.train_frac,
            seed: ecfg.split_seed,
            n_train: split.train_ids.len(),
            n_test: split.test_ids.len(),
            n_words: split.allocation.len(),
        },
        restrict_candidates: ecfg.restrict_candidates,
        methods: reports,
    };
    let protos = PrototypeReport {
        schema_version: SCHEMA_VERSION,
        nearest_words: nearest,
        means: method_means(&similarity),
        prototypes,
        similarity,
    };
    write_json(&layout.file("eval_report.json"), &eval)?;
    write_neighbors(&layout, &eval)?;
    write_json(&layout.file("prototypes.json"), &protos)?;
    write_prototype_tables(&layout, &protos)?;
    let grid = time_grid(cfg.models.grid_points);
    let mut curves: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for p in &protos.prototypes {
        curves
            .entry(p.tone_pattern.clone())
            .or_default()
            .insert(p.method.clone(), p.projected_contour.clone());
    }
    let gold_z: BTreeMap<String, Vec<f64>> = protos
        .prototypes
        .iter()
        .map(|p| (p.tone_pattern.clone(), p.gold_contour.clone()))
        .collect();
    write_text(&layout.file("prototypes.svg"), &svg::prototype_trellis(&grid, &gold_z, &curves))?;
    write_text(&layout.file("similarity.svg"), &svg::similarity_boxplots(&protos.similarity))?;
    record_timing(&layout, "evaluate", t0.elapsed().as_secs_f64())?;
    Ok((eval, protos))
}

fn write_neighbors(layout: &Layout, eval: &EvaluationReport) -> Result<(), PipelineError> {
    let mut out = String::from("method,token_id,neighbor_id,distance,correct\n");
    for r in &eval.methods {
        for NeighborRow {
            token_id,
            neighbor_id,
            distance,
            correct,
        } in &r.neighbors
        {
            out.push_str(&format!("{},{token_id},{neighbor_id},{distance},{correct}\n", r.method));
        }
    }
    write_text(&layout.file("neighbors.csv"), &out)
}

fn write_prototype_tables(layout: &Layout, protos: &PrototypeReport) -> Result<(), PipelineError> {
    let mut out = String::from("method,tone_pattern,n_words,cosine,pearson,euclidean\n");
    let n_words: BTreeMap<(&str, &str), usize> = protos
        .prototypes
        .iter()
        .map(|p| ((p.method.as_str(), p.tone_pattern.as_str()), p.n_words))
        .collect();
    for s in &protos.similarity {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.method,
            s.tone_pattern,
            n_words[&(s.method.as_str(), s.tone_pattern.as_str())],
            s.cosine,
            s.pearson,
            s.euclidean
        ));
    }
    write_text(&layout.file("prototypes.csv"), &out)?;
    let mut near = String::from("tone_pattern,rank,word,distance\n");
    for (pat, list) in &protos.nearest_words {
        for (i, (w, d)) in list.iter().enumerate() {
            near.push_str(&format!("{pat},{},{w},{d}\n", i + 1));
        }
    }
    write_text(&layout.file("nearest_words.csv"), &near)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodResult {
    pub method: String,
    pub accuracy_train: f64,
    pub accuracy_train_excluding_self: f64,
    pub accuracy_test: f64,
    pub majority_baseline: f64,
    pub permutation_baseline: Option<PermutationBaseline>,
    pub permutation_expected: f64,
}

/// Everything but the per-token tables, in one place.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: RunConfig,
    pub trim: TrimSummary,
    pub fit: FitReport,
    pub evaluation: Vec<MethodResult>,
    pub prototypes: Vec<MethodMeans>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrimSummary {
    pub input_tokens: usize,
    pub retained_tokens: usize,
    pub retained_words: usize,
    pub removed_too_short: usize,
    pub removed_outlier: usize,
    pub removed_below_min_tokens: usize,
    pub removed_above_cap: usize,
    pub removed_single_gender: usize,
}

pub fn run_all(cfg: &RunConfig) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let t0 = Instant::now();
    let trim = cmd_ingest(cfg)?;
    let fit = cmd_fit(cfg)?;
    let (eval, protos) = cmd_evaluate(cfg)?;
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        trim: TrimSummary {
            input_tokens: trim.input_tokens,
            retained_tokens: trim.retained_tokens,
            retained_words: trim.retained_words,
            removed_too_short: trim.removed_too_short,
            removed_outlier: trim.removed_outlier,
            removed_below_min_tokens: trim.removed_below_min_tokens,
            removed_above_cap: trim.removed_above_cap,
            removed_single_gender: trim.removed_single_gender,
        },
        fit,
        evaluation: eval
            .methods
            .iter()
            .map(|r| MethodResult {
                method: r.method.clone(),
                accuracy_train: r.accuracy_train,
                accuracy_train_excluding_self: r.accuracy_train_excluding_self,
                accuracy_test: r.accuracy_test,
                majority_baseline: r.majority_baseline,
                permutation_baseline: r.permutation_baseline.clone(),
                permutation_expected: r.permutation_expected,
            })
            .collect(),
        prototypes: protos.means,
    };
    let layout = Layout::new(&cfg.output);
    write_json(&layout.file("run_report.json"), &report)?;
    record_timing(&layout, "all", t0.elapsed().as_secs_f64())?;
    Ok(report)
}
