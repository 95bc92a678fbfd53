use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tonecontour::contours::{Method, Method2Config, DEFAULT_FS_K};
use tonecontour::ingest::TrimConfig;
use tonecontour::mapping::EvalConfig;
use tonecontour::synth::GenConfig;

use crate::PipelineError;

/// Everything a run needs. Loaded from TOML; every table and key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Directory holding tokens.csv, f0.csv, durations.csv and (optionally) embeddings.csv.
    pub input: PathBuf,
    pub output: PathBuf,
    pub trim: TrimConfig,
    pub models: ModelConfig,
    pub method2: Method2Config,
    pub evaluate: EvaluateConfig,
    pub synth: GenConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::from("data"),
            output: PathBuf::from("out"),
            trim: TrimConfig::default(),
            models: ModelConfig::default(),
            method2: Method2Config::default(),
            evaluate: EvaluateConfig::default(),
            synth: GenConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// One word model is fitted per tonal context listed here.
    pub contexts: Vec<String>,
    pub fs_k: usize,
    pub ar1_rho: f64,
    /// Terms to withhold one at a time for the AIC comparison table.
    pub withhold: Vec<String>,
    /// Contexts to run the AIC comparisons on (default: all modeled contexts).
    pub withhold_contexts: Option<Vec<String>>,
    pub grid_points: usize,
    pub methods: Vec<Method>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            contexts: ["4.4", "3.4", "4.1", "4.0"].iter().map(|s| s.to_string()).collect(),
            fs_k: DEFAULT_FS_K,
            ar1_rho: 0.95,
            withhold: vec!["s(normalized_t, word, bs=fs)".into(), "s(bg_prob_fol)".into()],
            withhold_contexts: None,
            grid_points: 100,
            methods: Method::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateConfig {
    #[serde(flatten)]
    pub mapping: EvalConfig,
    /// Words listed per pattern in the nearest-word table.
    pub top_k: usize,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            mapping: EvalConfig::default(),
            top_k: 2,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.models.contexts.is_empty() {
            return bad("models.contexts is empty".into());
        }
        for c in &self.models.contexts {
            if c.parse::<tonecontour::data::TonalContext>().is_err() {
                return bad(format!("unknown tonal context {c:?}"));
            }
        }
        if let Some(w) = &self.models.withhold_contexts {
            if let Some(c) = w.iter().find(|c| !self.models.contexts.contains(c)) {
                return bad(format!("withhold context {c:?} is not a modeled context"));
            }
        }
        if self.models.grid_points < 2 {
            return bad("models.grid_points must be at least 2".into());
        }
        if self.models.methods.is_empty() {
            return bad("no methods selected".into());
        }
        let f = self.evaluate.mapping.train_frac;
        if !(f > 0.0 && f < 1.0) {
            return bad(format!("evaluate.train_frac {f} must lie in (0, 1)"));
        }
        if self.evaluate.mapping.ridge < 0.0 {
            return bad("evaluate.ridge must be non-negative".into());
        }
        Ok(())
    }
}
