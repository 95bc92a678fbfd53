use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;
use tonecontour::synth::GenConfig;
use tonecontour_cli::config::RunConfig;
use tonecontour_cli::pipeline;
use tonecontour_cli::PipelineError;

#[derive(Parser)]
#[command(name = "tonecontour", version, about = "Pitch-contour modeling and embedding-to-contour mapping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, require_equals = true)]
    config: Option<PathBuf>,
    /// Corpus directory (overrides `input`).
    #[arg(long, require_equals = true)]
    input: Option<PathBuf>,
    /// Output directory (overrides `output`).
    #[arg(long, require_equals = true)]
    output: Option<PathBuf>,
    /// Split seed (overrides `evaluate.split_seed`).
    #[arg(long, require_equals = true)]
    split_seed: Option<u64>,
    /// Permutation repetitions; 0 disables the permutation baseline.
    #[arg(long, require_equals = true)]
    permutations: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and trim a corpus into <output>/ingested.
    Ingest(Common),
    /// Fit the contour models and write one contour file per method.
    Fit(Common),
    /// Fit the mappings, score them, and build pattern prototypes.
    Evaluate(Common),
    /// ingest, fit and evaluate in sequence.
    All(Common),
    /// Write a synthetic corpus with its ground truth.
    Synth {
        #[arg(long, require_equals = true)]
        config: Option<PathBuf>,
        /// Destination directory (defaults to `input` from the config).
        #[arg(long, require_equals = true)]
        output: Option<PathBuf>,
        #[arg(long, require_equals = true)]
        seed: Option<u64>,
        /// Switch off every noise source.
        #[arg(long)]
        noiseless: bool,
    },
}

fn load(config: &Option<PathBuf>) -> Result<RunConfig, PipelineError> {
    match config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn resolve(c: &Common) -> Result<RunConfig, PipelineError> {
    let mut cfg = load(&c.config)?;
    if let Some(p) = &c.input {
        cfg.input = p.clone();
    }
    if let Some(p) = &c.output {
        cfg.output = p.clone();
    }
    if let Some(s) = c.split_seed {
        cfg.evaluate.mapping.split_seed = s;
    }
    if let Some(r) = c.permutations {
        cfg.evaluate.mapping.permutations = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Ingest(c) => pipeline::cmd_ingest(&resolve(&c)?).map(|_| ()),
        Command::Fit(c) => pipeline::cmd_fit(&resolve(&c)?).map(|_| ()),
        Command::Evaluate(c) => pipeline::cmd_evaluate(&resolve(&c)?).map(|_| ()),
        Command::All(c) => pipeline::run_all(&resolve(&c)?).map(|_| ()),
        Command::Synth {
            config,
            output,
            seed,
            noiseless,
        } => {
            let mut cfg = load(&config)?;
            if noiseless {
                cfg.synth = GenConfig {
                    seed: cfg.synth.seed,
                    ..GenConfig::noiseless()
                };
            }
            if let Some(s) = seed {
                cfg.synth.seed = s;
            }
            let dir = output.unwrap_or_else(|| cfg.input.clone());
            pipeline::cmd_synth(&cfg, &dir)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
