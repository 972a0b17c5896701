mod config;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};

use config::PipelineConfig;
use drivevla::error::Error;
use stages::{CaptionMode, Logger};

/// Environment variable consulted for the VLM endpoint when no flag is given.
const VLM_ENDPOINT_ENV: &str = "DRIVEVLA_VLM_ENDPOINT";

#[derive(Parser)]
#[command(name = "drivevla", version, about = "Driving-log to vision-language-action dataset pipeline")]
struct Cli {
    /// TOML config file (default: ./drivevla.toml if present)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the recordings directory from the config
    #[arg(long, global = true)]
    recordings: Option<PathBuf>,
    /// Override the output directory from the config
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log one JSON object per line on stderr instead of plain text
    #[arg(long, global = true)]
    log_json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("caption_mode").args(["vlm_endpoint", "mock", "rules_only"])))]
struct VlmArgs {
    /// Base URL of a caption model server (overrides config and environment)
    #[arg(long)]
    vlm_endpoint: Option<String>,
    /// Use the bundled in-process mock caption server
    #[arg(long)]
    mock: bool,
    /// Skip the caption model; emit rule-generated captions only
    #[arg(long)]
    rules_only: bool,
}

impl VlmArgs {
    fn resolve(&self, cfg: &PipelineConfig) -> CaptionMode {
        if self.rules_only {
            return CaptionMode::RulesOnly;
        }
        if self.mock {
            return CaptionMode::Mock;
        }
        if let Some(url) = &self.vlm_endpoint {
            return CaptionMode::Endpoint(url.clone());
        }
        if let Ok(url) = std::env::var(VLM_ENDPOINT_ENV) {
            if !url.is_empty() {
                return CaptionMode::Endpoint(url);
            }
        }
        match &cfg.captioning.vlm_endpoint {
            Some(url) => CaptionMode::Endpoint(url.clone()),
            None => CaptionMode::RulesOnly,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate recordings and report per-stream sample counts
    Ingest,
    /// Fuse GNSS and IMU into per-frame ego poses
    Estimate,
    /// Flag jump and vibration artifacts in future trajectories
    Filter,
    /// Select scenes by inverse-frequency diversity sampling
    Sample {
        /// Number of scenes to keep (default: all eligible)
        #[arg(long)]
        scenes: Option<usize>,
        /// Sampling RNG seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate per-frame captions for sampled scenes
    Caption {
        #[command(flatten)]
        vlm: VlmArgs,
    },
    /// Write dataset records for sampled scenes
    Emit,
    /// Recompute dataset statistics from emitted records
    Stats,
    /// Export trajectory overlay geometry as CSV
    Render,
    /// Score trajectories on the test split
    #[command(group(ArgGroup::new("source").required(true).args(["predictions", "baseline"])))]
    Eval {
        /// JSONL file of per-frame predicted trajectories
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Score the built-in constant-steering kinematic baseline
        #[arg(long)]
        baseline: bool,
    },
    /// Generate a synthetic labeled corpus of recordings
    Synth {
        #[arg(long, default_value_t = 1)]
        scenes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Destination directory (default: the configured recordings dir)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip writing placeholder camera frames
        #[arg(long)]
        no_images: bool,
    },
    /// Run every stage in order: ingest through eval
    Pipeline {
        #[command(flatten)]
        vlm: VlmArgs,
        /// Number of scenes to keep (default: all eligible)
        #[arg(long)]
        scenes: Option<usize>,
        /// Sampling RNG seed
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 1,
                Error::Vlm { .. } => 3,
                _ => 2,
            })
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Config(format!("--jobs: {e}")))?;
    }
    let mut cfg = PipelineConfig::load(cli.config.as_deref()).map_err(Error::Config)?;
    if let Some(dir) = cli.recordings {
        cfg.paths.recordings = dir;
    }
    if let Some(dir) = cli.output {
        cfg.paths.output = dir;
    }
    let log = Logger { json: cli.log_json };

    match cli.command {
        Command::Ingest => stages::ingest(&cfg, &log),
        Command::Estimate => stages::estimate(&cfg, &log),
        Command::Filter => stages::filter(&cfg, &log),
        Command::Sample { scenes, seed } => {
            if scenes.is_some() {
                cfg.sampling.n_scenes = scenes;
            }
            if let Some(seed) = seed {
                cfg.sampling.seed = seed;
            }
            stages::sample(&cfg, &log)
        }
        Command::Caption { vlm } => stages::caption(&cfg, &vlm.resolve(&cfg), &log),
        Command::Emit => stages::emit(&cfg, &log),
        Command::Stats => stages::stats(&cfg, &log),
        Command::Render => stages::render(&cfg, &log),
        Command::Eval { predictions, baseline: _ } => {
            stages::eval(&cfg, predictions.as_deref(), &log)
        }
        Command::Synth { scenes, seed, out, no_images } => {
            stages::synth(&cfg, scenes, seed, out, !no_images, &log)
        }
        Command::Pipeline { vlm, scenes, seed } => {
            if scenes.is_some() {
                cfg.sampling.n_scenes = scenes;
            }
            if let Some(seed) = seed {
                cfg.sampling.seed = seed;
            }
            stages::pipeline(&cfg, &vlm.resolve(&cfg), &log)
        }
    }
}
