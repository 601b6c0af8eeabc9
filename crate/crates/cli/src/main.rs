use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coughkit::config::ExperimentConfig;
use coughkit::pipeline::{run_pipeline, Command, RunRequest};
use coughkit::synth::write_demo_dataset;
use coughkit::Error;

/// Cough audio pipeline: segmentation, features, pretraining, fine-tuning
/// and evaluation.
#[derive(Parser)]
#[command(name = "coughkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Detect cough onsets and cut fixed-length segments.
    Segment(StageArgs),
    /// Write log-mel spectrogram files and a matching manifest.
    Featurize(StageArgs),
    /// Teacher-student masked pretraining.
    Pretrain(StageArgs),
    /// Supervised fine-tuning with per-epoch evaluation.
    Finetune(StageArgs),
    /// Subject-level AUROC report.
    Evaluate(StageArgs),
    /// Score every manifest row with a fine-tuned model.
    Predict(StageArgs),
    /// Write a small synthetic dataset for trying the pipeline.
    Demo {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        subjects: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct StageArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Model checkpoint for evaluate and predict.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn stage(command: Command, args: StageArgs) -> Result<serde_json::Value, Error> {
    let mut config = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = args.out {
        config.output_dir = Some(out);
    }
    if let Some(ckpt) = args.checkpoint {
        config.checkpoint = Some(ckpt);
    }
    let out_dir = config
        .output_dir
        .clone()
        .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))?;
    let summary = run_pipeline(&RunRequest { command, config, manifest: args.manifest, out_dir })?;
    Ok(serde_json::json!({
        "command": command.name(),
        "record": summary.record,
        "artifacts": summary.artifacts.len(),
    }))
}

fn run(cli: Cli) -> Result<serde_json::Value, Error> {
    match cli.command {
        Cmd::Segment(a) => stage(Command::Segment, a),
        Cmd::Featurize(a) => stage(Command::Featurize, a),
        Cmd::Pretrain(a) => stage(Command::Pretrain, a),
        Cmd::Finetune(a) => stage(Command::Finetune, a),
        Cmd::Evaluate(a) => stage(Command::Evaluate, a),
        Cmd::Predict(a) => stage(Command::Predict, a),
        Cmd::Demo { out, subjects, seed } => {
            let manifest = write_demo_dataset(&out, subjects, seed)?;
            Ok(serde_json::json!({ "command": "demo", "manifest": manifest }))
        }
    }
}

fn init_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("COUGHKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("COUGHKIT_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match init_threads().and_then(|_| run(cli)) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("{}", serde_json::json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
