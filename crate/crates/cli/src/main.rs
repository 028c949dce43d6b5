use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use commands::*;

/// Detection and genus classification of vessel elements on macerated
/// hardwood slides.
#[derive(Parser)]
#[command(name = "vesselid", version)]
struct Cli {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice of the run (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Dataset directory, overriding the config's.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Store focal-plane images as a tiled slide and index it.
    Ingest(IngestArgs),
    /// Render a synthetic slide with ground truth.
    Synth(SynthArgs),
    /// Assign macerations to train/val/test.
    Split(SplitArgs),
    /// Write augmented detector training images.
    Augment(AugmentArgs),
    /// Detect vessel elements on slides.
    Detect(DetectArgs),
    /// Assign genera to detections and report genus presence per slide.
    Classify(ClassifyArgs),
    /// Score classified detections against ground truth.
    Evaluate(EvaluateArgs),
    /// Dataset statistics and presence summaries.
    Report(ReportArgs),
    /// One round of predict, review and refit.
    Loop(LoopArgs),
    /// Serve the review API.
    Serve(ServeArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = match Ctx::new(cli.config.as_deref(), cli.seed, cli.out, cli.dataset) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let result = match cli.command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::Synth(a) => synth(&ctx, a),
        Command::Split(a) => split(&ctx, a),
        Command::Augment(a) => augment(&ctx, a),
        Command::Detect(a) => detect(&ctx, a),
        Command::Classify(a) => classify(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Report(a) => report(&ctx, a),
        Command::Loop(a) => review_loop(&ctx, a),
        Command::Serve(a) => serve(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}

fn fail(e: vesselid::Error) -> ExitCode {
    let message = e.to_string().replace(['\n', '\r'], " ");
    eprintln!("error: code={} message={message}", e.code());
    ExitCode::FAILURE
}
