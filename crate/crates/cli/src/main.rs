//! `bimatch`: command-line front end for the matching engine.
//!
//! Exit codes: 0 on success, 1 for data errors (validation, format, I/O),
//! 2 for usage errors. Every error is reported on stderr as a single line
//! starting with `bimatch: error[<category>]:`.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use bimatch_core::TopK;
use clap::{Args, Parser, Subcommand};

const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\nbundle format: 1\ntensor format: BMT1"
);

#[derive(Debug, Parser)]
#[command(name = "bimatch", version, long_version = LONG_VERSION)]
#[command(about = "Bijective pixel matching for video object segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Segment every frame of a bundle from its frame-0 annotation.
    Run(RunArgs),
    /// Match one reference/query pair and write the two score maps.
    Match(MatchArgs),
    /// Score predicted masks against a bundle's ground truth.
    Eval(EvalArgs),
    /// Generate a synthetic bundle.
    Synth(SynthArgs),
    /// Render a score-map tensor as a grayscale PNG.
    VizScores(VizArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Bundle directory.
    #[arg(long)]
    bundle: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Top-K for matching against frame 0 (`inf` for surjective).
    #[arg(long, default_value = "inf", value_name = "K")]
    k_global: TopK,
    /// Top-K for matching against the previous frame (`inf` for surjective).
    #[arg(long, default_value = "4", value_name = "K")]
    k_local: TopK,
    /// Number of past masks fed to the mask embedding.
    #[arg(long, default_value_t = 3, value_name = "L", value_parser = clap::value_parser!(u8).range(1..=5))]
    history: u8,
    /// Seed for the generated embedding weights.
    #[arg(long, conflicts_with = "weights")]
    seed: Option<u64>,
    /// Embedding weights file (a sequence of BMT1 tensors).
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Also write per-object score maps for each frame.
    #[arg(long)]
    dump_scores: bool,
}

#[derive(Debug, Args)]
struct MatchArgs {
    /// Reference features, a C x H x W tensor.
    #[arg(long)]
    reference: PathBuf,
    /// Query features, a C x H x W tensor.
    #[arg(long)]
    query: PathBuf,
    /// Reference foreground mask (PNG, values >= 128 are foreground).
    #[arg(long)]
    mask: PathBuf,
    /// Output directory for `y_bg.bmt` and `y_fg.bmt`.
    #[arg(long)]
    out: PathBuf,
    /// Keep each reference pixel's top K matches; surjective when omitted.
    #[arg(long)]
    k: Option<TopK>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Directory of predicted label maps (`NNNN.png`), or a `run` output directory.
    #[arg(long)]
    pred: PathBuf,
    /// Bundle directory holding the ground truth.
    #[arg(long)]
    gt: PathBuf,
    /// Report file to write (TOML).
    #[arg(long)]
    report: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Scene description (TOML); the built-in distractor scene when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output bundle directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct VizArgs {
    /// Score-map tensor (H x W, or 1 x H x W).
    #[arg(long = "in", value_name = "TENSOR")]
    input: PathBuf,
    /// Output PNG.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid usage");
            let first = first.strip_prefix("error: ").unwrap_or(first);
            eprintln!("bimatch: error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Run(a) => commands::run(a),
        Command::Match(a) => commands::match_pair(a),
        Command::Eval(a) => commands::eval(a),
        Command::Synth(a) => commands::synth(a),
        Command::VizScores(a) => commands::viz_scores(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "bimatch: error[{}]: {}",
                commands::category(&e),
                one_line(&e.to_string())
            );
            ExitCode::from(1)
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
