//! `htd`: synthetic data generation, training, dream evaluation and
//! lower-body controller kernel checks.
//!
//! Exit codes: 0 success, 1 domain failure, 2 usage error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use htd_core::policy::Variant;
use htd_core::training::TargetMode;

/// Environment variable naming the directory used when `--out` is omitted.
pub const OUTPUT_ROOT_ENV: &str = "HTD_OUTPUT_ROOT";

#[derive(Parser, Debug)]
#[command(name = "htd", version, about = "Touch-dreaming policy workflows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic demonstration dataset.
    GenData(GenDataArgs),
    /// Train a policy on a dataset directory.
    Train(TrainArgs),
    /// Roll out dreams against recorded futures and write reports.
    Eval(EvalArgs),
    /// Run the controller kernel case file.
    LbcCheck(LbcCheckArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; defaults to `$HTD_OUTPUT_ROOT/data`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Generator config (TOML); overrides the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Square image side in pixels.
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    episode_len: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory written by `gen-data`.
    #[arg(long)]
    data: PathBuf,
    /// Output directory; defaults to `$HTD_OUTPUT_ROOT/run`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training config (TOML); its values override the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long, value_parser = parse_targets)]
    targets: Option<TargetMode>,
    /// Use the small model preset.
    #[arg(long)]
    small: bool,
    /// Continue from a checkpoint directory.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Dataset directory to evaluate on.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Replace the policy with one that returns the recorded future.
    #[arg(long)]
    oracle: bool,
    /// Output directory; defaults to `$HTD_OUTPUT_ROOT/eval`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    episode: usize,
    /// Steps between dream chunks; defaults to the dream horizon.
    #[arg(long)]
    stride: Option<usize>,
    /// Dream horizon for `--oracle` without a checkpoint.
    #[arg(long)]
    tau: Option<usize>,
    /// Region whose latent heatmaps are exported, e.g. `right.middle`.
    #[arg(long)]
    finger: Vec<String>,
    /// Training run directories to compare in an ablation table.
    #[arg(long, num_args = 1..)]
    runs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct LbcCheckArgs {
    /// Case file (JSON); defaults to the bundled cases.
    #[arg(long)]
    cases: Option<PathBuf>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse::<Variant>().map_err(|e| e.to_string())
}

fn parse_targets(s: &str) -> Result<TargetMode, String> {
    match s {
        "ema-teacher" => Ok(TargetMode::EmaTeacher),
        "live-student" => Ok(TargetMode::LiveStudent),
        _ => Err(format!("unknown target mode {s:?} (expected ema-teacher or live-student)")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::LbcCheck(a) => commands::lbc_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
