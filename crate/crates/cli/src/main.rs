use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use triage_core::Error;

mod commands;

#[derive(Debug, Parser)]
#[command(name = "triage", version, about = "Cost-aware email labeling with model cascades")]
struct Cli {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, also the default input directory.
    #[arg(long, global = true, default_value = "triage-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic inbox with baseline labels.
    MockWorld,
    /// Grow the calibration set, profile it and write the chosen configuration.
    Profile(DataArgs),
    /// Label a dataset with the chosen configuration.
    Label(LabelArgs),
    /// Score labels against the baseline.
    Evaluate(EvaluateArgs),
    /// Replay a load trace under the three provisioning strategies.
    SimulateLoad(LoadArgs),
    /// Decide whether to re-profile from recent confidences.
    DriftCheck(DriftArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Directory holding the world files; defaults to --out.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Timestamp recorded as the profiling time, in epoch milliseconds.
    #[arg(long, default_value_t = 0)]
    now_ms: u64,
}

#[derive(Debug, Args)]
struct LabelArgs {
    /// Emails to label (JSON Lines or CSV); defaults to the world's test split.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Directory holding chosen_config.json; defaults to --out.
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Baseline labels the mock backend imitates; defaults to the world's.
    #[arg(long)]
    baseline: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Labels to score; defaults to labels.jsonl in --out.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Skip the oracle reference, which runs every cascade model on every
    /// email.
    #[arg(long)]
    no_oracle: bool,
}

#[derive(Debug, Args)]
struct LoadArgs {
    /// Arrival trace CSV; a peak-load trace is generated when omitted.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    profile: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DriftArgs {
    /// Current time in epoch milliseconds.
    #[arg(long)]
    now_ms: u64,
    /// JSON array of recent confidences; defaults to confidences.json in --out.
    #[arg(long)]
    recent: Option<PathBuf>,
    /// Drift checkpoint; defaults to drift_state.json in --out.
    #[arg(long)]
    state: Option<PathBuf>,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        e if e.is_backend_failure() => 3,
        Error::Config(_)
        | Error::UnknownModel(_)
        | Error::UnknownLabel(_)
        | Error::WrongModelKind { .. }
        | Error::ModelFile(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
