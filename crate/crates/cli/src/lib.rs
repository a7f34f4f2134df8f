//! `c2f`: synthesize graphs, pre-train encoders, probe embeddings, run the
//! ablation and similarity diagnostics, and check the oracle suite.

mod commands;
mod error;

pub use crate::error::CliError;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "c2f",
    version,
    about = "Coarse-to-fine contrastive pre-training on graphs"
)]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Upper bound on worker threads. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a stochastic block model graph into a directory.
    Synth(SynthArgs),
    /// Pre-train an encoder and write its checkpoint and embeddings.
    Pretrain(PretrainArgs),
    /// Fit a linear probe on stored embeddings and print metrics as CSV.
    Probe(ProbeArgs),
    /// Compare the vanilla, coarse, fine and c2f objectives.
    Ablate(AblateArgs),
    /// Similarity between clean and edge-dropped embeddings per drop ratio.
    Diagnose(DiagnoseArgs),
    /// Run the oracle suite; exits nonzero if any check fails.
    Verify,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Nodes per block, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [100, 100])]
    blocks: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    p_in: f64,
    #[arg(long, default_value_t = 0.01)]
    p_out: f64,
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
    /// Distance between block feature means.
    #[arg(long, default_value_t = 1.0)]
    separation: f64,
    /// Directory receiving edges.txt, features.csv and labels.txt.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GraphArgs {
    /// Directory holding edges.txt, features.csv and optionally labels.txt.
    #[arg(long)]
    graph: PathBuf,
}

#[derive(Debug, Args)]
struct PretrainArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// JSON training configuration; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for encoder.c2fp, embeddings.c2fe, config.json and losses.csv.
    #[arg(long, required_unless_present = "dump_config")]
    out: Option<PathBuf>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Debug, Args)]
struct ProbeSettings {
    #[arg(long, default_value_t = 20)]
    train_per_class: usize,
    #[arg(long, default_value_t = 30)]
    val_per_class: usize,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    probe_lr: f64,
    #[arg(long, default_value_t = 5e-4)]
    weight_decay: f64,
    /// Skip per-column standardization of the embeddings.
    #[arg(long)]
    raw: bool,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    #[arg(long)]
    embeddings: PathBuf,
    /// One integer label per line.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value = "probe")]
    run_id: String,
    #[command(flatten)]
    probe: ProbeSettings,
    /// CSV destination; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Runs per mode, with seeds `seed, seed+1, …`; each row is their mean.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[command(flatten)]
    probe: ProbeSettings,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// Configuration the checkpoint was trained with.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0.2, 0.4, 0.6, 0.8])]
    ratios: Vec<f64>,
    /// Dropped views per ratio.
    #[arg(long, default_value_t = 5)]
    draws: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Executes a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    if cli.threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let seed = cli.seed;
    match cli.command {
        Command::Synth(a) => commands::synth(&a, seed.unwrap_or(0)),
        Command::Pretrain(a) => commands::pretrain(&a, seed),
        Command::Probe(a) => commands::probe(&a, seed.unwrap_or(0)),
        Command::Ablate(a) => commands::ablate(&a, seed, cli.threads),
        Command::Diagnose(a) => commands::diagnose(&a, seed.unwrap_or(0)),
        Command::Verify => commands::verify(seed.unwrap_or(0)),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_args<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)
        .map_err(|e| CliError::Usage(first_line(&e.render().to_string())))?;
    run(cli)
}

fn first_line(msg: &str) -> String {
    msg.lines()
        .next()
        .unwrap_or("invalid arguments")
        .trim()
        .to_string()
}

/// Process entry point: exit code 1 and a single stderr line on failure.
pub fn main_entry() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", first_line(&e.render().to_string()));
            return ExitCode::FAILURE;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", error::single_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}
