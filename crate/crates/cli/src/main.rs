//! Command-line pipeline: corpus generation, detector and attack training, evaluation and reports.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use afgen::DetectorKind;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "afgen", version, about = "Anti-forensic generator pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Args, Clone)]
pub struct Common {
    /// JSON config; individual flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace an existing output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the synthetic corpus and its manifests.
    GenData(GenData),
    /// Train zoo detectors on the D-set.
    TrainDetectors(TrainDetectors),
    /// Train a generator against frozen detectors.
    TrainAttack(TrainAttack),
    /// Apply a generator checkpoint to every PNG in a directory.
    Attack(Attack),
    /// Transfer matrix, baselines and block-alignment probe.
    Eval(Eval),
    /// Render markdown tables from report CSVs.
    Report(Report),
    /// Run the fast invariant suite.
    Selfcheck(Selfcheck),
}

#[derive(Debug, Args)]
pub struct GenData {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub d_real: Option<usize>,
    #[arg(long)]
    pub d_fake: Option<usize>,
    #[arg(long)]
    pub a_fake: Option<usize>,
    #[arg(long)]
    pub eval_real: Option<usize>,
    #[arg(long)]
    pub eval_fake: Option<usize>,
    #[arg(long)]
    pub probe_fake: Option<usize>,
    #[arg(long)]
    pub probe_size: Option<usize>,
}

/// Training keys shared by detector and attack runs.
#[derive(Debug, Args, Clone)]
pub struct TrainKeys {
    #[arg(long, allow_negative_numbers = true)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr_half_every: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Corpus directory written by gen-data.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainDetectors {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub keys: TrainKeys,
    /// Detectors to train (default: all four).
    #[arg(long, value_delimiter = ',')]
    pub kinds: Vec<DetectorKind>,
}

#[derive(Debug, Args)]
pub struct TrainAttack {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub keys: TrainKeys,
    /// Directory of detector checkpoints written by train-detectors.
    #[arg(long)]
    pub detectors: PathBuf,
    #[arg(long)]
    pub victim: Option<DetectorKind>,
    /// Attack an ensemble instead of the victim.
    #[arg(long, value_delimiter = ',')]
    pub ensemble: Vec<DetectorKind>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub beta: Vec<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    /// `generator` or `generator-linear-out`.
    #[arg(long)]
    pub arch: Option<String>,
}

#[derive(Debug, Args)]
pub struct Attack {
    #[command(flatten)]
    pub common: Common,
    /// Generator checkpoint, or an attack run directory containing one.
    #[arg(long)]
    pub generator: PathBuf,
    /// Directory of PNG images of any size.
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct Eval {
    #[command(flatten)]
    pub common: Common,
    /// One attack run directory, or a directory of them.
    #[arg(long)]
    pub attacks: PathBuf,
    /// Directory of detector checkpoints.
    #[arg(long)]
    pub victims: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Random crop draws for the block-alignment probe (default 10).
    #[arg(long)]
    pub probe_draws: Option<usize>,
}

#[derive(Debug, Args)]
pub struct Report {
    #[command(flatten)]
    pub common: Common,
    /// Directory searched recursively for report CSVs.
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct Selfcheck {
    #[command(flatten)]
    pub common: Common,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::TrainDetectors(a) => commands::train_detectors(a),
        Command::TrainAttack(a) => commands::train_attack(a),
        Command::Attack(a) => commands::attack(a),
        Command::Eval(a) => commands::eval(a),
        Command::Report(a) => commands::report(a),
        Command::Selfcheck(a) => commands::selfcheck(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
