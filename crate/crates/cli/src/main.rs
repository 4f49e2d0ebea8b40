//! `orthopair` command-line pipeline.

mod commands;
mod failure;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use orthopair::corpus::{GroupBy, PairFormat};
use orthopair::negatives::NegativeKind;
use orthopair::synthetic::Systems;
use serde::Serialize;

use failure::Failure;

#[derive(Debug, Parser)]
#[command(name = "orthopair", version, about = "Pair orthographic variants with standard forms using learned edit distances")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Find candidate orthographic variants in raw text.
    Extract(ExtractArgs),
    /// Levenshtein-distance profile of a pair corpus.
    Characterize(CharacterizeArgs),
    /// Generate negative pairs for a corpus.
    GenNegatives(GenNegativesArgs),
    /// Split a pair corpus into train, validation and test files.
    Split(SplitArgs),
    /// Train a neural edit model.
    Train(TrainArgs),
    /// Pair-classification metrics on a test file.
    Evaluate(EvaluateArgs),
    /// Rank every lexicon entry for each test variant.
    Rank(RankArgs),
    /// Train and evaluate one model per (strategy, n) cell.
    Sweep(SweepArgs),
    /// Tabulate a sweep directory.
    Report(ReportArgs),
    /// Generate a synthetic pair corpus by perturbing lexicon words.
    Synth(SynthArgs),
}

#[derive(Debug, Args, Serialize)]
struct OutArgs {
    /// Output directory; must be missing or empty unless --force is given.
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    /// Write into an existing non-empty output directory.
    #[arg(long)]
    #[serde(skip)]
    force: bool,
}

#[derive(Debug, Args, Serialize)]
struct ModelArgs {
    #[arg(long, default_value_t = 256)]
    emb_size: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 512)]
    batch_size: usize,
    /// Validate every this many batches.
    #[arg(long, default_value_t = 50)]
    val_freq: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 100)]
    max_epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
}

#[derive(Debug, Args, Serialize)]
struct ExtractArgs {
    /// Plain-text documents.
    #[arg(long, required = true)]
    corpus: Vec<PathBuf>,
    /// Reference lexicon, one token per line (default: bundled 1k list).
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Keep a seeded random sample of this many candidates.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    #[serde(skip)]
    out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
struct CharacterizeArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "gb-tsv")]
    format: PairFormat,
    /// Measure distances without case folding.
    #[arg(long)]
    preserve_case: bool,
    /// Also write the report into this directory.
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    force: bool,
}

#[derive(Debug, Args, Serialize)]
struct GenNegativesArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "gb-tsv")]
    format: PairFormat,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, default_value = "random")]
    strategy: NegativeKind,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    #[serde(skip)]
    out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
struct SplitArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "gb-tsv")]
    format: PairFormat,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.8, 0.1, 0.1])]
    fractions: Vec<f64>,
    /// `variant-type` keeps all pairs of one variant in the same split.
    #[arg(long, default_value = "variant-type")]
    group_by: GroupBy,
    #[command(flatten)]
    #[serde(skip)]
    out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long, default_value = "gb-tsv")]
    format: PairFormat,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, default_value = "random")]
    strategy: NegativeKind,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    #[serde(skip)]
    out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
struct EvaluateArgs {
    /// Trained model file.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value = "gb-tsv")]
    format: PairFormat,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, default_value = "random")]
    strategy: NegativeKind,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    #[serde(skip)]
    out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
struct RankArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value = "gb-tsv")]
    format: PairFormat,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
struct SweepArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "gb-tsv")]
    format: PairFormat,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Comma-separated strategies.
    #[arg(long, value_delimiter = ',', default_values_t = [NegativeKind::Random, NegativeKind::Ld, NegativeKind::Mixed])]
    strategy: Vec<NegativeKind>,
    /// Comma-separated negative counts.
    #[arg(long, value_delimiter = ',', default_values_t = [10, 20, 30, 50])]
    n: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    #[serde(skip)]
    out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
struct ReportArgs {
    /// Directory written by `sweep`.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    #[serde(skip)]
    out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    /// Words to draw from (default: bundled 1k list).
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    words: usize,
    /// `single` (rule system A) or `two` (systems A and B).
    #[arg(long, default_value = "single")]
    systems: Systems,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    #[serde(skip)]
    out: OutArgs,
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Failure::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::Usage(format!("cannot start worker pool: {e}")))?;
    }
    match cli.command {
        Command::Extract(a) => commands::extract(a),
        Command::Characterize(a) => commands::characterize(a),
        Command::GenNegatives(a) => commands::gen_negatives(a),
        Command::Split(a) => commands::split(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Rank(a) => commands::rank(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Report(a) => commands::report(a),
        Command::Synth(a) => commands::synth(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
