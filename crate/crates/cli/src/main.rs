//! `pensieve`: reference indexing, forward diffusion, retrospect-then-compare
//! decoding, breakdown analysis and binary-VQA scoring.
//!
//! Exit status: 0 success, 2 usage error, 3 I/O failure, 4 data-contract
//! violation (inputs readable but malformed or inconsistent).

mod commands;
mod error;
mod fsio;
mod manifest;
mod style;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

const CONFIG_HELP: &str = "\
Config file (TOML, flat keys; every key optional, defaults are the captioning preset):
  alpha_tau      = 1.0        weight of the test-image scores
  beta_d         = 0.1        base weight of the diffused-image subtraction
  beta_nn        = 0.1        base weight of the reference subtraction
  k              = 4          number of references
  m              = 50         head vocabulary size
  diffusion_step = 900        forward diffusion step for the diffused image (1..=1000)
  jsd_threshold  = 0.01       optional; skip the contrast when JSD(base, txt) is below it (inf = always skip)
  strategy       = \"greedy\"   greedy | sample | top_k:K | nucleus:P
  max_tokens     = 64
  seed           = 0
  eos_token      = \"</s>\"     optional; omit to always decode max_tokens tokens
  baseline       = false      decode from head-masked base scores only

Command-line flags override the file.";

#[derive(Debug, Parser)]
#[command(
    name = "pensieve",
    version,
    about = "Retrospect-then-compare decoding toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build or query a reference index.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Decode a sequence with the contrastive decoder.
    #[command(after_long_help = CONFIG_HELP)]
    Decode(Box<DecodeArgs>),
    /// Render per-step candidate tables from a breakdown.csv.
    Analyze(AnalyzeArgs),
    /// Apply forward diffusion to a tensor file.
    Diffuse(DiffuseArgs),
    /// Score yes/no predictions.
    Eval(EvalArgs),
}

#[derive(Debug, Subcommand)]
enum IndexCommand {
    /// Ingest JSON-lines reference records into an index file.
    Build {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the k nearest references as JSON lines.
    Search(SearchArgs),
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[arg(long)]
    index: PathBuf,
    /// JSON `{"semantic": [...], "appearance": [...]}`; appearance optional.
    #[arg(long)]
    query: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    /// Reference ids to exclude, one per line.
    #[arg(long)]
    blocklist: Option<PathBuf>,
    /// Reorder hits by BLEU@1 between captions and the narrativized question.
    #[arg(long, requires = "query_text")]
    rerank_bleu1: bool,
    #[arg(long)]
    query_text: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScorerKind {
    /// Seeded affine scorer over embedding visuals.
    Toy,
    /// Replays recorded logits from a trace file.
    Trace,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    #[arg(long, value_enum)]
    scorer: ScorerKind,
    /// TOML config; see the schema below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    jsd_threshold: Option<f64>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_tokens: Option<usize>,
    /// Bypass the contrast and decode from base scores only.
    #[arg(long)]
    baseline: bool,
    /// Whitespace-separated prompt tokens (may be empty).
    #[arg(long, allow_hyphen_values = true)]
    prompt: String,
    /// Output directory for tokens.txt, breakdown.csv and manifest.json.
    #[arg(long)]
    out: PathBuf,

    /// Test visual as a tensor file (toy scorer).
    #[arg(long, help_heading = "Toy scorer")]
    test: Option<PathBuf>,
    /// Reference embeddings as a JSON array of arrays (toy scorer).
    #[arg(long, help_heading = "Toy scorer", conflicts_with = "index")]
    references: Option<PathBuf>,
    /// Retrieve the k references from this index (toy scorer).
    #[arg(long, help_heading = "Toy scorer")]
    index: Option<PathBuf>,
    #[arg(long, help_heading = "Toy scorer", requires = "index")]
    blocklist: Option<PathBuf>,
    /// Vocabulary file, one token per line.
    #[arg(long, help_heading = "Toy scorer", conflicts_with = "vocab_size")]
    vocab: Option<PathBuf>,
    /// Size of the generated vocabulary `_t0.._tN-2, </s>`.
    #[arg(long, help_heading = "Toy scorer", value_parser = clap::value_parser!(u64).range(2..))]
    vocab_size: Option<u64>,
    #[arg(long, help_heading = "Toy scorer", default_value_t = 0)]
    scorer_seed: u64,

    #[arg(long, help_heading = "Trace scorer")]
    trace: Option<PathBuf>,
    #[arg(long, help_heading = "Trace scorer", default_value = "test")]
    test_id: String,
    #[arg(long, help_heading = "Trace scorer", default_value = "diffused")]
    diffused_id: String,
    /// Comma-separated reference ids; defaults to knn1..knnK.
    #[arg(long, help_heading = "Trace scorer", value_delimiter = ',')]
    ref_ids: Vec<String>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    breakdown: PathBuf,
    /// Candidates kept per step, ranked by base score.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    top: u64,
    /// Output directory for report.md, report.csv and manifest.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DiffuseArgs {
    #[arg(long)]
    input: PathBuf,
    /// Diffusion step, 1..=steps.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    t: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = pensieve_core::diffusion::DEFAULT_STEPS as u64,
          value_parser = clap::value_parser!(u64).range(1..))]
    steps: u64,
    #[arg(long, default_value_t = pensieve_core::diffusion::DEFAULT_BETA_START)]
    beta_start: f64,
    #[arg(long, default_value_t = pensieve_core::diffusion::DEFAULT_BETA_END)]
    beta_end: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Metric {
    Pope,
    Mme,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, value_enum)]
    metric: Metric,
    /// JSON lines `{image_id, question, gold, prediction}`.
    #[arg(long)]
    input: PathBuf,
    /// Output directory for report.json, report.md and manifest.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Index(IndexCommand::Build { records, out }) => {
            commands::index_build(&records, &out)
        }
        Command::Index(IndexCommand::Search(args)) => commands::index_search(args),
        Command::Decode(args) => commands::decode(*args),
        Command::Analyze(args) => commands::analyze(args),
        Command::Diffuse(args) => commands::diffuse(args),
        Command::Eval(args) => commands::eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => report(&err),
    }
}

fn report(err: &CliError) -> ExitCode {
    eprintln!("pensieve: {err}");
    err.exit_code()
}
