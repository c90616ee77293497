//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 data or format, 3 resource (network,
//! disk).

mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::Serialize;

use crate::ingest::{DumpFormat, Platform};
use crate::model_io::ModelFormat;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_RESOURCE: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "toxivec", version, about = "Imageboard corpora to word embeddings and toxic-term lexicons")]
pub struct Cli {
    /// Flat key=value file; keys are flag names. Command-line flags win.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse archive dumps or crawl an archive API into a normalized corpus.
    Ingest(IngestArgs),
    /// Train CBOW embeddings with negative sampling.
    Train(TrainArgs),
    /// Convert a model between text and binary formats.
    Convert(ConvertArgs),
    /// Query a trained model.
    #[command(subcommand)]
    Query(QueryCommand),
    /// Propose lexicon candidates, or merge reviewed ones.
    Expand(ExpandArgs),
    /// Summarize a normalized corpus.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct IngestArgs {
    /// Dump format of the input files.
    #[arg(long, value_name = "FORMAT", value_parser = parse_dump_format)]
    #[serde(serialize_with = "ser_debug")]
    pub format: Option<DumpFormat>,
    /// Dump file to parse; repeatable.
    #[arg(long = "input", value_name = "PATH")]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value = "pol")]
    pub board: String,
    #[arg(long, default_value = "fourchan")]
    pub platform: Platform,
    /// Normalized corpus to write.
    #[arg(long, value_name = "PATH")]
    pub output: PathBuf,
    /// Append to the corpus instead of replacing it (always on when crawling).
    #[arg(long)]
    pub append: bool,
    /// Archive base URL; switches to crawling the archive API.
    #[arg(long, value_name = "URL")]
    pub endpoint: Option<String>,
    #[arg(long, default_value_t = 1000, value_name = "MS")]
    pub rate_limit_ms: u64,
    /// Cursor state file [default: ingest.cursor.json next to the output].
    #[arg(long, value_name = "PATH")]
    pub cursor: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub max_pages: u32,
    #[arg(long, default_value_t = 5)]
    pub max_retries: u32,
    #[arg(long, default_value_t = 30, value_name = "SECS")]
    pub timeout_secs: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Normalized corpus, one document per line.
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub output: PathBuf,
    /// Output format [default: from the output extension, .bin is binary].
    #[arg(long, value_name = "bin|txt")]
    #[serde(serialize_with = "ser_debug")]
    pub format: Option<ModelFormat>,
    #[arg(long, default_value_t = 150)]
    pub dim: usize,
    #[arg(long, default_value_t = 5)]
    pub window: usize,
    #[arg(long, default_value_t = 5)]
    pub negative: usize,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub min_count: u64,
    /// Frequent-word subsampling threshold; 0 disables it.
    #[arg(long, default_value_t = 0.0)]
    pub subsample: f64,
    #[arg(long, default_value_t = 0.025)]
    pub alpha: f64,
    /// Worker threads. Only 1 gives reproducible models.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Draw the context radius from 1..=window per position.
    #[arg(long)]
    pub dynamic_window: bool,
    /// Negative-sampling table size.
    #[arg(long, default_value_t = crate::vocab::DEFAULT_TABLE_SIZE)]
    pub table_size: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ConvertArgs {
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long = "out", value_name = "PATH")]
    pub output: PathBuf,
    /// [default: from the input extension]
    #[arg(long, value_name = "bin|txt")]
    pub in_format: Option<ModelFormat>,
    /// [default: from the output extension]
    #[arg(long, value_name = "bin|txt")]
    pub out_format: Option<ModelFormat>,
}

#[derive(Debug, Subcommand)]
pub enum QueryCommand {
    /// Nearest neighbours of a word by cosine similarity.
    Similar(SimilarArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SimilarArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// [default: from the model extension]
    #[arg(long, value_name = "bin|txt")]
    pub model_format: Option<ModelFormat>,
    #[arg(long)]
    pub word: String,
    #[arg(short = 'n', default_value_t = 10)]
    pub n: usize,
    /// Print a JSON array of {word, score, score_rounded}.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ExpandArgs {
    /// Lexicon file (JSON Lines).
    #[arg(long, value_name = "PATH")]
    pub lexicon: PathBuf,
    /// Seed terms, comma separated, added before expanding.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<String>,
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,
    #[arg(long, value_name = "bin|txt")]
    pub model_format: Option<ModelFormat>,
    /// Message file, one message per line; switches to the external scan.
    #[arg(long, value_name = "PATH")]
    pub external: Option<PathBuf>,
    /// Cosine threshold [default: 0.7 for neighbours, 0.5 for external scans].
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Neighbours considered per lexicon term.
    #[arg(short = 'n', default_value_t = 10)]
    pub n: usize,
    /// Write candidates as JSON Lines here instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub candidates: Option<PathBuf>,
    /// Merge reviewed candidates (JSON Lines) into the lexicon and exit.
    #[arg(long, value_name = "PATH")]
    pub accept: Option<PathBuf>,
    /// Merge every candidate without review.
    #[arg(long)]
    pub accept_all: bool,
    /// Threads for the external scan.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    /// Also write the vocabulary as word<TAB>count.
    #[arg(long, value_name = "PATH")]
    pub tsv: Option<PathBuf>,
    /// Minimum count for the TSV dump.
    #[arg(long, default_value_t = crate::vocab::DEFAULT_MIN_COUNT)]
    pub min_count: u64,
    #[arg(long, default_value_t = crate::stats::DEFAULT_TOP_N)]
    pub top: usize,
    #[arg(long)]
    pub json: bool,
}

fn parse_dump_format(s: &str) -> Result<DumpFormat, String> {
    s.parse()
}

fn ser_debug<T: std::fmt::Debug, S: serde::Serializer>(v: &Option<T>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => s.serialize_str(&format!("{v:?}").to_lowercase()),
        None => s.serialize_none(),
    }
}

/// A failed command with its exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { code: EXIT_USAGE, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError { code: EXIT_DATA, message: message.into() }
    }

    pub fn resource(message: impl Into<String>) -> Self {
        CliError { code: EXIT_RESOURCE, message: message.into() }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

/// `level=… msg=…` lines on stderr; `TOXIVEC_LOG` sets the filter.
pub fn init_logging() {
    let env = env_logger::Env::default().filter_or("TOXIVEC_LOG", "info");
    let _ = env_logger::Builder::from_env(env)
        .format(|buf, record| {
            writeln!(buf, "level={} msg={:?}", record.level().as_str().to_ascii_lowercase(), record.args().to_string())
        })
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    init_logging();
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let command = command();
    let args = match config::expand_args(&command, args, &|k| std::env::var(k).ok()) {
        Ok(a) => a,
        Err(e) => return report(e),
    };
    let cli = match command.try_get_matches_from(args).and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => report(e),
    }
}

/// The clap command with repeated flags resolved last-wins, which is what
/// lets command-line values override injected config values.
pub fn command() -> clap::Command {
    fn last_wins(cmd: clap::Command) -> clap::Command {
        cmd.args_override_self(true).mut_subcommands(last_wins)
    }
    last_wins(Cli::command())
}

fn report(e: CliError) -> u8 {
    log::error!("{}", e.message);
    e.code
}
