//! `astbridge`: one binary driving the pipeline from parse trees to
//! clone predictions, retrieval rankings and split audits.
//!
//! Exit codes: 0 success, 1 audit failure or invalid input, 2 usage error.
//! Logs go to standard error; data goes to files or standard output.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand, ValueEnum};

use config::Knobs;

#[derive(Parser, Debug)]
#[command(name = "astbridge", version, about = "Cross-language code similarity over unified ASTs")]
pub struct Cli {
    /// JSON file whose keys mirror the long flags (snake_case); flags win.
    #[arg(long, global = true, env = "ASTBRIDGE_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub knobs: Knobs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Writes a template-generated corpus and its grammar schemas under --out.
    Synth,
    /// Partitions the corpus tasks 8:1:1 into a split manifest (--out).
    Split,
    /// Builds the universal label set (--out labels.json).
    Unify {
        #[arg(value_parser = ["build"], hide = true)]
        action: Option<String>,
    },
    /// Maps, roots, protects and prunes every tree into --out/<graph_id>.json.
    Enhance,
    /// Trains a graph matching network; writes the checkpoint, its sidecar,
    /// a run summary and the JSON-lines training log.
    Train {
        /// Training log; defaults to <out>.log.jsonl.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Scores pairs and writes JSON-lines predictions after a header line.
    Detect {
        /// JSON-lines pairs {g1_id, g2_id[, label]}; defaults to every
        /// cross-language pair of --split.
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Ranks the other-language candidates of one graph.
    Retrieve {
        #[arg(long)]
        query: String,
    },
    /// Clone metrics or retrieval metrics on one split.
    Eval {
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Writes standalone graph embeddings as an index or as TSV files.
    ExportEmbeddings {
        #[arg(long, value_enum, default_value_t = Format::Bin)]
        format: Format,
    },
    /// Audits a split manifest for task, snippet and pair leakage.
    CheckSplits {
        /// Directory with train.jsonl, valid.jsonl and test.jsonl pair
        /// files; defaults to the positive pairs of --graphs.
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Bin,
    Tsv,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Split => "split",
            Command::Unify { .. } => "unify",
            Command::Enhance => "enhance",
            Command::Train { .. } => "train",
            Command::Detect { .. } => "detect",
            Command::Retrieve { .. } => "retrieve",
            Command::Eval { .. } => "eval",
            Command::ExportEmbeddings { .. } => "export-embeddings",
            Command::CheckSplits { .. } => "check-splits",
        }
    }
}

#[derive(Debug)]
pub enum Failure {
    /// Missing or malformed arguments: exit 2 with the command's usage.
    Usage(String),
    /// Invalid input data or a failed operation: exit 1.
    Invalid(String),
    /// The audit found leakage; the report is already written: exit 1.
    Audit,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp_millis().init();
    let name = cli.command.name();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n");
            let mut cmd = Cli::command();
            let sub = cmd.find_subcommand_mut(name).expect("subcommand exists");
            eprintln!("{}", sub.render_long_help());
            ExitCode::from(2)
        }
        Err(Failure::Invalid(msg)) => {
            log::error!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Audit) => ExitCode::from(1),
    }
}
