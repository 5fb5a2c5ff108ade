//! `refinekit` command-line pipeline.
//!
//! Every subcommand reads the run configuration, validates it before touching
//! the network, writes its artifacts under the output directory and records a
//! manifest in `manifests/<command>.json`.

pub mod artifacts;
mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::config::{Overrides, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "refinekit",
    version,
    about = "Document-level translation refinement pipeline"
)]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(short, long, global = true, default_value = "refinekit.toml")]
    pub config: PathBuf,
    /// Overrides `output_dir` from the configuration.
    #[arg(short, long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Floor applied to quality-aware sentence weights.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub min_weight: Option<f64>,
    /// Score differences up to this value count as ties.
    #[arg(long, global = true)]
    pub tie_eps: Option<f64>,
    /// Sample intermediate translations (temperature 0.3, top_p 0.7).
    #[arg(long, global = true)]
    pub diverse: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TranslateMode {
    Sent2sent,
    Doc2doc,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Da,
    Qe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Stage1,
    Stage2,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RefineArg {
    None,
    Sent,
    Doc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TokenizeArg {
    #[value(name = "13a")]
    Thirteen,
    Intl,
    None,
}

#[derive(Debug, Clone, Args)]
pub struct ScorerFlags {
    /// Use the in-process deterministic scorer instead of the service.
    #[arg(long)]
    pub mock: bool,
    /// Scores arrive on 0-100 and are divided by 100.
    #[arg(long = "scale-100")]
    pub scale_100: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load the corpus and split documents into chunks.
    Prepare,
    /// Produce Sent2Sent and/or Doc2Doc intermediate translations.
    Translate {
        #[arg(long, value_enum, default_value = "both")]
        mode: TranslateMode,
    },
    /// Score system outputs sentence by sentence.
    Score {
        #[arg(long, value_enum, default_value = "da")]
        metric: MetricArg,
        /// Systems to score.
        #[arg(long = "system", default_values = ["sent2sent", "doc2doc"])]
        systems: Vec<String>,
        #[command(flatten)]
        scorer: ScorerFlags,
    },
    /// Export fine-tuning records for one or both stages.
    BuildDataset {
        #[arg(long, value_enum, default_value = "both")]
        stage: StageArg,
    },
    /// Refine one or two candidate translations of every chunk.
    Refine {
        /// First candidate: a system name or a JSONL file of documents.
        #[arg(long)]
        h1: String,
        /// Second candidate; defaults to the first.
        #[arg(long)]
        h2: Option<String>,
        /// Name of the refined system.
        #[arg(long, default_value = "refined")]
        name: String,
    },
    /// Compute document-level metrics for systems.
    Evaluate {
        #[arg(long = "system", required = true)]
        systems: Vec<String>,
        #[arg(long, value_enum, default_value = "13a")]
        tokenize: TokenizeArg,
        /// Adjacent-sentence embedding coherence via the scorer.
        #[arg(long)]
        coherence: bool,
        /// Sentence- and document-level scores and perplexity via the scorer.
        #[arg(long)]
        scorer_metrics: bool,
        #[command(flatten)]
        scorer: ScorerFlags,
    },
    /// Pick the better candidate per sentence by reference-free score.
    Rerank {
        #[arg(long, default_value = "sent2sent")]
        y: String,
        #[arg(long, default_value = "doc2doc")]
        z: String,
        /// Refine the reranked document afterwards.
        #[arg(long, value_enum, default_value = "none")]
        refine: RefineArg,
        #[arg(long)]
        name: Option<String>,
    },
    /// Ask the annotator for error types per sentence.
    Annotate {
        #[arg(long)]
        system: String,
    },
    /// Sentence-level win/tie/loss of system A against system B.
    Compare {
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        #[arg(long, value_enum, default_value = "da")]
        metric: MetricArg,
    },
    /// Histogram of sentence scores, or of score differences with --minus.
    Stats {
        #[arg(long)]
        system: String,
        #[arg(long)]
        minus: Option<String>,
        #[arg(long, value_enum, default_value = "da")]
        metric: MetricArg,
        #[arg(long, default_value_t = 0.05)]
        bin_width: f64,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Prepare => "prepare",
            Command::Translate { .. } => "translate",
            Command::Score { .. } => "score",
            Command::BuildDataset { .. } => "build-dataset",
            Command::Refine { .. } => "refine",
            Command::Evaluate { .. } => "evaluate",
            Command::Rerank { .. } => "rerank",
            Command::Annotate { .. } => "annotate",
            Command::Compare { .. } => "compare",
            Command::Stats { .. } => "stats",
        }
    }

    fn scorer_flags(&self) -> Option<&ScorerFlags> {
        match self {
            Command::Score { scorer, .. } | Command::Evaluate { scorer, .. } => Some(scorer),
            _ => None,
        }
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 1 on usage or validation errors, 2 on
/// runtime failures.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(&cli.config)?;
    let flags = cli.command.scorer_flags();
    cfg.apply(&Overrides {
        output_dir: cli.output_dir.clone(),
        min_weight: cli.min_weight,
        tie_eps: cli.tie_eps,
        diverse: cli.diverse,
        mock_scorer: flags.is_some_and(|f| f.mock),
        hundred_scale: flags.is_some_and(|f| f.scale_100),
    });
    cfg.validate()?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(e.into()))?;
    rt.block_on(commands::dispatch(&cfg, cli.command))
}
