//! Pipeline command line: corpus generation, graph construction, training,
//! prediction, evaluation, and gradient checking.
//!
//! Exit codes: 0 ok, 1 I/O, 2 usage or config, 3 data incoherence,
//! 4 numeric failure.

mod commands;
mod errors;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use errors::CliError;

#[derive(Parser)]
#[command(
    name = "topicpath",
    version,
    about = "Hierarchical research-proposal classification over a discipline taxonomy"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic proposal corpus with planted vocabularies.
    GenCorpus {
        /// Taxonomy JSON document.
        #[arg(long)]
        taxonomy: PathBuf,
        /// Output corpus JSONL path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        size: usize,
        /// Fraction of proposals labeled under two level-1 letters.
        #[arg(long, default_value_t = 0.3)]
        interdisciplinary_rate: f64,
        #[arg(long, default_value_t = 12)]
        vocab_per_discipline: usize,
        #[arg(long, default_value_t = 0.15)]
        shared_topic_rate: f64,
        #[arg(long, default_value_t = 32)]
        doc_len: usize,
    },
    /// Build the interdisciplinary graph from topic co-occurrence.
    BuildGraph {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        taxonomy: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 0.1)]
        beta: f64,
        /// Output graph JSON path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the classifier and write a run directory.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        taxonomy: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// Model config JSON (missing fields take desk-scale defaults).
        #[arg(long)]
        model_config: Option<PathBuf>,
        /// Train config JSON (missing fields take defaults).
        #[arg(long)]
        train_config: Option<PathBuf>,
        /// Run directory for checkpoint, log, and configs.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Predict topic paths for proposals.
    Predict {
        /// Run directory from `train`, or a checkpoint file with siblings.
        #[arg(long)]
        ckpt: PathBuf,
        /// Input proposals JSONL.
        #[arg(long)]
        input: PathBuf,
        /// Taxonomy JSON; defaults to the copy in the run directory.
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        /// Graph JSON; defaults to the copy in the run directory.
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Comma-separated codes forming a given partial prefix.
        #[arg(long)]
        given: Option<String>,
        /// Selection threshold override.
        #[arg(long)]
        threshold: Option<f64>,
        /// Keep threshold-passing labels even when their parent was not
        /// predicted at the previous level.
        #[arg(long)]
        no_coherence_filter: bool,
        /// Include fusion attention traces in the output lines.
        #[arg(long)]
        dump_attention: bool,
        /// Output predictions JSONL.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against truth labels.
    Evaluate {
        /// Predictions JSONL from `predict`.
        #[arg(long)]
        preds: PathBuf,
        /// Truth corpus JSONL.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        taxonomy: PathBuf,
        /// Output report JSON; a per-sample CSV lands next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify model gradients against central finite differences.
    GradCheck {
        /// Model config JSON (defaults to the desk-scale profile).
        #[arg(long)]
        model_config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Minimum number of parameter coordinates to check.
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenCorpus {
            taxonomy,
            out,
            seed,
            size,
            interdisciplinary_rate,
            vocab_per_discipline,
            shared_topic_rate,
            doc_len,
        } => commands::gen_corpus(
            &taxonomy,
            &out,
            topicpath_core::corpus::CorpusConfig {
                seed,
                size,
                vocab_per_discipline,
                shared_topic_rate,
                interdisciplinary_rate,
                doc_len,
            },
        ),
        Command::BuildGraph {
            corpus,
            taxonomy,
            alpha,
            beta,
            out,
        } => commands::build_graph(&corpus, &taxonomy, alpha, beta, &out),
        Command::Train {
            corpus,
            taxonomy,
            graph,
            model_config,
            train_config,
            out_dir,
        } => commands::train(
            &corpus,
            &taxonomy,
            &graph,
            model_config.as_deref(),
            train_config.as_deref(),
            &out_dir,
        ),
        Command::Predict {
            ckpt,
            input,
            taxonomy,
            graph,
            given,
            threshold,
            no_coherence_filter,
            dump_attention,
            out,
        } => commands::predict(commands::PredictArgs {
            ckpt,
            input,
            taxonomy,
            graph,
            given,
            threshold,
            coherence_filter: !no_coherence_filter,
            dump_attention,
            out,
        }),
        Command::Evaluate {
            preds,
            truth,
            taxonomy,
            out,
        } => commands::evaluate(&preds, &truth, &taxonomy, &out),
        Command::GradCheck {
            model_config,
            seed,
            samples,
            tolerance,
        } => commands::grad_check(model_config.as_deref(), seed, samples, tolerance),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
