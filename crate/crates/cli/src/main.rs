//! `kale`: build graphs, train, caption, evaluate and inspect.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CliError;

#[derive(Parser)]
#[command(name = "kale", version, about = "Knowledge-augmented artwork captioning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a corpus and write its heterogeneous graph.
    BuildGraph {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// TOML run configuration; defaults apply when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the captioning model on a corpus and its graph.
    Train {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// TOML run configuration. Optional when resuming.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for checkpoints, config and loss history.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Held-out splits whose captions are removed from training.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this epoch; the schedule still spans the configured run.
        #[arg(long)]
        stop_after: Option<u64>,
        /// Also keep `epoch-NNNN.ckpt` every this many epochs (0 keeps only `last.ckpt`).
        #[arg(long, default_value_t = 0)]
        keep_every: u64,
    },
    /// Caption one image with metadata, or every record of a corpus.
    Caption {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, required_unless_present = "corpus")]
        image: Option<PathBuf>,
        /// Inline JSON object or a path to one (author, title, technique, type, school, timeframe).
        #[arg(long)]
        metadata: Option<String>,
        /// Caption every record of this corpus instead of a single image.
        #[arg(long, conflicts_with_all = ["image", "metadata"])]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        beam: usize,
        #[arg(long, default_value_t = 24)]
        max_len: usize,
        #[arg(long, default_value_t = 0.7)]
        length_penalty: f64,
        /// Hypotheses written per record.
        #[arg(long, default_value_t = 1)]
        top: usize,
        /// JSONL output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predictions against references.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        refs: PathBuf,
        #[arg(long, default_value = "bleu,rouge,cider")]
        metrics: String,
        /// JSON report file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print graph statistics or meta-path neighbours of a node.
    Inspect {
        #[arg(long)]
        graph: PathBuf,
        /// Meta-path such as Artwork-Author-Artwork.
        #[arg(long, requires = "node")]
        metapath: Option<String>,
        /// `Type:label` or an artwork id.
        #[arg(long)]
        node: Option<String>,
    },
    /// Finite-difference check of the full training loss on a miniature run.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Synthetic records in the check.
        #[arg(long, default_value_t = 2)]
        records: usize,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KALE_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BuildGraph { corpus, out, config, seed } => commands::build_graph(&corpus, &out, config.as_deref(), seed),
        Command::Train {
            graph,
            corpus,
            config,
            out,
            seed,
            val,
            test,
            resume,
            stop_after,
            keep_every,
        } => commands::train(commands::TrainArgs {
            graph,
            corpus,
            config,
            out,
            seed,
            val,
            test,
            resume,
            stop_after,
            keep_every,
        }),
        Command::Caption {
            checkpoint,
            image,
            metadata,
            corpus,
            beam,
            max_len,
            length_penalty,
            top,
            out,
        } => commands::caption(commands::CaptionArgs {
            checkpoint,
            image,
            metadata,
            corpus,
            beam,
            max_len,
            length_penalty,
            top,
            out,
        }),
        Command::Eval { pred, refs, metrics, out } => commands::eval(&pred, &refs, &metrics, out.as_deref()),
        Command::Inspect { graph, metapath, node } => commands::inspect(&graph, metapath.as_deref(), node.as_deref()),
        Command::Gradcheck { config, records, eps } => commands::gradcheck(config.as_deref(), records, eps),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Input(_) => ExitCode::from(2),
                CliError::Internal(_) => ExitCode::from(1),
            }
        }
    }
}
