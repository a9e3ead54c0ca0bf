//! `vld`: synthetic vision-language distillation pipeline. Generates
//! teacher worlds, selects grounded text corpora, trains students
//! against frozen teacher embeddings, and scores the result.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};

mod commands;
mod config;

#[derive(Parser)]
#[command(
    name = "vld",
    version,
    about = "Vision-language distillation over frozen teacher embeddings"
)]
struct Cli {
    /// Cap internal parallelism at N worker threads.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world and sample its corpora.
    GenWorld(GenWorldArgs),
    /// Run the frozen teacher over a raw embedding store.
    Embed(EmbedArgs),
    /// Select a visually grounded text corpus from an unpaired pool.
    BuildCorpus(BuildCorpusArgs),
    /// Train a student against frozen teacher embeddings.
    Distill(DistillArgs),
    /// Score an embedding path on the world's downstream task.
    Eval(EvalArgs),
    /// Corpus diagnostics: distribution discrepancy and score histograms.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
pub struct GenWorldArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for stores, manifests, and world.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct EmbedArgs {
    /// world.json file or the directory holding it.
    #[arg(long)]
    world: PathBuf,
    /// Raw embedding store to run through the teacher.
    #[arg(long)]
    input: PathBuf,
    /// Output store path.
    #[arg(long)]
    out: PathBuf,
    /// Use the teacher's text path instead of the image path.
    #[arg(long)]
    texts: bool,
}

#[derive(Args)]
pub struct BuildCorpusArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Directory produced by gen-world.
    #[arg(long)]
    world_dir: PathBuf,
    /// Output directory for selected.dfem and selected.json.
    #[arg(long)]
    out: PathBuf,
    /// Reduce the selection to k texts by k-means medoids.
    #[arg(long, value_name = "K")]
    reduce_k: Option<usize>,
    /// Append the downstream task's prompt embeddings.
    #[arg(long)]
    task_aware: bool,
}

#[derive(Args)]
pub struct DistillArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Directory produced by gen-world.
    #[arg(long)]
    world_dir: PathBuf,
    /// Text corpus manifest; defaults to the world's captions.
    #[arg(long)]
    text_corpus: Option<PathBuf>,
    /// Raw store backing the text corpus ids. Defaults to the manifest's
    /// sibling, e.g. selected_raw.dfem next to selected.json.
    #[arg(long)]
    texts_raw: Option<PathBuf>,
    /// Output directory for checkpoints and the loss log.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[command(group(
    ArgGroup::new("mode")
        .required(true)
        .args(["zero_shot", "linear_probe", "robustness"])
))]
pub struct EvalArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Directory produced by gen-world.
    #[arg(long)]
    world_dir: PathBuf,
    /// Student checkpoint; scores the frozen teacher when absent.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Prompt-head zero-shot accuracy on the task's test set.
    #[arg(long)]
    zero_shot: bool,
    /// Closed-form ridge probe over embedded features.
    #[arg(long)]
    linear_probe: bool,
    /// Mean zero-shot accuracy over shifted test variants.
    #[arg(long)]
    robustness: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[command(group(
    ArgGroup::new("diag")
        .required(true)
        .multiple(true)
        .args(["mmd", "histogram"])
))]
pub struct DiagnoseArgs {
    /// First embedding source: corpus manifest (.json) or raw store (.dfem).
    #[arg(long)]
    a: PathBuf,
    /// Second embedding source: corpus manifest (.json) or raw store (.dfem).
    #[arg(long)]
    b: PathBuf,
    /// Report distribution discrepancy under all three kernels.
    #[arg(long)]
    mmd: bool,
    /// Report the aligned-pair cosine score histogram.
    #[arg(long)]
    histogram: bool,
    /// Histogram bin count over [-1, 1].
    #[arg(long, default_value_t = 20)]
    bins: usize,
    /// Bandwidth for the rbf kernel.
    #[arg(long, default_value_t = 1.0)]
    rbf_gamma: f64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: configuring {n} threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match &cli.command {
        Command::GenWorld(args) => commands::gen_world(args),
        Command::Embed(args) => commands::embed(args),
        Command::BuildCorpus(args) => commands::build_corpus(args),
        Command::Distill(args) => commands::distill(args),
        Command::Eval(args) => commands::eval(args),
        Command::Diagnose(args) => commands::diagnose(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
