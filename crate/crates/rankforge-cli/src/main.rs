//! Command-line interface for training, evaluating, and probing ranking
//! models on candidate lists.
//!
//! Every subcommand that produces artifacts takes `--out` and writes only
//! inside that directory. Flags can also be supplied through `--config`, a
//! flat JSON object keyed by flag name (command line wins); `train --seed`
//! must always be given explicitly.

mod commands;
mod overlay;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "rankforge",
    version,
    about = "Sequence-model reranking: synthetic corpora, ranking losses, IR metrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic candidate corpus (train/dev JSONL).
    Synth(SynthArgs),
    /// Train a ranker on a candidate JSONL file.
    Train(TrainArgs),
    /// Score candidates with a checkpoint and write a TREC run.
    Rerank(RerankArgs),
    /// Evaluate a TREC run against qrels, optionally versus a baseline run.
    Eval(EvalArgs),
    /// Run a loss / list-size / model-size sweep on the synthetic benchmark.
    Sweep(SweepArgs),
    /// Evaluate a trained checkpoint on held-out datasets without training.
    Zeroshot(ZeroshotArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

/// Flags shared by every subcommand.
#[derive(Args)]
struct Common {
    /// Flat JSON config file; keys are flag names, command line overrides.
    #[arg(long, global = true)]
    config: Option<std::path::PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<std::path::PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_queries: Option<usize>,
    #[arg(long)]
    dev_queries: Option<usize>,
    /// Candidates per query.
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    key_vocab: Option<usize>,
    #[arg(long)]
    common_vocab: Option<usize>,
    #[arg(long)]
    phrase_len: Option<usize>,
    /// Probability a negative contains one of the query's key tokens.
    #[arg(long)]
    neg_key_overlap: Option<f64>,
    /// Probability a document filler copies the query's filler token.
    #[arg(long)]
    common_overlap: Option<f64>,
    /// Key-token index offset; distinct offsets give disjoint domains.
    #[arg(long)]
    key_offset: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory for checkpoint, vocab, and loss curve.
    #[arg(long)]
    out: Option<std::path::PathBuf>,
    /// Training candidates (JSONL).
    #[arg(long)]
    data: Option<std::path::PathBuf>,
    /// Optional dev candidates; evaluated (MRR@10) at every checkpoint.
    #[arg(long)]
    dev: Option<std::path::PathBuf>,
    /// RNG seed for init and sampling. Must be given on the command line.
    #[arg(long, required = true)]
    seed: u64,
    /// Load this vocabulary instead of building one from the data.
    #[arg(long)]
    vocab: Option<std::path::PathBuf>,
    /// Extra JSONL files whose texts join the built vocabulary (e.g. a
    /// zero-shot domain so its tokens are in-vocab though untrained).
    #[arg(long)]
    vocab_extra: Vec<std::path::PathBuf>,
    /// Model preset: tiny, small, or base-toy.
    #[arg(long)]
    preset: Option<String>,
    /// Scoring head: encdec, enc, or generation.
    #[arg(long)]
    head: Option<String>,
    /// Pooling for the enc head: first or mean.
    #[arg(long)]
    pooling: Option<String>,
    /// Training loss: pointce, pair, softmax, poly1, or generation.
    #[arg(long)]
    loss: Option<String>,
    /// Poly1 epsilon.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    list_size: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Checkpoint (and dev-eval) every N steps; 0 = final step only.
    #[arg(long)]
    eval_every: Option<usize>,
    /// Optimizer: adam or sgd.
    #[arg(long)]
    optimizer: Option<String>,
    /// Positive selection when a query has several: sample or first.
    #[arg(long)]
    positive_selection: Option<String>,
    /// Append the relevance postfix to every input sequence.
    #[arg(long)]
    with_postfix: bool,
    /// Accept graded (non-binary) labels in the training data.
    #[arg(long)]
    graded_labels: bool,
}

#[derive(Args)]
struct RerankArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: Option<std::path::PathBuf>,
    #[arg(long)]
    checkpoint: Option<std::path::PathBuf>,
    #[arg(long)]
    vocab: Option<std::path::PathBuf>,
    /// Candidates to rescore (JSONL).
    #[arg(long)]
    data: Option<std::path::PathBuf>,
    /// Keep at most this many documents per query.
    #[arg(long)]
    top_k: Option<usize>,
    /// Tag for the run file's last column.
    #[arg(long)]
    tag: Option<String>,
    #[arg(long)]
    with_postfix: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: Option<std::path::PathBuf>,
    /// TREC run file to score.
    #[arg(long)]
    run: Option<std::path::PathBuf>,
    /// TREC qrels file.
    #[arg(long)]
    qrels: Option<std::path::PathBuf>,
    /// Comma-separated metrics, e.g. mrr@10,ndcg@10,map,recall@5.
    #[arg(long)]
    metrics: Option<String>,
    /// Baseline run for the paired significance test.
    #[arg(long)]
    baseline: Option<std::path::PathBuf>,
    /// Queries without judgments: zero or drop.
    #[arg(long)]
    missing: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: Option<std::path::PathBuf>,
    /// What to vary: loss, list_size, or model_size.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Default list size for cells that do not sweep it.
    #[arg(long)]
    list_size: Option<usize>,
    /// Comma-separated seeds, e.g. 1,2,3.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    train_queries: Option<usize>,
    #[arg(long)]
    dev_queries: Option<usize>,
    #[arg(long)]
    candidates: Option<usize>,
}

#[derive(Args)]
struct ZeroshotArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: Option<std::path::PathBuf>,
    #[arg(long)]
    checkpoint: Option<std::path::PathBuf>,
    #[arg(long)]
    vocab: Option<std::path::PathBuf>,
    /// Candidate JSONL files, one per dataset (named by file stem).
    #[arg(long)]
    data: Vec<std::path::PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    common: Common,
    /// Optional directory for the JSON report.
    #[arg(long)]
    out: Option<std::path::PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Random lists per loss for the loss-level check.
    #[arg(long)]
    lists: Option<usize>,
    /// Model instances per (head, loss) cell for the end-to-end check.
    #[arg(long)]
    instances: Option<usize>,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Synth(args) => commands::synth(args),
        Command::Train(args) => commands::train(args),
        Command::Rerank(args) => commands::rerank(args),
        Command::Eval(args) => commands::eval(args),
        Command::Sweep(args) => commands::sweep(args),
        Command::Zeroshot(args) => commands::zeroshot(args),
        Command::Gradcheck(args) => commands::gradcheck(args),
    }
}
