mod commands;
mod config;
mod data;
mod respond;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{DecodeKind, ExperimentConfig, Prior};

/// Attention-with-intention conversation model: data preparation, training,
/// generation, interactive chat and evaluation.
#[derive(Parser, Debug)]
#[command(name = "awi", version)]
struct Cli {
    /// TOML experiment config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic helpdesk corpus.
    SynthCorpus(SynthArgs),
    /// Build the vocabulary from the training split.
    BuildVocab(VocabArgs),
    /// Build the IDF table from the training split.
    BuildIdf(IdfArgs),
    /// Train or fine-tune a model.
    Train(TrainArgs),
    /// Decode responses for every turn of a dialogues file.
    Generate(GenerateArgs),
    /// Interactive session on stdin; `/reset` clears state, `/quit` exits.
    Chat(ChatArgs),
    /// Rank candidate responses for retrieval instances.
    Retrieve(RetrieveArgs),
    /// BLEU-4, corpus IDF and perplexity of generated responses.
    EvalGen(EvalGenArgs),
    /// Recall@k of every retrieval scorer.
    EvalRet(EvalRetArgs),
    /// Tune an interpolation weight on held-out data.
    TuneWeight(TuneArgs),
    /// Write the intention vector after every turn.
    DumpIntention(DumpArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Number of dialogues.
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    min_turns: usize,
    #[arg(long, default_value_t = 8)]
    max_turns: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VocabArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    min_count: Option<u64>,
    #[arg(long)]
    max_vocab: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum IdfSource {
    Responses,
    Both,
}

#[derive(Args, Debug)]
struct IdfArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Which turn sides count as documents.
    #[arg(long, value_enum)]
    source: Option<IdfSource>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ObjectiveArg {
    Xent,
    IdfReinforce,
    Rank,
}

/// Paths shared by every command that reads a trained model.
#[derive(Args, Debug)]
struct ModelPaths {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    idf: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    paths: ModelPaths,
    #[arg(long, value_enum)]
    objective: Option<ObjectiveArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// REINFORCE baseline: a number or `mean-train-idf`.
    #[arg(long)]
    baseline: Option<String>,
    /// Scale the sampled response's gradient instead of the reference's.
    #[arg(long)]
    canonical_reinforce: bool,
    /// Ranking negatives per positive.
    #[arg(long)]
    negatives: Option<usize>,
    /// Start from this checkpoint instead of a fresh model.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Train the backward model: agent responses become inputs.
    #[arg(long)]
    swap: bool,
    /// Per-epoch JSONL report.
    #[arg(long)]
    report: Option<PathBuf>,
}

/// Decoding flags shared by `generate` and `chat`.
#[derive(Args, Debug)]
struct DecodeArgs {
    #[arg(long, value_enum)]
    mode: Option<DecodeKind>,
    #[arg(long)]
    beam_width: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Rerank a beam by normalized log-likelihood plus this weight times sentence IDF.
    #[arg(long)]
    rerank_idf: Option<f64>,
    /// Backward model checkpoint for likelihood reranking.
    #[arg(long)]
    backward: Option<PathBuf>,
    #[arg(long, requires = "backward")]
    backward_weight: Option<f64>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    paths: ModelPaths,
    #[command(flatten)]
    decode: DecodeArgs,
    /// Dialogues to respond to; defaults to the test split.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_enum)]
    prior: Option<Prior>,
    /// Write every hypothesis of every turn in n-best format.
    #[arg(long)]
    nbest: Option<PathBuf>,
    /// Responses in dialogues format; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ChatArgs {
    #[command(flatten)]
    paths: ModelPaths,
    #[command(flatten)]
    decode: DecodeArgs,
    /// Session transcript in dialogues format.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
}

#[derive(Args, Debug)]
struct InstanceArgs {
    /// Instances file; built from `--split` when absent.
    #[arg(long)]
    instances: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long)]
    negatives: Option<usize>,
    /// Keep at most this many instances.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RetrieveMode {
    Tfidf,
    Awi,
    Interpolated,
    Random,
}

#[derive(Args, Debug)]
struct RetrieveArgs {
    #[command(flatten)]
    paths: ModelPaths,
    #[command(flatten)]
    instances: InstanceArgs,
    #[arg(long, value_enum, default_value = "tfidf")]
    mode: RetrieveMode,
    /// Interpolation weight on the TF-IDF cosine.
    #[arg(long)]
    weight: Option<f64>,
    /// Write the instances used.
    #[arg(long)]
    save_instances: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalGenArgs {
    #[command(flatten)]
    paths: ModelPaths,
    /// Generated responses in dialogues format.
    #[arg(long)]
    hyps: PathBuf,
    /// Reference dialogues; defaults to the test split.
    #[arg(long)]
    refs: Option<PathBuf>,
    /// Also report model perplexity on the references.
    #[arg(long)]
    perplexity: bool,
    /// JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalRetArgs {
    #[command(flatten)]
    paths: ModelPaths,
    #[command(flatten)]
    instances: InstanceArgs,
    /// Interpolation weight; tuned on dev instances when absent.
    #[arg(long)]
    weight: Option<f64>,
    /// Skip the model and report only TF-IDF and random.
    #[arg(long)]
    no_model: bool,
    /// JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TuneTask {
    Retrieval,
    Mert,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AuxArg {
    Idf,
    BackwardLlk,
}

#[derive(Args, Debug)]
struct TuneArgs {
    #[command(flatten)]
    paths: ModelPaths,
    #[arg(long, value_enum)]
    task: TuneTask,
    /// N-best file from `generate --nbest` (mert).
    #[arg(long)]
    nbest: Option<PathBuf>,
    /// Reference dialogues for the n-best turns (mert); defaults to the dev split.
    #[arg(long)]
    refs: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "idf")]
    kind: AuxArg,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args, Debug)]
struct DumpArgs {
    #[command(flatten)]
    paths: ModelPaths,
    /// Dialogues to run; defaults to the test split.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    match cli.command {
        Command::SynthCorpus(a) => commands::synth_corpus(&cfg, a),
        Command::BuildVocab(a) => commands::build_vocab(cfg, a),
        Command::BuildIdf(a) => commands::build_idf(cfg, a),
        Command::Train(a) => commands::train(cfg, a),
        Command::Generate(a) => commands::generate(cfg, a),
        Command::Chat(a) => commands::chat(cfg, a),
        Command::Retrieve(a) => commands::retrieve(cfg, a),
        Command::EvalGen(a) => commands::eval_gen(cfg, a),
        Command::EvalRet(a) => commands::eval_ret(cfg, a),
        Command::TuneWeight(a) => commands::tune_weight(cfg, a),
        Command::DumpIntention(a) => commands::dump_intention(cfg, a),
    }
}
