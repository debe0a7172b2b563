//! Command-line surface of the `topsum` binary.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "topsum",
    version,
    about = "Topic-aware convolutional summarization pipeline"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Fit the topic model and emit the topic vocabulary and model files
    LdaTrain(LdaTrainArgs),
    /// Maximum-likelihood training from scratch
    Train(TrainArgs),
    /// Self-critical fine-tuning of an existing checkpoint
    RlFinetune(RlFinetuneArgs),
    /// Decode summaries for a file of documents
    Summarize(SummarizeArgs),
    /// Score a hypothesis file against reference files
    Evaluate(EvaluateArgs),
}

/// Knobs every command shares. Values resolve as flag, then config file,
/// then default.
#[derive(Args)]
pub struct Common {
    /// Optional key=value hyperparameter file; flags override it
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Master random seed
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct LdaTrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// TAB-separated source/summary pairs, one per line
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,
    /// Where to write the fitted topic model
    #[arg(long, value_name = "FILE")]
    pub topic_model: PathBuf,
    /// Where to write the topic vocabulary
    #[arg(long, value_name = "FILE")]
    pub topic_vocab: PathBuf,
    #[arg(long)]
    pub num_topics: Option<usize>,
    /// Dirichlet document-topic prior
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Dirichlet topic-word prior
    #[arg(long)]
    pub beta: Option<f64>,
    /// Gibbs sweeps over the corpus
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Top words kept per topic
    #[arg(long)]
    pub top_n: Option<usize>,
    /// Document-frequency fraction above which a word is universal
    #[arg(long)]
    pub universal_threshold: Option<f64>,
}

#[derive(Args)]
pub struct ModelFlags {
    /// Embedding and hidden width
    #[arg(long)]
    pub dim: Option<usize>,
    /// Convolution kernel width (odd)
    #[arg(long)]
    pub kernel: Option<usize>,
    #[arg(long)]
    pub word_layers: Option<usize>,
    #[arg(long)]
    pub topic_layers: Option<usize>,
    /// Source truncation length
    #[arg(long)]
    pub max_source_len: Option<usize>,
    /// Summary truncation length
    #[arg(long)]
    pub max_target_len: Option<usize>,
}

#[derive(Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub lr_ml: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub lr_floor: Option<f64>,
    #[arg(long)]
    pub lr_rl: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Weight of the reinforcement term in the mixed objective
    #[arg(long)]
    pub lambda_mixed: Option<f64>,
    /// Global gradient-norm clip; 0 disables
    #[arg(long)]
    pub grad_clip_norm: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Reward metric for fine-tuning: rouge-1, rouge-2, or rouge-l
    #[arg(long)]
    pub reward: Option<String>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,
    /// Optional held-out pairs driving the learning-rate schedule
    #[arg(long, value_name = "FILE")]
    pub val_corpus: Option<PathBuf>,
    /// Topic model written by lda-train
    #[arg(long, value_name = "FILE")]
    pub topic_model: PathBuf,
    /// Topic vocabulary written by lda-train
    #[arg(long, value_name = "FILE")]
    pub topic_vocab: PathBuf,
    /// Where to write the token vocabulary built from the corpus
    #[arg(long, value_name = "FILE")]
    pub vocab: PathBuf,
    /// Checkpoint path, rewritten after every epoch
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Vocabulary size cap including reserved tokens
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Minimum corpus count for a vocabulary token
    #[arg(long)]
    pub min_count: Option<u64>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Args)]
pub struct RlFinetuneArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,
    /// Optional held-out pairs reported per epoch
    #[arg(long, value_name = "FILE")]
    pub val_corpus: Option<PathBuf>,
    /// ML checkpoint to start from
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Where to write the fine-tuned checkpoint, rewritten every epoch
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Vocabulary the checkpoint was trained with
    #[arg(long, value_name = "FILE")]
    pub vocab: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub topic_vocab: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum DecoderKind {
    Greedy,
    Beam,
    Sample,
}

#[derive(Args)]
pub struct SummarizeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub vocab: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub topic_vocab: PathBuf,
    /// Documents to summarize, one per line
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = DecoderKind::Beam)]
    pub decoder: DecoderKind,
    #[arg(long)]
    pub beam_size: Option<usize>,
    /// Generation budget; defaults to a per-document length heuristic
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    F1,
    Recall,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalLevel {
    Word,
    CharId,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Hypothesis summaries, one per line
    #[arg(long, value_name = "FILE")]
    pub hyp: PathBuf,
    /// Reference file; repeat for multiple references
    #[arg(long = "ref", value_name = "FILE", required = true)]
    pub refs: Vec<PathBuf>,
    /// Which measure selects among multiple references
    #[arg(long, value_enum, default_value_t = EvalMode::F1)]
    pub mode: EvalMode,
    /// Token granularity: whitespace words or unicode characters
    #[arg(long, value_enum, default_value_t = EvalLevel::Word)]
    pub level: EvalLevel,
}
