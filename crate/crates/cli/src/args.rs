use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "sema", version, about = "Paraphrase generation with token, frame and role channels")]
pub struct Cli {
    /// Seed for initialization, shuffling, sampling and decoding.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint directory.
    Train(TrainArgs),
    /// Greedy-decode sentences with a trained model.
    Generate(GenerateArgs),
    /// Score hypothesis files, or a model on a test set.
    Evaluate(EvaluateArgs),
    /// Train one configuration per channel mask and compare them.
    Ablate(AblateArgs),
    /// Measure greedy-decode throughput.
    Bench(BenchArgs),
    /// Write a synthetic role-swap corpus.
    Synth(SynthArgs),
    /// Export a blinded rating sheet and its answer key.
    EvalPack(EvalPackArgs),
    /// Write the attention of one decoded sentence.
    DumpAttention(DumpArgs),
    /// Convert between two-column TSV and JSON-lines pairs.
    Convert(ConvertArgs),
}

/// Model configuration. Precedence: family defaults, then `--config`, then
/// `--set`, then the dedicated flags.
#[derive(Debug, Args, Clone, Default)]
pub struct ModelArgs {
    /// File of `key = value` lines naming model config fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config field, e.g. `--set warmup_steps=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub model_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Channel mask: none, frame_only, role_only or both.
    #[arg(long)]
    pub mask: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Debug, Args, Clone)]
pub struct TrainOpts {
    /// Optimizer steps.
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long)]
    pub lowercase: bool,
    /// Tokens seen fewer times map to `<unk>`.
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,
    /// Train on a random subset of this many pairs.
    #[arg(long)]
    pub subsample: Option<usize>,
    /// Keep training pairs whole instead of truncating them to `max_len`.
    #[arg(long)]
    pub no_truncate: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainOpts,
    /// Training pairs (JSON lines).
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
    /// GloVe-format text vectors for the token embedding table.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Checkpoint directory.
    #[arg(long)]
    pub model: PathBuf,
    /// JSON lines of pairs or annotated sentences, or plain text with `--text`.
    #[arg(long)]
    pub input: PathBuf,
    /// Treat the input as one whitespace-tokenized sentence per line.
    #[arg(long)]
    pub text: bool,
    /// Predictions file (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
    /// Longest output; defaults to the model's `max_len + 1`.
    #[arg(long)]
    pub max_out: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Hypotheses, one sentence per line.
    #[arg(long, requires = "refs", conflicts_with = "model")]
    pub hyp: Option<PathBuf>,
    /// References aligned with `--hyp`; repeat for multiple references.
    #[arg(long = "ref")]
    pub refs: Vec<PathBuf>,
    /// Checkpoint directory to decode and score.
    #[arg(long, requires = "data")]
    pub model: Option<PathBuf>,
    /// Test pairs for `--model`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory; metrics are printed to stdout either way.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write per-sentence scores (hypothesis-file mode).
    #[arg(long)]
    pub per_sentence: bool,
    /// Score only sources with at least this many tokens.
    #[arg(long)]
    pub min_eval_len: Option<usize>,
    /// Decode-time input cap, overriding the model's `max_len`.
    #[arg(long)]
    pub eval_max_len: Option<usize>,
    #[arg(long)]
    pub lowercase: bool,
    /// Sentences whose attention is dumped under `attention/`.
    #[arg(long, default_value_t = 5)]
    pub attention_samples: usize,
    /// Synonym groups for METEOR, one whitespace-separated group per line.
    #[arg(long)]
    pub synonyms: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainOpts,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated masks.
    #[arg(long, default_value = "none,frame_only,role_only,both", value_delimiter = ',')]
    pub masks: Vec<String>,
    #[arg(long)]
    pub min_eval_len: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub attention_samples: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Comma-separated families.
    #[arg(long, default_value = "transformer,sr_lstm", value_delimiter = ',')]
    pub families: Vec<String>,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Timed batches (at least 10).
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    #[arg(long, default_value_t = 16)]
    pub max_out: usize,
    /// Source pairs; a generated corpus is used when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Keep the configured hidden size for LSTM families instead of matching
    /// the first transformer's parameter count.
    #[arg(long)]
    pub no_match: bool,
    /// Also write the table to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub size: usize,
    #[arg(long, default_value_t = 0.5)]
    pub ambiguity_rate: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalPackArgs {
    /// A `predictions.jsonl` file.
    #[arg(long)]
    pub predictions: PathBuf,
    /// task1_pair, task2_triple or task3_image.
    #[arg(long)]
    pub mode: String,
    #[arg(long, default_value_t = 100)]
    pub sample: usize,
    /// Directory for `sheet.tsv` and `key.tsv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Sentence text; annotated with `--lexicon` when given.
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    pub sentence: Option<String>,
    /// Token<TAB>frame[<TAB>role] lexicon for `--sentence`.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// JSON lines of pairs or annotated sentences.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Line of `--input` to decode (0-based, blank lines skipped).
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Comma-separated channels; defaults to every channel the model has.
    #[arg(long, value_delimiter = ',')]
    pub channels: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// tsv or jsonl; inferred from the extension when absent.
    #[arg(long)]
    pub from: Option<String>,
    #[arg(long)]
    pub to: Option<String>,
    /// Annotate sources with this lexicon when writing JSON lines.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
}
