//! Training runs, evaluation, ablations, throughput and rating-sheet export.

mod bench;
mod evalpack;
mod synth;

pub use bench::{benchmark_throughput, match_hidden_dim, BenchOptions, Throughput};
pub use evalpack::{export_eval_pack, parse_key, EvalPack, EvalPackMode, KeyEntry};
pub use synth::{
    blind_bayes_accuracy, make_synthetic_corpus, memorization_pairs, synthetic_reference, SynthOptions,
    SyntheticCorpus,
};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricOptions, MetricReport};
use crate::models::{records_to_jsonl, Channel, ChannelMask, ModelConfig, Seq2Seq, Trainer};
use crate::semantics::{build_vocabularies, read_pairs, ParaphrasePair, Vocabularies};
use crate::tensor::rng_from_seed;

/// Sentences decoded per stacked pass during evaluation.
pub const EVAL_BATCH: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOptions {
    pub steps: usize,
    pub batch_size: usize,
    /// Lowercase tokens before training and evaluation.
    pub lowercase: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 32,
            lowercase: false,
        }
    }
}

/// Loss trace of a training run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Mean token cross-entropy per step.
    pub ce: Vec<f64>,
    pub epochs: u64,
}

/// Trains `model` for `opts.steps` minibatch steps. Each epoch visits the
/// pairs in an order shuffled by `seed` and the epoch number.
pub fn train(model: Seq2Seq, pairs: &[ParaphrasePair], opts: &TrainOptions, seed: u64) -> Result<(Seq2Seq, TrainLog)> {
    train_with(model, pairs, opts, seed, |_, _| {})
}

/// [`train`] with a callback after every step, given the step number and its
/// mean cross-entropy.
pub fn train_with<F>(
    model: Seq2Seq,
    pairs: &[ParaphrasePair],
    opts: &TrainOptions,
    seed: u64,
    mut on_step: F,
) -> Result<(Seq2Seq, TrainLog)>
where
    F: FnMut(usize, f64),
{
    if pairs.is_empty() {
        return Err(Error::contract("empty training set"));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let encoded = pairs
        .iter()
        .map(|p| model.encode_pair(p))
        .collect::<Result<Vec<_>>>()?;
    let mut trainer = Trainer::new(model);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut cursor = encoded.len();
    let mut epoch = 0u64;
    while log.ce.len() < opts.steps {
        if cursor >= encoded.len() {
            if epoch > 0 {
                trainer.end_epoch();
            }
            let mut rng = rng_from_seed(seed ^ epoch.wrapping_mul(0xA076_1D64_78BD_642F));
            order.shuffle(&mut rng);
            cursor = 0;
            epoch += 1;
        }
        let end = (cursor + opts.batch_size).min(encoded.len());
        let batch: Vec<_> = order[cursor..end].iter().map(|&i| encoded[i].clone()).collect();
        cursor = end;
        let r = trainer.train_step_encoded(&batch)?;
        on_step(log.ce.len(), r.ce);
        log.ce.push(r.ce);
    }
    log.epochs = epoch;
    Ok((trainer.model, log))
}

/// One decoded test sentence; a line of `predictions.jsonl`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub index: usize,
    pub source: String,
    pub reference: String,
    pub hypothesis: String,
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

impl Prediction {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("strings always serialize")
    }
}

pub fn predictions_to_jsonl(preds: &[Prediction]) -> String {
    preds.iter().map(|p| p.to_json() + "\n").collect()
}

/// Parses `predictions.jsonl`; blank lines are skipped.
pub fn parse_predictions(text: &str) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p = serde_json::from_str(line).map_err(|e| {
            Error::at_line(
                i + 1,
                Error::Parse {
                    offset: e.column().saturating_sub(1),
                    message: e.to_string(),
                },
            )
        })?;
        out.push(p);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub predictions: Vec<Prediction>,
    pub report: MetricReport,
    /// Percentage of hypotheses equal to their reference.
    pub exact_match: f64,
}

/// Greedy-decodes every source (up to `model.config.max_len + 1` tokens) and
/// scores hypotheses against the untruncated references.
pub fn evaluate_model(model: &Seq2Seq, test: &[ParaphrasePair], opts: &MetricOptions) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::contract("empty evaluation set"));
    }
    let max_out = model.config.max_len + 1;
    let mut predictions = Vec::with_capacity(test.len());
    let mut hyps = Vec::with_capacity(test.len());
    for (c, chunk) in test.chunks(EVAL_BATCH).enumerate() {
        let srcs: Vec<_> = chunk.iter().map(|p| p.src.clone()).collect();
        for (k, d) in model.greedy_decode_batch(&srcs, max_out)?.into_iter().enumerate() {
            let p = &chunk[k];
            predictions.push(Prediction {
                index: c * EVAL_BATCH + k,
                source: p.src.text(),
                reference: p.tgt.text(),
                hypothesis: d.tokens.join(" "),
                truncated: d.truncated,
                image: None,
            });
            hyps.push(d.tokens);
        }
    }
    let refs: Vec<Vec<Vec<String>>> = test.iter().map(|p| vec![p.tgt.tokens.clone()]).collect();
    let report = evaluate(&hyps, &refs, opts)?;
    let hits = hyps.iter().zip(test).filter(|(h, p)| **h == p.tgt.tokens).count();
    Ok(Evaluation {
        predictions,
        report,
        exact_match: 100.0 * hits as f64 / test.len() as f64,
    })
}

/// `k` distinct indices into a corpus of `n`, drawn without replacement and
/// returned in ascending order.
pub fn subsample_indices(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k > n {
        return Err(Error::Config(format!("subsample of {k} from a corpus of {n}")));
    }
    let mut rng = rng_from_seed(seed);
    let mut idx = index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Pairs whose source has at least `min_len` tokens.
pub fn filter_min_len(pairs: &[ParaphrasePair], min_len: usize) -> Vec<ParaphrasePair> {
    pairs.iter().filter(|p| p.src.len() >= min_len).cloned().collect()
}

/// A training and evaluation study over one dataset.
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    pub configs: Vec<ModelConfig>,
    /// Overrides every config's `max_len` (training truncation).
    pub max_len: usize,
    /// Truncate training pairs to `max_len`; when false they are kept whole
    /// and only the model's input cap applies.
    pub truncate_train: bool,
    /// Decode-time input cap; defaults to `max_len`.
    pub eval_max_len: Option<usize>,
    /// Evaluate only sources with at least this many tokens.
    pub min_eval_len: Option<usize>,
    /// Train on a random subset of this many pairs.
    pub subsample_size: Option<usize>,
    pub ablation: Vec<ChannelMask>,
    pub train: TrainOptions,
    pub min_count: usize,
    /// Sentences whose attention is dumped under `attention/`.
    pub attention_samples: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl ExperimentSpec {
    pub fn new(train_path: impl Into<PathBuf>, test_path: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            train_path: train_path.into(),
            test_path: test_path.into(),
            configs: Vec::new(),
            max_len: 15,
            truncate_train: true,
            eval_max_len: None,
            min_eval_len: None,
            subsample_size: None,
            ablation: ChannelMask::ALL.to_vec(),
            train: TrainOptions::default(),
            min_count: 1,
            attention_samples: 5,
            seed: 0,
            out_dir: out_dir.into(),
        }
    }

    /// Reads both splits and applies lowercasing, truncation, subsampling and
    /// the evaluation length filter.
    pub fn load_data(&self) -> Result<(Vec<ParaphrasePair>, Vec<ParaphrasePair>)> {
        let train = read_pairs(&self.train_path)?;
        let test = read_pairs(&self.test_path)?;
        self.prepare(train, test)
    }

    pub fn prepare(
        &self,
        train: Vec<ParaphrasePair>,
        test: Vec<ParaphrasePair>,
    ) -> Result<(Vec<ParaphrasePair>, Vec<ParaphrasePair>)> {
        let train = match self.subsample_size {
            Some(k) => subsample_indices(train.len(), k, self.seed)?
                .into_iter()
                .map(|i| train[i].clone())
                .collect(),
            None => train,
        };
        let cap = if self.truncate_train { self.max_len } else { usize::MAX };
        let train = train.iter().map(|p| p.prepared(cap, self.train.lowercase)).collect();
        let test: Vec<_> = test.iter().map(|p| p.prepared(usize::MAX, self.train.lowercase)).collect();
        let test = match self.min_eval_len {
            Some(m) => filter_min_len(&test, m),
            None => test,
        };
        if test.is_empty() {
            return Err(Error::Config("no evaluation pairs survive the length filter".into()));
        }
        Ok((train, test))
    }
}

/// Result of training and evaluating one configuration.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub name: String,
    pub config: ModelConfig,
    pub num_params: usize,
    pub evaluation: Evaluation,
    pub log: TrainLog,
}

/// Trains one model on `train`, evaluates it on `test` and, when `out` is
/// given, writes `metrics.tsv`, `predictions.jsonl`, `attention/` and
/// `config.snapshot` there.
pub fn run_one(
    name: &str,
    config: &ModelConfig,
    vocabs: &Vocabularies,
    train_pairs: &[ParaphrasePair],
    test: &[ParaphrasePair],
    spec: &ExperimentSpec,
    out: Option<&Path>,
) -> Result<RunResult> {
    let mut cfg = config.clone();
    cfg.max_len = spec.max_len;
    cfg.seed = spec.seed;
    let model = Seq2Seq::new(cfg.clone(), vocabs.clone())?;
    let num_params = model.describe().num_params;
    let (mut model, log) = train(model, train_pairs, &spec.train, spec.seed)?;
    if let Some(m) = spec.eval_max_len {
        model.config.max_len = m;
    }
    let evaluation = evaluate_model(&model, test, &MetricOptions::new())?;
    if let Some(dir) = out {
        write_run(dir, &model, &evaluation, test, spec.attention_samples, spec.seed)?;
    }
    Ok(RunResult {
        name: name.to_string(),
        config: cfg,
        num_params,
        evaluation,
        log,
    })
}

/// Writes `metrics.tsv`, `predictions.jsonl`, `config.snapshot` and the
/// attention dumps of `samples` test sentences chosen with `seed`.
pub fn write_run(
    dir: &Path,
    model: &Seq2Seq,
    ev: &Evaluation,
    test: &[ParaphrasePair],
    samples: usize,
    seed: u64,
) -> Result<()> {
    let write = |name: &str, text: &str| {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::file(&path, e))
    };
    let att = dir.join("attention");
    fs::create_dir_all(&att).map_err(|e| Error::file(&att, e))?;
    let mut metrics = ev.report.to_tsv();
    writeln!(metrics, "exact_match\t{:.6}", ev.exact_match).expect("writing to a String");
    write("metrics.tsv", &metrics)?;
    write("predictions.jsonl", &predictions_to_jsonl(&ev.predictions))?;
    write("config.snapshot", &model.config.to_text())?;
    let k = samples.min(test.len());
    let channels: Vec<Channel> = if model.config.family.is_multi_encoder() {
        Channel::ALL.to_vec()
    } else {
        vec![Channel::Token]
    };
    for i in subsample_indices(test.len(), k, seed)? {
        let d = model.greedy_decode(&test[i].src, model.config.max_len + 1)?;
        if d.trace.is_empty() {
            continue;
        }
        let path = att.join(format!("{i:05}.jsonl"));
        fs::write(&path, records_to_jsonl(&d.trace.records(&channels)?)).map_err(|e| Error::file(&path, e))?;
    }
    Ok(())
}

/// Tab-separated comparison table with a header row.
pub fn results_table(rows: &[RunResult]) -> String {
    let mut s = String::from("name\tfamily\tparams\tbleu\tmeteor\tter\texact_match\n");
    for r in rows {
        let m = &r.evaluation.report;
        writeln!(
            s,
            "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            r.name, r.config.family, r.num_params, m.bleu, m.meteor, m.ter, r.evaluation.exact_match
        )
        .expect("writing to a String");
    }
    s
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))
}

/// Trains and evaluates every config of `spec` on shared vocabularies; each
/// run writes to `out_dir/<index>-<family>/` and the table to `results.tsv`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<RunResult>> {
    if spec.configs.is_empty() {
        return Err(Error::Config("experiment has no model configs".into()));
    }
    let (train_pairs, test) = spec.load_data()?;
    let vocabs = build_vocabularies(&train_pairs, spec.min_count)?;
    create_dir(&spec.out_dir)?;
    let mut rows = Vec::new();
    for (i, cfg) in spec.configs.iter().enumerate() {
        let name = format!("{i}-{}", cfg.family);
        let dir = spec.out_dir.join(&name);
        create_dir(&dir)?;
        rows.push(run_one(&name, cfg, &vocabs, &train_pairs, &test, spec, Some(&dir))?);
    }
    let path = spec.out_dir.join("results.tsv");
    fs::write(&path, results_table(&rows)).map_err(|e| Error::file(&path, e))?;
    Ok(rows)
}

/// Trains `base` once per channel mask of the spec (same seed and
/// vocabularies). Pairs are given directly; see [`run_ablation`] for files.
pub fn ablate(
    base: &ModelConfig,
    train_pairs: &[ParaphrasePair],
    test: &[ParaphrasePair],
    spec: &ExperimentSpec,
    write: bool,
) -> Result<Vec<RunResult>> {
    if spec.ablation.is_empty() {
        return Err(Error::Config("ablation has no channel masks".into()));
    }
    let needs_labels = spec.ablation.iter().any(|m| *m != ChannelMask::None);
    if needs_labels && !train_pairs.iter().any(|p| p.src.is_annotated()) {
        return Err(Error::Config(
            "channel masks other than none need frame/role annotations, and the training data has none".into(),
        ));
    }
    let vocabs = build_vocabularies(train_pairs, spec.min_count)?;
    if write {
        create_dir(&spec.out_dir)?;
    }
    let mut rows = Vec::new();
    for &mask in &spec.ablation {
        let mut cfg = base.clone();
        cfg.channel_mask = mask;
        let name = mask.to_string();
        let dir = spec.out_dir.join(&name);
        if write {
            create_dir(&dir)?;
        }
        rows.push(run_one(&name, &cfg, &vocabs, train_pairs, test, spec, write.then_some(dir.as_path()))?);
    }
    if write {
        let path = spec.out_dir.join("ablation.tsv");
        fs::write(&path, results_table(&rows)).map_err(|e| Error::file(&path, e))?;
    }
    Ok(rows)
}

/// Loads the spec's data and runs [`ablate`] with its first config,
/// writing one directory per mask plus `ablation.tsv`.
pub fn run_ablation(spec: &ExperimentSpec) -> Result<Vec<RunResult>> {
    let base = spec
        .configs
        .first()
        .ok_or_else(|| Error::Config("ablation needs a model config".into()))?;
    let (train_pairs, test) = spec.load_data()?;
    ablate(base, &train_pairs, &test, spec, true)
}
