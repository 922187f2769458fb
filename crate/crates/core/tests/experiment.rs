mod common;

use std::fs;
use std::path::Path;

use common::tiny_config;
use sema::experiment::*;
use sema::models::{ChannelMask, Family, ModelConfig};
use sema::semantics::{build_vocabularies, write_pairs, AnnotatedSentence, ParaphrasePair};

fn synth(size: usize, seed: u64) -> Vec<ParaphrasePair> {
    make_synthetic_corpus(&SynthOptions {
        size,
        seed,
        ambiguity_rate: 0.5,
    })
    .unwrap()
    .pairs
}

fn spec_in(dir: &Path, train: &[ParaphrasePair], test: &[ParaphrasePair]) -> ExperimentSpec {
    write_pairs(dir.join("train.jsonl"), train).unwrap();
    write_pairs(dir.join("test.jsonl"), test).unwrap();
    let mut spec = ExperimentSpec::new(dir.join("train.jsonl"), dir.join("test.jsonl"), dir.join("out"));
    spec.train = TrainOptions {
        steps: 20,
        batch_size: 16,
        lowercase: false,
    };
    spec.seed = 5;
    spec
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn subsample_is_without_replacement() {
    let idx = subsample_indices(50, 20, 3).unwrap();
    let distinct: std::collections::HashSet<_> = idx.iter().collect();
    assert_eq!(distinct.len(), 20);
    assert!(idx.iter().all(|&i| i < 50));
    assert_eq!(idx, subsample_indices(50, 20, 3).unwrap());
    assert_eq!(subsample_indices(7, 7, 0).unwrap(), (0..7).collect::<Vec<_>>());
    assert!(subsample_indices(5, 6, 0).is_err());
}

#[test]
fn length_filter_keeps_long_sources_only() {
    let pairs: Vec<ParaphrasePair> = (1..40)
        .map(|n| {
            let words: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
            ParaphrasePair {
                src: AnnotatedSentence::from_tokens(&words),
                tgt: AnnotatedSentence::from_text("x"),
            }
        })
        .collect();
    let kept = filter_min_len(&pairs, 21);
    assert_eq!(kept.len(), 19);
    assert!(kept.iter().all(|p| p.src.len() > 20));
}

#[test]
fn prepare_applies_subsample_and_filters() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(200, 1);
    let mut spec = spec_in(dir.path(), &data[..150], &data[150..]);
    spec.subsample_size = Some(40);
    spec.min_eval_len = Some(6);
    let (train, test) = spec.load_data().unwrap();
    assert_eq!(train.len(), 40);
    assert!(!test.is_empty() && test.iter().all(|p| p.src.len() >= 6));
    spec.subsample_size = Some(151);
    assert!(spec.load_data().is_err());
    spec.subsample_size = None;
    spec.min_eval_len = Some(50);
    assert!(spec.load_data().is_err());
}

#[test]
fn experiment_outputs_are_reproducible() {
    let data = synth(160, 2);
    let mut trees = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = spec_in(dir.path(), &data[..120], &data[120..]);
        spec.configs = vec![tiny_config(Family::TransformerPb), tiny_config(Family::SrLstm)];
        let rows = run_experiment(&spec).unwrap();
        assert_eq!(rows.len(), 2);
        let out = dir.path().join("out");
        for name in ["0-transformer_pb", "1-sr_lstm"] {
            for f in ["metrics.tsv", "predictions.jsonl", "config.snapshot"] {
                assert!(out.join(name).join(f).is_file(), "{name}/{f}");
            }
            assert!(out.join(name).join("attention").is_dir());
        }
        let dumps = fs::read_dir(out.join("0-transformer_pb/attention")).unwrap().count();
        assert_eq!(dumps, 5);
        let preds = parse_predictions(&fs::read_to_string(out.join("1-sr_lstm/predictions.jsonl")).unwrap()).unwrap();
        assert_eq!(preds.len(), 40);
        trees.push(read_tree(&out));
    }
    assert_eq!(trees[0], trees[1]);
}

#[test]
fn ablation_rows_and_annotation_check() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(140, 3);
    let mut spec = spec_in(dir.path(), &data[..100], &data[100..]);
    spec.configs = vec![tiny_config(Family::TransformerPb)];
    spec.ablation = vec![ChannelMask::Both];
    let rows = run_ablation(&spec).unwrap();
    assert_eq!(rows.len(), 1);
    let table = fs::read_to_string(dir.path().join("out/ablation.tsv")).unwrap();
    assert_eq!(table.lines().count(), 2);

    let bare: Vec<ParaphrasePair> = data
        .iter()
        .map(|p| ParaphrasePair {
            src: AnnotatedSentence::from_tokens(&p.src.tokens),
            tgt: p.tgt.clone(),
        })
        .collect();
    let spec = spec_in(dir.path(), &bare[..100], &bare[100..]);
    let mut spec = ExperimentSpec { configs: vec![tiny_config(Family::TransformerPb)], ..spec };
    spec.ablation = vec![ChannelMask::None, ChannelMask::RoleOnly];
    assert!(run_ablation(&spec).is_err());
    spec.ablation = vec![ChannelMask::None];
    assert_eq!(run_ablation(&spec).unwrap().len(), 1);
}

#[test]
fn role_labels_beat_blind_model_on_synthetic_corpus() {
    let data = synth(700, 4);
    let (train_pairs, test) = data.split_at(600);
    let dir = tempfile::tempdir().unwrap();
    let mut spec = ExperimentSpec::new("unused", "unused", dir.path());
    spec.ablation = vec![ChannelMask::None, ChannelMask::Both];
    spec.train = TrainOptions {
        steps: 250,
        batch_size: 32,
        lowercase: false,
    };
    let mut base = tiny_config(Family::TransformerPb);
    base.model_dim = 32;
    base.hidden_dim = 32;
    base.learning_rate = 3e-3;
    base.warmup_steps = 50;
    let rows = ablate(&base, train_pairs, test, &spec, false).unwrap();
    let (none, both) = (rows[0].evaluation.exact_match, rows[1].evaluation.exact_match);
    assert!(both > none, "none {none} both {both}");
}

#[test]
fn throughput_rows_and_matched_sizes() {
    let data = synth(200, 5);
    let vocabs = build_vocabularies(&data, 1).unwrap();
    let srcs: Vec<AnnotatedSentence> = data.iter().map(|p| p.src.clone()).collect();
    let t = tiny_config(Family::Transformer);
    let target = sema::models::Seq2Seq::new(t.clone(), vocabs.clone()).unwrap().describe().num_params;
    let s = tiny_config(Family::SrLstm);
    let (h, n) = match_hidden_dim(&s, &vocabs, target).unwrap();
    assert!((n as f64 - target as f64).abs() <= 0.1 * target as f64, "{n} vs {target}");
    let s = ModelConfig { hidden_dim: h, ..s };
    let opts = BenchOptions {
        batch_size: 8,
        steps: 10,
        warmup: 1,
        max_out: 6,
    };
    let rows = benchmark_throughput(&[t.clone(), s], &vocabs, &srcs, &opts).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.tokens_per_sec > 0.0 && r.step_rates.len() == 10));
    let again = benchmark_throughput(std::slice::from_ref(&t), &vocabs, &srcs, &opts).unwrap();
    assert_eq!(again[0].tokens, rows[0].tokens);
    assert!(benchmark_throughput(&[t], &vocabs, &srcs, &BenchOptions { steps: 9, ..opts }).is_err());
}

#[test]
fn eval_pack_from_predictions_file() {
    let data = synth(150, 6);
    let dir = tempfile::tempdir().unwrap();
    let mut spec = spec_in(dir.path(), &data[..30], &data[30..]);
    spec.train.steps = 2;
    spec.configs = vec![tiny_config(Family::Transformer)];
    run_experiment(&spec).unwrap();
    let text = fs::read_to_string(dir.path().join("out/0-transformer/predictions.jsonl")).unwrap();
    let preds = parse_predictions(&text).unwrap();
    assert_eq!(predictions_to_jsonl(&preds), text);
    let pack = export_eval_pack(&preds, EvalPackMode::Task1Pair, 100, 1).unwrap();
    assert_eq!(pack.sheet.lines().count(), 101);
    assert!(pack.sheet.lines().skip(1).all(|l| l.split('\t').count() == 3));
    for k in parse_key(&pack.key).unwrap() {
        let row = pack.sheet.lines().find(|l| l.starts_with(&k.id)).unwrap();
        let cols: Vec<&str> = row.split('\t').collect();
        let slot = if k.generated == "s1" { 1 } else { 2 };
        assert_eq!(cols[slot], preds[k.index].hypothesis);
        assert_eq!(cols[3 - slot], preds[k.index].source);
    }
    assert!(export_eval_pack(&preds, EvalPackMode::Task1Pair, 121, 1).is_err());
    assert!(parse_predictions("{\"index\":0}\n").is_err());
}
