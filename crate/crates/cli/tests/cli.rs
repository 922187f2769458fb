use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: [&str; 8] = ["--model-dim", "16", "--hidden-dim", "16", "--heads", "2", "--set", "latent_dim=4"];

fn sema(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sema")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = sema(args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn corpus(dir: &Path, size: usize) -> String {
    let path = dir.join("corpus.jsonl");
    ok(&["synth", "--size", &size.to_string(), "--out", p(&path), "--seed", "2"]);
    path.to_str().unwrap().to_string()
}

fn train(data: &str, out: &Path, family: &str, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--family", family, "--data", data, "--out", p(out), "--seed", "7"];
    args.extend(["--steps", "6", "--batch", "8"]);
    args.extend(SMALL);
    args.extend(extra);
    sema(&args)
}

#[test]
fn retraining_gives_identical_checkpoint_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), 120);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert!(train(&data, out, "transformer_pb", &[]).status.success());
    }
    for f in ["model.ckpt", "model.meta", "vocab.tokens", "vocab.frames", "vocab.roles", "train.log"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("c");
    let out = sema(&[
        "train", "--family", "transformer_pb", "--data", &data, "--out", p(&c), "--seed", "8", "--steps", "6", "--batch",
        "8", "--model-dim", "16", "--hidden-dim", "16", "--heads", "2",
    ]);
    assert!(out.status.success());
    assert_ne!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(c.join("model.ckpt")).unwrap());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), 100);
    let cfg = dir.path().join("model.cfg");
    fs::write(&cfg, "family = sr_lstm\nmodel_dim = 8\nhidden_dim = 8\ndropout = 0.25\n").unwrap();
    let out = dir.path().join("m");
    let status = sema(&[
        "train", "--config", p(&cfg), "--hidden-dim", "12", "--data", &data, "--out", p(&out), "--steps", "2",
    ]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let meta = fs::read_to_string(out.join("model.meta")).unwrap();
    for line in ["family = sr_lstm", "model_dim = 8", "hidden_dim = 12", "dropout = 0.25", "seed = 0"] {
        assert!(meta.lines().any(|l| l == line), "{line} missing from\n{meta}");
    }
}

#[test]
fn identical_files_score_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let h = dir.path().join("h.txt");
    fs::write(&h, "a man rides a horse\nthe cat sat on the mat\ntwo dogs play\n").unwrap();
    let stdout = ok(&["evaluate", "--hyp", p(&h), "--ref", p(&h)]);
    assert!(stdout.contains("bleu\t100.000000\n"), "{stdout}");
    assert!(stdout.contains("ter\t0.000000\n"), "{stdout}");
    let out = dir.path().join("scores");
    ok(&["evaluate", "--hyp", p(&h), "--ref", p(&h), "--out", p(&out), "--per-sentence"]);
    assert_eq!(fs::read_to_string(out.join("metrics.tsv")).unwrap(), stdout);
    assert_eq!(fs::read_to_string(out.join("per_sentence.tsv")).unwrap().lines().count(), 4);
}

#[test]
fn exit_codes() {
    let out = sema(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(sema(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(sema(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"src\": {\"tokens\": [\"a\"]}, \"tgt\": {\"tokens\": [\"b\"]}}\n{not json\n").unwrap();
    let out = train(p(&bad), &dir.path().join("m"), "transformer", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    let missing = dir.path().join("missing.jsonl");
    assert_eq!(train(p(&missing), &dir.path().join("m"), "transformer", &[]).status.code(), Some(2));

    let data = corpus(dir.path(), 100);
    let out = train(&data, &dir.path().join("m"), "no_such_family", &[]);
    assert_eq!(out.status.code(), Some(1));

    let out = train(&data, &dir.path().join("m"), "sr_lstm", &["--lr", "1e305"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn bench_prints_one_row_per_family() {
    let stdout = ok(&[
        "bench", "--families", "transformer,sr_lstm", "--batch", "4", "--steps", "10", "--warmup", "1", "--max-out", "4",
        "--model-dim", "16", "--heads", "2",
    ]);
    let rows: Vec<&str> = stdout.lines().collect();
    assert_eq!(rows.len(), 3, "{stdout}");
    assert_eq!(rows[0], "family\tparams\thidden_dim\ttokens_per_sec");
    let params: Vec<f64> = rows[1..].iter().map(|r| r.split('\t').nth(1).unwrap().parse().unwrap()).collect();
    assert!((params[1] - params[0]).abs() <= 0.1 * params[0], "{params:?}");
    assert!(rows[1].starts_with("transformer\t") && rows[2].starts_with("sr_lstm\t"));
    assert_eq!(sema(&["bench", "--steps", "9"]).status.code(), Some(1));
}

#[test]
fn convert_round_trip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let tsv = dir.path().join("raw.tsv");
    let text = "a man rides a horse\ta person is riding a horse\ntwo  dogs\tdogs\n";
    fs::write(&tsv, text).unwrap();
    let jsonl = dir.path().join("pairs.jsonl");
    let back = dir.path().join("back.tsv");
    ok(&["convert", "--input", p(&tsv), "--out", p(&jsonl)]);
    ok(&["convert", "--input", p(&jsonl), "--out", p(&back)]);
    assert_eq!(
        fs::read_to_string(&back).unwrap(),
        "a man rides a horse\ta person is riding a horse\ntwo dogs\tdogs\n"
    );
    let again = dir.path().join("again.jsonl");
    ok(&["convert", "--input", p(&back), "--out", p(&again)]);
    assert_eq!(fs::read(&jsonl).unwrap(), fs::read(&again).unwrap());

    let lex = dir.path().join("lex.tsv");
    fs::write(&lex, "rides\t/pb/ride-01\nhorse\t/pb/horse\nman\t/pb/man\n").unwrap();
    let annotated = dir.path().join("annotated.jsonl");
    ok(&["convert", "--input", p(&tsv), "--out", p(&annotated), "--lexicon", p(&lex)]);
    let first: serde_json::Value =
        serde_json::from_str(fs::read_to_string(&annotated).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["src"]["frames"][2], "/pb/ride-01");
    assert_eq!(sema(&["convert", "--input", p(&tsv), "--out", "x.txt"]).status.code(), Some(1));
}

fn row_sums_ok(dump: &str, expect_channels: usize) {
    let records: Vec<serde_json::Value> = dump.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), expect_channels);
    for r in &records {
        let (t, s) = (r["target"].as_array().unwrap().len(), r["source"].as_array().unwrap().len());
        let w = r["weights"].as_array().unwrap();
        assert_eq!(w.len(), t);
        for row in w {
            let row = row.as_array().unwrap();
            assert_eq!(row.len(), s);
            let sum: f64 = row.iter().map(|x| x.as_f64().unwrap()).sum();
            assert!((sum - 1.0).abs() <= 1e-6);
        }
    }
}

#[test]
fn attention_dumps_generation_and_eval_pack() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), 150);
    let pb = dir.path().join("pb");
    assert!(train(&data, &pb, "transformer_pb", &[]).status.success());
    let dump = |out: &Path, extra: &[&str]| {
        let mut args = vec!["dump-attention", "--model", p(&pb), "--input", &data, "--index", "3", "--out", p(out)];
        args.extend(extra);
        sema(&args)
    };
    let (d1, d2) = (dir.path().join("d1.jsonl"), dir.path().join("d2.jsonl"));
    assert!(dump(&d1, &[]).status.success());
    assert!(dump(&d2, &[]).status.success());
    let text = fs::read_to_string(&d1).unwrap();
    assert_eq!(text, fs::read_to_string(&d2).unwrap());
    row_sums_ok(&text, 3);
    let channels: Vec<String> = text
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["channel"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(channels, ["token", "frame", "role"]);
    assert!(dump(&d2, &["--channels", "role"]).status.success());
    row_sums_ok(&fs::read_to_string(&d2).unwrap(), 1);

    let plain = dir.path().join("plain");
    assert!(train(&data, &plain, "transformer", &[]).status.success());
    let d3 = dir.path().join("d3.jsonl");
    let out = sema(&["dump-attention", "--model", p(&plain), "--sentence", "the cat and the dog chase", "--channels", "token,frame", "--out", p(&d3)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("token channel"));
    ok(&["dump-attention", "--model", p(&plain), "--sentence", "the cat and the dog chase", "--out", p(&d3)]);
    row_sums_ok(&fs::read_to_string(&d3).unwrap(), 1);

    let preds = dir.path().join("preds.jsonl");
    let stdout = ok(&["generate", "--model", p(&pb), "--input", &data, "--out", p(&preds)]);
    assert_eq!(stdout.lines().count(), 150);
    let sheet_dir = dir.path().join("pack");
    ok(&["eval-pack", "--predictions", p(&preds), "--mode", "task1_pair", "--sample", "100", "--out", p(&sheet_dir), "--seed", "4"]);
    assert_eq!(fs::read_to_string(sheet_dir.join("sheet.tsv")).unwrap().lines().count(), 101);
    assert_eq!(fs::read_to_string(sheet_dir.join("key.tsv")).unwrap().lines().count(), 101);
    let out = sema(&["eval-pack", "--predictions", p(&preds), "--mode", "task1_pair", "--sample", "151", "--out", p(&sheet_dir)]);
    assert_eq!(out.status.code(), Some(1));

    let eval_dir = dir.path().join("eval");
    let stdout = ok(&["evaluate", "--model", p(&pb), "--data", &data, "--out", p(&eval_dir), "--min-eval-len", "6"]);
    assert!(stdout.contains("exact_match\t"));
    for f in ["metrics.tsv", "predictions.jsonl", "config.snapshot"] {
        assert!(eval_dir.join(f).is_file(), "{f}");
    }
    for e in fs::read_dir(eval_dir.join("attention")).unwrap() {
        row_sums_ok(&fs::read_to_string(e.unwrap().path()).unwrap(), 3);
    }
}

#[test]
fn ablate_and_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), 120);
    let out = dir.path().join("abl");
    let stdout = ok(&[
        "ablate", "--family", "transformer_pb", "--data", &data, "--test", &data, "--out", p(&out), "--masks",
        "none,both", "--steps", "3", "--batch", "8", "--model-dim", "16", "--heads", "2",
    ]);
    assert_eq!(stdout.lines().count(), 3);
    assert!(out.join("none/metrics.tsv").is_file() && out.join("both/metrics.tsv").is_file());

    let vecs = dir.path().join("glove.txt");
    let line = |w: &str| format!("{w} {}\n", vec!["0.5"; 16].join(" "));
    fs::write(&vecs, line("the") + &line("cat") + &line("zzz-unseen")).unwrap();
    let m = dir.path().join("emb");
    let out = train(&data, &m, "transformer", &["--embeddings", p(&vecs)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("initialized 2 of"));
    fs::write(&vecs, "the 0.1 0.2\n").unwrap();
    assert_eq!(train(&data, &m, "transformer", &["--embeddings", p(&vecs)]).status.code(), Some(1));
}
