//! Acceptance suite. Prints one `[PASS]`/`[FAIL]` line per criterion.
//!
//! Runs under `cargo test`; criteria can be picked by substring
//! (`cargo test --test acceptance -- memorization`). A failing criterion is
//! reported but only fails the process when `SEMA_ACCEPTANCE_STRICT=1`.

use std::collections::{HashSet, VecDeque};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use sema::experiment::{
    ablate, benchmark_throughput, evaluate_model, make_synthetic_corpus, match_hidden_dim, memorization_pairs,
    BenchOptions, ExperimentSpec, SynthOptions, TrainOptions,
};
use sema::metrics::{
    apply_shift, bleu, corpus_meteor, corpus_ter, edit_distance, evaluate, meteor, sentence_bleu, ter, ter_edits,
    BleuOptions, MetricOptions, SynonymTable,
};
use sema::models::{objective, parse_records, ChannelMask, Family, ModelConfig, Seq2Seq, Trainer};
use sema::semantics::{build_vocabularies, ParaphrasePair, Vocabularies};
use sema::tensor::gradcheck::{check_all_ops, check_gradients, GradCheckOptions};
use sema::tensor::{rng_from_seed, Tape};
use serde_json::Value;

type Verdict = Result<String, String>;

fn desk(family: Family) -> ModelConfig {
    let mut c = ModelConfig::for_family(family);
    c.model_dim = 64;
    c.hidden_dim = 64;
    c.num_blocks = 2;
    c.num_heads = 2;
    c.latent_dim = 16;
    c.seed = 3;
    c
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut ok = true;
    let ops = check_all_ops(&GradCheckOptions::default()).map_err(|e| e.to_string())?;
    let worst = ops
        .iter()
        .max_by(|a, b| a.1.max_rel_error.total_cmp(&b.1.max_rel_error))
        .expect("ops checked");
    ok &= ops.iter().all(|(_, r)| r.max_rel_error < 1e-4 && r.entries_checked > 0);
    lines.push(format!("{} ops, worst {} {:.1e}", ops.len(), worst.0, worst.1.max_rel_error));

    let pairs = make_synthetic_corpus(&SynthOptions {
        size: 100,
        seed: 4,
        ambiguity_rate: 0.5,
    })
    .map_err(|e| e.to_string())?
    .pairs;
    let vocabs = build_vocabularies(&pairs, 1).map_err(|e| e.to_string())?;
    for family in Family::ALL {
        let mut m = Seq2Seq::new(desk(family), vocabs.clone()).map_err(|e| e.to_string())?;
        let batch: Vec<_> = pairs[..2].iter().map(|p| m.encode_pair(p).unwrap()).collect();
        let opts = GradCheckOptions {
            step: 1e-4,
            fallback_step: Some(1e-5),
            max_entries_per_param: Some(8),
            sample_seed: 17,
            tape_seed: 5,
            ..Default::default()
        };
        let net = &m.net;
        let r = check_gradients(&mut m.params, &opts, |tape| Ok(objective(tape, net, &batch, 1.0)?.0))
            .map_err(|e| e.to_string())?;
        ok &= r.max_rel_error < 1e-4 && r.params_checked == m.params.len();
        lines.push(format!("{family} {:.1e}", r.max_rel_error));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 300.0;
    lines.push(format!("{secs:.0}s (limit 300s)"));
    check(ok, lines.join(", "))
}

fn memorize(family: Family, pairs: &[ParaphrasePair], vocabs: &Vocabularies) -> Result<(Seq2Seq, usize, f64, f64), String> {
    let mut cfg = desk(family);
    cfg.dropout = 0.0;
    cfg.learning_rate = 3e-3;
    cfg.warmup_steps = 100;
    cfg.lr_decay = 1.0;
    cfg.total_steps = 2000;
    let start = Instant::now();
    let mut trainer = Trainer::new(Seq2Seq::new(cfg, vocabs.clone()).map_err(|e| e.to_string())?);
    let mut em = 0.0;
    for step in 1..=2000 {
        trainer.train_step(pairs).map_err(|e| e.to_string())?;
        trainer.end_epoch();
        if step % 100 == 0 {
            em = evaluate_model(&trainer.model, pairs, &MetricOptions::new())
                .map_err(|e| e.to_string())?
                .exact_match;
            if em >= 95.0 {
                return Ok((trainer.model, step, em, start.elapsed().as_secs_f64()));
            }
        }
    }
    Ok((trainer.model, 2001, em, start.elapsed().as_secs_f64()))
}

/// Rows checked and the largest deviation of a row sum from 1.
fn attention_rows(model: &Seq2Seq, pairs: &[ParaphrasePair]) -> Result<(usize, f64), String> {
    let channels: Vec<_> = if model.config.family.is_multi_encoder() {
        sema::models::Channel::ALL.to_vec()
    } else {
        vec![sema::models::Channel::Token]
    };
    let (mut rows, mut worst) = (0, 0.0f64);
    let srcs: Vec<_> = pairs.iter().map(|p| p.src.clone()).collect();
    for d in model.greedy_decode_batch(&srcs, model.config.max_len + 1).map_err(|e| e.to_string())? {
        let text = sema::models::records_to_jsonl(&d.trace.records(&channels).map_err(|e| e.to_string())?);
        for rec in parse_records(&text).map_err(|e| e.to_string())? {
            for r in &rec.weights {
                rows += 1;
                worst = worst.max((r.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    Ok((rows, worst))
}

fn memorization(trained: &mut Vec<Seq2Seq>) -> Verdict {
    let pairs = memorization_pairs(32, 15, 0);
    let vocabs = build_vocabularies(&pairs, 1).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut lines = Vec::new();
    for family in Family::ALL {
        let (model, step, em, secs) = memorize(family, &pairs, &vocabs)?;
        let pass = em >= 95.0 && step <= 2000 && secs < 600.0;
        ok &= pass;
        lines.push(format!("{family} {em:.0}% at step {step} in {secs:.0}s"));
        trained.push(model);
    }
    check(ok, lines.join(", "))
}

fn exhaustive_ter(hyp: &[u8], reference: &[u8]) -> usize {
    let mut best = edit_distance(hyp, reference);
    let mut seen = HashSet::from([hyp.to_vec()]);
    let mut queue = VecDeque::from([(hyp.to_vec(), 0usize)]);
    while let Some((cur, depth)) = queue.pop_front() {
        best = best.min(depth + edit_distance(&cur, reference));
        if depth + 1 >= best {
            continue;
        }
        for start in 0..cur.len() {
            for len in 1..=cur.len() - start {
                for dest in 0..=cur.len() - len {
                    let next = apply_shift(&cur, start, len, dest);
                    if seen.insert(next.clone()) {
                        queue.push_back((next, depth + 1));
                    }
                }
            }
        }
    }
    best
}

fn metric_oracles() -> Verdict {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/metrics_golden.json");
    let golden: Value = serde_json::from_str(&fs::read_to_string(&path).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let mut synonyms = SynonymTable::new();
    for g in golden["synonyms"].as_array().unwrap() {
        let words: Vec<&str> = g.as_array().unwrap().iter().map(|w| w.as_str().unwrap()).collect();
        synonyms.add_group(&words);
    }
    let split = |v: &Value| -> Vec<String> { v.as_str().unwrap().split_whitespace().map(String::from).collect() };
    let pairs = golden["pairs"].as_array().unwrap();
    let mut worst = 0.0f64;
    let mut dev = |got: f64, want: &Value| worst = worst.max((got - want.as_f64().unwrap()).abs());
    let smooth = BleuOptions {
        smooth: true,
        ..Default::default()
    };
    for p in pairs {
        let (h, r) = (split(&p["hyp"]), split(&p["ref"]));
        let refs = [r.clone()];
        dev(sentence_bleu(&h, &refs, BleuOptions::default()).unwrap(), &p["bleu"]);
        dev(sentence_bleu(&h, &refs, smooth).unwrap(), &p["bleu_smoothed"]);
        dev(meteor(&h, &refs, &synonyms), &p["meteor"]);
        dev(ter(&h, &r, true).unwrap(), &p["ter"]);
        dev(ter(&h, &r, false).unwrap(), &p["ter_no_shifts"]);
    }
    let hyps: Vec<Vec<String>> = pairs.iter().map(|p| split(&p["hyp"])).collect();
    let refs: Vec<Vec<Vec<String>>> = pairs.iter().map(|p| vec![split(&p["ref"])]).collect();
    let corpus = &golden["corpus"];
    dev(bleu(&hyps, &refs, BleuOptions::default()).unwrap(), &corpus["bleu"]);
    dev(corpus_meteor(&hyps, &refs, &synonyms).unwrap(), &corpus["meteor"]);
    dev(corpus_ter(&hyps, &refs, true).unwrap(), &corpus["ter"]);
    let golden_ok = pairs.len() == 20 && worst < 1e-6;

    let identity: Vec<Vec<Vec<String>>> = hyps.iter().map(|h| vec![h.clone()]).collect();
    let id = evaluate(&hyps, &identity, &MetricOptions::new()).map_err(|e| e.to_string())?;
    let identity_ok = id.bleu == 100.0 && id.ter == 0.0;

    let mut rng = rng_from_seed(2024);
    let mut agree = 0;
    for _ in 0..1000 {
        let seq = |rng: &mut sema::tensor::SemaRng| -> Vec<u8> {
            let n = rng.random_range(1..=6);
            (0..n).map(|_| rng.random_range(0..3u8)).collect()
        };
        let (h, r) = (seq(&mut rng), seq(&mut rng));
        if ter_edits(&h, &r, true) == exhaustive_ter(&h, &r) {
            agree += 1;
        }
    }
    check(
        golden_ok && identity_ok && agree >= 950,
        format!(
            "golden max deviation {worst:.1e} over {} pairs, identity BLEU {:.1} TER {:.1}, TER greedy = exhaustive on {agree}/1000",
            pairs.len(),
            id.bleu,
            id.ter
        ),
    )
}

fn semantic_gain() -> Verdict {
    let start = Instant::now();
    let corpus = make_synthetic_corpus(&SynthOptions {
        size: 2500,
        seed: 1,
        ambiguity_rate: 0.5,
    })
    .map_err(|e| e.to_string())?;
    let (train, test) = corpus.pairs.split_at(2000);
    let mut spec = ExperimentSpec::new("", "", "");
    spec.ablation = ChannelMask::ALL.to_vec();
    spec.seed = 0;
    spec.train = TrainOptions {
        steps: 600,
        batch_size: 32,
        lowercase: false,
    };
    let mut base = desk(Family::TransformerPb);
    base.dropout = 0.1;
    base.learning_rate = 2e-3;
    base.warmup_steps = 100;
    let rows = ablate(&base, train, test, &spec, false).map_err(|e| e.to_string())?;
    let em = |m: ChannelMask| {
        rows.iter()
            .find(|r| r.config.channel_mask == m)
            .map(|r| r.evaluation.exact_match)
            .expect("every mask ran")
    };
    let (none, frame, role, both) = (
        em(ChannelMask::None),
        em(ChannelMask::FrameOnly),
        em(ChannelMask::RoleOnly),
        em(ChannelMask::Both),
    );
    let secs = start.elapsed().as_secs_f64();
    check(
        both - none >= 20.0 && none < frame && frame < both && none < role && role < both && secs < 1800.0,
        format!(
            "exact match none {none:.1}, frame_only {frame:.1}, role_only {role:.1}, both {both:.1} (gain {:.1} points) in {secs:.0}s",
            both - none
        ),
    )
}

fn throughput() -> Verdict {
    let corpus = make_synthetic_corpus(&SynthOptions {
        size: 500,
        seed: 1,
        ambiguity_rate: 0.5,
    })
    .map_err(|e| e.to_string())?;
    let mem = memorization_pairs(64, 15, 0);
    let mut all = corpus.pairs.clone();
    all.extend(mem.iter().cloned());
    let vocabs = build_vocabularies(&all, 1).map_err(|e| e.to_string())?;
    let srcs: Vec<_> = mem.iter().map(|p| p.src.clone()).collect();
    let t = desk(Family::Transformer);
    let pb = desk(Family::TransformerPb);
    let target = Seq2Seq::new(t.clone(), vocabs.clone()).map_err(|e| e.to_string())?.describe().num_params;
    let mut sr = desk(Family::SrLstm);
    sr.hidden_dim = match_hidden_dim(&sr, &vocabs, target).map_err(|e| e.to_string())?.0;
    let opts = BenchOptions {
        batch_size: 32,
        steps: 30,
        warmup: 3,
        max_out: 16,
    };
    let bench = |configs: &[ModelConfig], o: &BenchOptions| benchmark_throughput(configs, &vocabs, &srcs, o);
    bench(std::slice::from_ref(&t), &opts).map_err(|e| e.to_string())?;
    let rows = bench(&[t.clone(), pb, sr], &opts).map_err(|e| e.to_string())?;
    let (tr, pr, sr) = (&rows[0], &rows[1], &rows[2]);
    let size_ok = (sr.num_params as f64 - tr.num_params as f64).abs() <= 0.1 * tr.num_params as f64;
    let speedup = tr.tokens_per_sec / sr.tokens_per_sec;
    let pb_ratio = pr.tokens_per_sec / tr.tokens_per_sec;
    let mut rates = Vec::new();
    for b in [16, 32, 64] {
        let o = BenchOptions { batch_size: b, ..opts };
        rates.push(bench(std::slice::from_ref(&t), &o).map_err(|e| e.to_string())?[0].tokens_per_sec);
    }
    let scaling_ok = rates.windows(2).all(|w| w[1] >= 0.95 * w[0]);
    check(
        size_ok && speedup >= 3.0 && (0.5..=1.2).contains(&pb_ratio) && scaling_ok,
        format!(
            "transformer {:.0} tok/s ({} params), sr_lstm {:.0} tok/s ({} params): {speedup:.2}x (need 3x); \
             transformer_pb/transformer {pb_ratio:.2} (band 0.5-1.2); batch 16/32/64 {:.0}/{:.0}/{:.0} tok/s",
            tr.tokens_per_sec, tr.num_params, sr.tokens_per_sec, sr.num_params, rates[0], rates[1], rates[2]
        ),
    )
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
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

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(env!("CARGO_BIN_EXE_sema")).args(args).output().map_err(|e| e.to_string())?;
        if out.status.success() {
            Ok(())
        } else {
            Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
        }
    };
    let mut trees = Vec::new();
    for k in 0..2 {
        let root = dir.path().join(format!("run{k}"));
        let r = |name: &str| root.join(name).to_str().unwrap().to_string();
        run(&["synth", "--size", "300", "--seed", "5", "--out", &r("out/data.jsonl")])?;
        for family in ["transformer_pb", "sr_lstm_pb", "nv_lstm"] {
            let ckpt = r(&format!("out/{family}"));
            run(&[
                "train", "--family", family, "--data", &r("out/data.jsonl"), "--out", &ckpt, "--seed", "7",
                "--steps", "30", "--batch", "16", "--model-dim", "32", "--hidden-dim", "32", "--heads", "2",
                "--set", "latent_dim=8",
            ])?;
            let eval_out = r(&format!("out/{family}-eval"));
            run(&["evaluate", "--model", &ckpt, "--data", &r("out/data.jsonl"), "--out", &eval_out, "--seed", "7"])?;
            let preds = r(&format!("out/{family}-gen.jsonl"));
            run(&["generate", "--model", &ckpt, "--input", &r("out/data.jsonl"), "--out", &preds, "--seed", "7"])?;
            if family != "nv_lstm" {
                let dump = r(&format!("out/{family}-dump.jsonl"));
                run(&["dump-attention", "--model", &ckpt, "--input", &r("out/data.jsonl"), "--index", "4", "--out", &dump])?;
            }
        }
        trees.push(tree(&root.join("out")));
    }
    let files = trees[0].len();
    check(
        trees[0] == trees[1] && files > 20,
        format!("{files} output files (checkpoints, metrics, predictions, dumps) byte-identical across two runs"),
    )
}

fn attention_and_masks(trained: &[Seq2Seq]) -> Verdict {
    let pairs = memorization_pairs(32, 15, 0);
    let mut rows = 0;
    let mut worst = 0.0f64;
    for m in trained.iter().filter(|m| m.config.family != Family::NvLstm) {
        let (n, w) = attention_rows(m, &pairs)?;
        rows += n;
        worst = worst.max(w);
    }
    let data = make_synthetic_corpus(&SynthOptions {
        size: 100,
        seed: 9,
        ambiguity_rate: 0.5,
    })
    .map_err(|e| e.to_string())?
    .pairs;
    let vocabs = build_vocabularies(&data, 1).map_err(|e| e.to_string())?;
    let mut mask_ok = true;
    let mut cases = 0;
    for family in [Family::TransformerPb, Family::SrLstmPb] {
        for mask in ChannelMask::ALL {
            let mut cfg = desk(family);
            cfg.model_dim = 16;
            cfg.hidden_dim = 16;
            cfg.channel_mask = mask;
            let m = Seq2Seq::new(cfg, vocabs.clone()).map_err(|e| e.to_string())?;
            let batch: Vec<_> = data[..4].iter().map(|p| m.encode_pair(p).unwrap()).collect();
            let mut tape = Tape::new(&m.params, 0);
            let loss = m.net.loss(&mut tape, &batch).map_err(|e| e.to_string())?.ce_sum;
            let grads = tape.backward(loss).map_err(|e| e.to_string())?;
            let mass = |channel: &str| -> f64 {
                m.params
                    .iter()
                    .filter(|(_, p)| p.name.starts_with(&format!("emb/{channel}")) || p.name.starts_with(&format!("enc/{channel}")))
                    .map(|(id, _)| grads.get(id).map_or(0.0, |g| g.data().iter().map(|x| x.abs()).sum()))
                    .sum()
            };
            let (f, r) = (mass("frame"), mass("role"));
            mask_ok &= (f == 0.0) != mask.frames() && (r == 0.0) != mask.roles();
            cases += 1;
        }
    }
    check(
        rows > 0 && worst <= 1e-6 && mask_ok,
        format!(
            "{rows} dumped rows from trained models, max |sum - 1| {worst:.1e}; masked channels exactly zero-gradient in {cases} family/mask cases: {}",
            if mask_ok { "yes" } else { "no" }
        ),
    )
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let mut trained = Vec::new();
    let mut failures = 0;
    let mut report = |name: &str, f: &mut dyn FnMut() -> Verdict| {
        if !wanted(name) {
            return;
        }
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(d) => println!("[PASS] {name}: {d} [{secs:.0}s]"),
            Err(d) => {
                failures += 1;
                println!("[FAIL] {name}: {d} [{secs:.0}s]");
            }
        }
    };
    report("gradient-suite", &mut gradient_suite);
    report("memorization", &mut || memorization(&mut trained));
    report("metric-oracles", &mut metric_oracles);
    report("semantic-gain", &mut semantic_gain);
    report("throughput", &mut throughput);
    report("determinism", &mut determinism);
    report("attention-normalization", &mut || {
        if trained.is_empty() {
            let pairs = memorization_pairs(32, 15, 0);
            let vocabs = build_vocabularies(&pairs, 1).map_err(|e| e.to_string())?;
            for family in [Family::Transformer, Family::TransformerPb, Family::SrLstm, Family::SrLstmPb] {
                trained.push(memorize(family, &pairs, &vocabs)?.0);
            }
        }
        attention_and_masks(&trained)
    });
    println!("acceptance: {failures} criterion(s) failed");
    if failures > 0 && std::env::var("SEMA_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
