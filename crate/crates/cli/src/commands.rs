use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sema::experiment::{
    benchmark_throughput, blind_bayes_accuracy, evaluate_model, export_eval_pack, filter_min_len, make_synthetic_corpus,
    match_hidden_dim, memorization_pairs, parse_predictions, predictions_to_jsonl, run_ablation, subsample_indices,
    train_with, write_run, BenchOptions, ExperimentSpec, Prediction, SynthOptions, TrainOptions, EVAL_BATCH,
};
use sema::metrics::{evaluate, per_sentence_tsv, MetricOptions, SynonymTable};
use sema::models::{records_to_jsonl, Channel, ChannelMask, Family, ModelConfig, Seq2Seq};
use sema::semantics::{
    build_vocabularies, pairs_to_jsonl, pairs_to_tsv, parse_annotated, parse_pairs, parse_tsv, read_pairs,
    stub_annotate, AnnotatedSentence, AnnotationLexicon, ParaphrasePair, WordVectors,
};

use crate::args::*;
use crate::{CliError, CliResult};

pub fn run(cli: Cli) -> CliResult<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Train(a) => train(a, seed.unwrap_or(0)),
        Command::Generate(a) => generate(a, seed),
        Command::Evaluate(a) => evaluate_cmd(a, seed),
        Command::Ablate(a) => ablate(a, seed.unwrap_or(0)),
        Command::Bench(a) => bench(a, seed.unwrap_or(0)),
        Command::Synth(a) => synth(a, seed.unwrap_or(0)),
        Command::EvalPack(a) => eval_pack(a, seed.unwrap_or(0)),
        Command::DumpAttention(a) => dump_attention(a, seed),
        Command::Convert(a) => convert(a),
    }
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| file_error(dir, e))?;
    }
    fs::write(path, text).map_err(|e| file_error(path, e))
}

fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| file_error(path, e))
}

fn file_error(path: &Path, source: std::io::Error) -> CliError {
    sema::Error::File {
        path: path.to_path_buf(),
        source,
    }
    .into()
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| file_error(dir, e))
}

impl ModelArgs {
    fn resolve(&self, seed: u64) -> CliResult<ModelConfig> {
        let file = match &self.config {
            Some(p) => Some(read_file(p)?),
            None => None,
        };
        let set_family = self
            .overrides
            .iter()
            .filter_map(|kv| kv.split_once('='))
            .filter(|(k, _)| k.trim() == "family")
            .map(|(_, v)| v)
            .next_back();
        let family: Family = match (self.family.as_deref().or(set_family), &file) {
            (Some(f), _) => f.parse()?,
            (None, Some(text)) => ModelConfig::parse(text)?.family,
            (None, None) => Family::Transformer,
        };
        let mut cfg = ModelConfig::for_family(family);
        if let Some(text) = &file {
            cfg.apply_text(text)?;
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k, v)?;
        }
        cfg.family = family;
        if let Some(v) = self.model_dim {
            cfg.model_dim = v;
        }
        if let Some(v) = self.hidden_dim {
            cfg.hidden_dim = v;
        }
        if let Some(v) = self.blocks {
            cfg.num_blocks = v;
        }
        if let Some(v) = self.heads {
            cfg.num_heads = v;
        }
        if let Some(v) = self.dropout {
            cfg.dropout = v;
        }
        if let Some(m) = &self.mask {
            cfg.channel_mask = m.parse()?;
        }
        if let Some(v) = self.lr {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.max_len {
            cfg.max_len = v;
        }
        cfg.seed = seed;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl TrainOpts {
    fn options(&self) -> TrainOptions {
        TrainOptions {
            steps: self.steps,
            batch_size: self.batch,
            lowercase: self.lowercase,
        }
    }
}

fn train(a: TrainArgs, seed: u64) -> CliResult<()> {
    let mut cfg = a.model.resolve(seed)?;
    cfg.total_steps = a.train.steps;
    let mut pairs = read_pairs(&a.data)?;
    if pairs.is_empty() {
        return Err(sema::Error::Contract(format!("{} holds no pairs", a.data.display())).into());
    }
    if let Some(k) = a.train.subsample {
        pairs = subsample_indices(pairs.len(), k, seed)?.into_iter().map(|i| pairs[i].clone()).collect();
    }
    let cap = if a.train.no_truncate { usize::MAX } else { cfg.max_len };
    let pairs: Vec<ParaphrasePair> = pairs.iter().map(|p| p.prepared(cap, a.train.lowercase)).collect();
    let vocabs = build_vocabularies(&pairs, a.train.min_count)?;
    let mut model = Seq2Seq::new(cfg, vocabs)?;
    if let Some(path) = &a.embeddings {
        let vectors = WordVectors::load(path, |w| model.vocabs.tokens.contains(w))?;
        let set = model.load_embeddings(&vectors)?;
        eprintln!("initialized {set} of {} token embeddings from {}", model.vocabs.tokens.len(), path.display());
    }
    let mut log = String::from("step\tce\n");
    let every = (a.train.steps / 10).max(1);
    let (model, _) = train_with(model, &pairs, &a.train.options(), seed, |step, ce| {
        writeln!(log, "{step}\t{ce:.6}").expect("writing to a String");
        if (step + 1) % every == 0 {
            eprintln!("step {}: ce {ce:.4}", step + 1);
        }
    })?;
    model.save(&a.out)?;
    write_file(&a.out.join("train.log"), &log)?;
    println!("{}", a.out.display());
    Ok(())
}

/// Sources of a JSON-lines file whose lines are either pairs or bare
/// annotated sentences.
fn read_sources(path: &Path) -> CliResult<Vec<(AnnotatedSentence, Option<AnnotatedSentence>)>> {
    let text = read_file(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match ParaphrasePair::parse(line) {
            Ok(p) => out.push((p.src, Some(p.tgt))),
            Err(pair_err) => match parse_annotated(line) {
                Ok(s) => out.push((s, None)),
                Err(_) => {
                    return Err(sema::Error::AtLine {
                        line: i + 1,
                        source: Box::new(pair_err),
                    }
                    .into())
                }
            },
        }
    }
    Ok(out)
}

fn load_model(dir: &Path, seed: Option<u64>) -> CliResult<Seq2Seq> {
    let mut model = Seq2Seq::load(dir)?;
    if let Some(s) = seed {
        model.config.seed = s;
    }
    Ok(model)
}

fn generate(a: GenerateArgs, seed: Option<u64>) -> CliResult<()> {
    let model = load_model(&a.model, seed)?;
    let items = if a.text {
        read_file(&a.input)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| (AnnotatedSentence::from_text(l), None))
            .collect()
    } else {
        read_sources(&a.input)?
    };
    let max_out = a.max_out.unwrap_or(model.config.max_len + 1);
    let mut preds = Vec::with_capacity(items.len());
    for (c, chunk) in items.chunks(EVAL_BATCH).enumerate() {
        let srcs: Vec<AnnotatedSentence> = chunk.iter().map(|(s, _)| s.clone()).collect();
        for (k, d) in model.greedy_decode_batch(&srcs, max_out)?.into_iter().enumerate() {
            let (src, tgt) = &chunk[k];
            println!("{}", d.tokens.join(" "));
            preds.push(Prediction {
                index: c * EVAL_BATCH + k,
                source: src.text(),
                reference: tgt.as_ref().map(|t| t.text()).unwrap_or_default(),
                hypothesis: d.tokens.join(" "),
                truncated: d.truncated,
                image: None,
            });
        }
    }
    write_file(&a.out, &predictions_to_jsonl(&preds))
}

fn metric_options(synonyms: &Option<PathBuf>) -> CliResult<MetricOptions> {
    let mut opts = MetricOptions::new();
    if let Some(p) = synonyms {
        opts.synonyms = SynonymTable::load(p)?;
    }
    Ok(opts)
}

fn evaluate_cmd(a: EvaluateArgs, seed: Option<u64>) -> CliResult<()> {
    let opts = metric_options(&a.synonyms)?;
    if let Some(hyp) = &a.hyp {
        let tokenize = |text: String| -> Vec<Vec<String>> {
            text.lines()
                .map(|l| {
                    let l = if a.lowercase { l.to_lowercase() } else { l.to_string() };
                    l.split_whitespace().map(str::to_string).collect()
                })
                .collect()
        };
        let hyps = tokenize(read_file(hyp)?);
        let mut refs: Vec<Vec<Vec<String>>> = vec![Vec::new(); hyps.len()];
        for path in &a.refs {
            let lines = tokenize(read_file(path)?);
            if lines.len() != hyps.len() {
                return Err(sema::Error::Contract(format!(
                    "{} has {} lines but the hypotheses have {}",
                    path.display(),
                    lines.len(),
                    hyps.len()
                ))
                .into());
            }
            for (r, l) in refs.iter_mut().zip(lines) {
                r.push(l);
            }
        }
        let report = evaluate(&hyps, &refs, &opts)?;
        print!("{}", report.to_tsv());
        if let Some(out) = &a.out {
            create_dir(out)?;
            write_file(&out.join("metrics.tsv"), &report.to_tsv())?;
            if a.per_sentence {
                write_file(&out.join("per_sentence.tsv"), &per_sentence_tsv(&hyps, &refs, &opts)?)?;
            }
        }
        return Ok(());
    }
    let (Some(dir), Some(data)) = (&a.model, &a.data) else {
        return Err(CliError::Usage("evaluate needs --hyp/--ref or --model/--data".into()));
    };
    let mut model = load_model(dir, seed)?;
    if let Some(m) = a.eval_max_len {
        model.config.max_len = m;
    }
    let test: Vec<ParaphrasePair> = read_pairs(data)?
        .iter()
        .map(|p| p.prepared(usize::MAX, a.lowercase))
        .collect();
    let test = match a.min_eval_len {
        Some(m) => filter_min_len(&test, m),
        None => test,
    };
    if test.is_empty() {
        return Err(sema::Error::Config("no evaluation pairs survive the length filter".into()).into());
    }
    let ev = evaluate_model(&model, &test, &opts)?;
    let mut table = ev.report.to_tsv();
    writeln!(table, "exact_match\t{:.6}", ev.exact_match).expect("writing to a String");
    print!("{table}");
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_run(out, &model, &ev, &test, a.attention_samples, seed.unwrap_or(model.config.seed))?;
    }
    Ok(())
}

fn ablate(a: AblateArgs, seed: u64) -> CliResult<()> {
    let cfg = a.model.resolve(seed)?;
    let mut spec = ExperimentSpec::new(&a.data, &a.test, &a.out);
    spec.max_len = cfg.max_len;
    spec.truncate_train = !a.train.no_truncate;
    spec.min_eval_len = a.min_eval_len;
    spec.subsample_size = a.train.subsample;
    spec.train = a.train.options();
    spec.min_count = a.train.min_count;
    spec.attention_samples = a.attention_samples;
    spec.seed = seed;
    spec.ablation = a.masks.iter().map(|m| m.parse()).collect::<Result<Vec<ChannelMask>, _>>()?;
    spec.configs = vec![ModelConfig {
        total_steps: a.train.steps,
        ..cfg
    }];
    let rows = run_ablation(&spec)?;
    print!("{}", sema::experiment::results_table(&rows));
    Ok(())
}

fn bench(a: BenchArgs, seed: u64) -> CliResult<()> {
    let families = a.families.iter().map(|f| f.parse()).collect::<Result<Vec<Family>, _>>()?;
    if families.is_empty() {
        return Err(CliError::Usage("--families is empty".into()));
    }
    let pairs = match &a.data {
        Some(p) => read_pairs(p)?,
        None => memorization_pairs(256, 15, seed),
    };
    let vocabs = build_vocabularies(&pairs, 1)?;
    let sources: Vec<AnnotatedSentence> = pairs.into_iter().map(|p| p.src).collect();
    let base = a.model.resolve(seed)?;
    let mut configs: Vec<ModelConfig> = Vec::new();
    for &family in &families {
        let mut c = ModelArgs {
            family: Some(family.to_string()),
            ..a.model.clone()
        }
        .resolve(seed)?;
        c.max_len = base.max_len;
        configs.push(c);
    }
    let reference = configs.iter().find(|c| matches!(c.family, Family::Transformer | Family::TransformerPb));
    if let (Some(t), false) = (reference.cloned(), a.no_match) {
        let target = Seq2Seq::new(t, vocabs.clone())?.describe().num_params;
        for c in configs.iter_mut() {
            if matches!(c.family, Family::SrLstm | Family::SrLstmPb | Family::NvLstm) {
                c.hidden_dim = match_hidden_dim(c, &vocabs, target)?.0;
            }
        }
    }
    let opts = BenchOptions {
        batch_size: a.batch,
        steps: a.steps,
        warmup: a.warmup,
        max_out: a.max_out,
    };
    let rows = benchmark_throughput(&configs, &vocabs, &sources, &opts)?;
    let mut table = String::from("family\tparams\thidden_dim\ttokens_per_sec\n");
    for (r, c) in rows.iter().zip(&configs) {
        writeln!(table, "{}\t{}\t{}\t{:.1}", r.family, r.num_params, c.hidden_dim, r.tokens_per_sec)
            .expect("writing to a String");
    }
    print!("{table}");
    if let Some(first) = rows.first() {
        for r in &rows[1..] {
            eprintln!("{} / {}: {:.3}", first.family, r.family, first.tokens_per_sec / r.tokens_per_sec);
        }
    }
    if let Some(out) = &a.out {
        write_file(out, &table)?;
    }
    Ok(())
}

fn synth(a: SynthArgs, seed: u64) -> CliResult<()> {
    let corpus = make_synthetic_corpus(&SynthOptions {
        size: a.size,
        seed,
        ambiguity_rate: a.ambiguity_rate,
    })?;
    write_file(&a.out, &pairs_to_jsonl(&corpus.pairs))?;
    println!("pairs\t{}", corpus.pairs.len());
    println!("ambiguity_rate\t{}", corpus.ambiguity_rate);
    for (name, frames, roles) in [
        ("none", false, false),
        ("frame_only", true, false),
        ("role_only", false, true),
        ("both", true, true),
    ] {
        println!("bayes_{name}\t{:.4}", blind_bayes_accuracy(&corpus.pairs, frames, roles));
    }
    Ok(())
}

fn eval_pack(a: EvalPackArgs, seed: u64) -> CliResult<()> {
    let preds = parse_predictions(&read_file(&a.predictions)?)?;
    let pack = export_eval_pack(&preds, a.mode.parse()?, a.sample, seed)?;
    create_dir(&a.out)?;
    write_file(&a.out.join("sheet.tsv"), &pack.sheet)?;
    write_file(&a.out.join("key.tsv"), &pack.key)
}

fn dump_attention(a: DumpArgs, seed: Option<u64>) -> CliResult<()> {
    let model = load_model(&a.model, seed)?;
    let multi = model.config.family.is_multi_encoder();
    let channels: Vec<Channel> = if a.channels.is_empty() {
        if multi {
            Channel::ALL.to_vec()
        } else {
            vec![Channel::Token]
        }
    } else {
        a.channels.iter().map(|c| c.parse()).collect::<Result<_, _>>()?
    };
    if !multi && channels.iter().any(|c| *c != Channel::Token) {
        return Err(CliError::Usage(format!(
            "{} has only a token channel; frame and role attention needs a *_pb model",
            model.config.family
        )));
    }
    let sentence = match (&a.sentence, &a.input) {
        (Some(text), _) => {
            let tokens: Vec<&str> = text.split_whitespace().collect();
            match &a.lexicon {
                Some(p) => stub_annotate(&AnnotationLexicon::load(p)?, &tokens),
                None => AnnotatedSentence::from_tokens(&tokens),
            }
        }
        (None, Some(path)) => {
            let items = read_sources(path)?;
            let n = items.len();
            items
                .into_iter()
                .nth(a.index)
                .ok_or_else(|| CliError::Usage(format!("--index {} but the input has {n} sentences", a.index)))?
                .0
        }
        (None, None) => return Err(CliError::Usage("dump-attention needs --sentence or --input".into())),
    };
    let decoded = model.greedy_decode(&sentence, model.config.max_len + 1)?;
    if decoded.trace.is_empty() {
        return Err(CliError::Usage(format!("{} has no decoder attention to dump", model.config.family)));
    }
    let records = decoded.trace.records(&channels)?;
    write_file(&a.out, &records_to_jsonl(&records))?;
    println!("{}", decoded.tokens.join(" "));
    Ok(())
}

fn format_of(explicit: &Option<String>, path: &Path) -> CliResult<&'static str> {
    let name = match explicit {
        Some(f) => f.clone(),
        None => path.extension().and_then(|e| e.to_str()).unwrap_or_default().to_string(),
    };
    match name.to_ascii_lowercase().as_str() {
        "tsv" => Ok("tsv"),
        "jsonl" | "json" => Ok("jsonl"),
        _ => Err(CliError::Usage(format!(
            "cannot tell the format of {}; pass --from/--to tsv|jsonl",
            path.display()
        ))),
    }
}

fn convert(a: ConvertArgs) -> CliResult<()> {
    let from = format_of(&a.from, &a.input)?;
    let to = format_of(&a.to, &a.out)?;
    let text = read_file(&a.input)?;
    let mut pairs = if from == "tsv" { parse_tsv(&text)? } else { parse_pairs(&text)? };
    if let Some(p) = &a.lexicon {
        let lex = AnnotationLexicon::load(p)?;
        for pair in &mut pairs {
            pair.src = stub_annotate(&lex, &pair.src.tokens);
            pair.tgt = stub_annotate(&lex, &pair.tgt.tokens);
        }
    }
    let out = if to == "tsv" { pairs_to_tsv(&pairs) } else { pairs_to_jsonl(&pairs) };
    write_file(&a.out, &out)
}
