use std::time::Instant;

use crate::error::{Error, Result};
use crate::models::{Family, ModelConfig, Seq2Seq};
use crate::semantics::{AnnotatedSentence, Vocabularies};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BenchOptions {
    pub batch_size: usize,
    /// Timed steps, each one batch decoded end to end.
    pub steps: usize,
    /// Untimed steps run first.
    pub warmup: usize,
    pub max_out: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            batch_size: 32,
            steps: 10,
            warmup: 2,
            max_out: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Throughput {
    pub family: Family,
    pub num_params: usize,
    /// Median of the per-step rates.
    pub tokens_per_sec: f64,
    pub step_rates: Vec<f64>,
    /// Tokens emitted over the timed steps.
    pub tokens: usize,
}

/// Greedy-decode throughput of freshly initialized models. Step `k` decodes
/// sources `k·batch .. (k+1)·batch` (cycling), so every config sees the same
/// inputs.
pub fn benchmark_throughput(
    configs: &[ModelConfig],
    vocabs: &Vocabularies,
    sources: &[AnnotatedSentence],
    opts: &BenchOptions,
) -> Result<Vec<Throughput>> {
    if opts.steps < 10 {
        return Err(Error::Config(format!("benchmark needs at least 10 timed steps, got {}", opts.steps)));
    }
    if sources.is_empty() || opts.batch_size == 0 {
        return Err(Error::Config("benchmark needs sources and a positive batch size".into()));
    }
    let batch = |k: usize| -> Vec<AnnotatedSentence> {
        (0..opts.batch_size)
            .map(|j| sources[(k * opts.batch_size + j) % sources.len()].clone())
            .collect()
    };
    let mut out = Vec::with_capacity(configs.len());
    for cfg in configs {
        let model = Seq2Seq::new(cfg.clone(), vocabs.clone())?;
        for k in 0..opts.warmup {
            model.greedy_decode_batch(&batch(k), opts.max_out)?;
        }
        let mut rates = Vec::with_capacity(opts.steps);
        let mut tokens = 0;
        for k in 0..opts.steps {
            let srcs = batch(opts.warmup + k);
            let t0 = Instant::now();
            let decoded = model.greedy_decode_batch(&srcs, opts.max_out)?;
            let secs = t0.elapsed().as_secs_f64();
            let n: usize = decoded.iter().map(|d| d.ids.len()).sum();
            tokens += n;
            rates.push(n as f64 / secs.max(1e-9));
        }
        out.push(Throughput {
            family: cfg.family,
            num_params: model.describe().num_params,
            tokens_per_sec: median(&rates),
            step_rates: rates,
            tokens,
        });
    }
    Ok(out)
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// The `hidden_dim` (at most 4096) whose parameter count under `template` is
/// closest to `target`, with that count.
pub fn match_hidden_dim(template: &ModelConfig, vocabs: &Vocabularies, target: usize) -> Result<(usize, usize)> {
    let count = |h: usize| -> Result<usize> {
        let mut c = template.clone();
        c.hidden_dim = h;
        Ok(Seq2Seq::new(c, vocabs.clone())?.describe().num_params)
    };
    let mut hi = 8usize;
    while hi < 4096 && count(hi)? < target {
        hi *= 2;
    }
    let mut lo = 1usize;
    while lo < hi {
        let mid = (lo + hi) / 2;
        if count(mid)? < target {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    let mut best = (lo, count(lo)?);
    if lo > 1 {
        let below = count(lo - 1)?;
        if target.abs_diff(below) < target.abs_diff(best.1) {
            best = (lo - 1, below);
        }
    }
    Ok(best)
}
