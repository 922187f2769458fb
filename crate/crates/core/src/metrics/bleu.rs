use std::collections::HashMap;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BleuOptions {
    pub max_n: usize,
    /// Add-one smoothing of the n > 1 precisions.
    pub smooth: bool,
}

impl Default for BleuOptions {
    fn default() -> Self {
        Self {
            max_n: 4,
            smooth: false,
        }
    }
}

/// Clipped n-gram counts and lengths, additive over sentences.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts
                .entry(w.iter().map(AsRef::as_ref).collect())
                .or_insert(0) += 1;
        }
    }
    counts
}

impl BleuStats {
    pub fn sentence<S: AsRef<str>, R: AsRef<[S]>>(hyp: &[S], refs: &[R], max_n: usize) -> Result<Self> {
        if refs.is_empty() {
            return Err(Error::contract("BLEU needs at least one reference per hypothesis"));
        }
        let mut stats = Self {
            matches: vec![0; max_n],
            totals: vec![0; max_n],
            hyp_len: hyp.len(),
            ref_len: closest_ref_len(hyp.len(), refs.iter().map(|r| r.as_ref().len())),
        };
        for n in 1..=max_n {
            let hyp_counts = ngrams(hyp, n);
            let mut max_ref: HashMap<Vec<&str>, usize> = HashMap::new();
            for r in refs {
                for (g, c) in ngrams(r.as_ref(), n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            stats.totals[n - 1] = hyp.len().saturating_sub(n - 1);
            stats.matches[n - 1] = hyp_counts
                .iter()
                .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
                .sum();
        }
        Ok(stats)
    }

    pub fn add(&mut self, other: &Self) {
        if self.matches.is_empty() {
            self.matches = vec![0; other.matches.len()];
            self.totals = vec![0; other.totals.len()];
        }
        for (a, b) in self.matches.iter_mut().zip(&other.matches) {
            *a += b;
        }
        for (a, b) in self.totals.iter_mut().zip(&other.totals) {
            *a += b;
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    /// Clipped precision of order `n` (1-based), or `None` if there are no n-grams.
    pub fn precision(&self, n: usize) -> Option<f64> {
        let t = self.totals[n - 1];
        (t > 0).then(|| self.matches[n - 1] as f64 / t as f64)
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len > self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        }
    }

    /// BLEU × 100 from the accumulated statistics.
    pub fn score(&self, smooth: bool) -> f64 {
        let max_n = self.matches.len();
        if self.hyp_len == 0 || max_n == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..max_n {
            let (m, t) = (self.matches[n] as f64, self.totals[n] as f64);
            let p = if smooth && n > 0 { (m + 1.0) / (t + 1.0) } else if t > 0.0 { m / t } else { 0.0 };
            if p == 0.0 {
                return 0.0;
            }
            log_sum += p.ln();
        }
        100.0 * self.brevity_penalty() * (log_sum / max_n as f64).exp()
    }
}

/// Reference length closest to `hyp_len`; ties go to the shorter reference.
fn closest_ref_len(hyp_len: usize, lens: impl Iterator<Item = usize>) -> usize {
    lens.min_by_key(|&r| (r.abs_diff(hyp_len), r)).unwrap_or(0)
}

/// Corpus BLEU × 100; `refs[i]` is the reference set of `hyps[i]`.
pub fn bleu<S, R, RS>(hyps: &[R], refs: &[RS], opts: BleuOptions) -> Result<f64>
where
    S: AsRef<str>,
    R: AsRef<[S]>,
    RS: AsRef<[R]>,
{
    Ok(corpus_stats(hyps, refs, opts.max_n)?.score(opts.smooth))
}

pub fn corpus_stats<S, R, RS>(hyps: &[R], refs: &[RS], max_n: usize) -> Result<BleuStats>
where
    S: AsRef<str>,
    R: AsRef<[S]>,
    RS: AsRef<[R]>,
{
    if hyps.is_empty() {
        return Err(Error::contract("BLEU of an empty hypothesis list"));
    }
    if hyps.len() != refs.len() {
        return Err(Error::Contract(format!(
            "{} hypotheses but {} reference sets",
            hyps.len(),
            refs.len()
        )));
    }
    let mut total = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total.add(&BleuStats::sentence(h.as_ref(), r.as_ref(), max_n)?);
    }
    Ok(total)
}

/// Single-pair BLEU × 100.
pub fn sentence_bleu<S: AsRef<str>, R: AsRef<[S]>>(hyp: &[S], refs: &[R], opts: BleuOptions) -> Result<f64> {
    Ok(BleuStats::sentence(hyp, refs, opts.max_n)?.score(opts.smooth))
}
