use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Upper bound on alignment search nodes per stage; past it the best
/// alignment found so far is used.
const SEARCH_BUDGET: usize = 200_000;

/// Strips common English inflectional suffixes.
pub fn suffix_stem(word: &str) -> String {
    let w = word.to_lowercase();
    let n = w.chars().count();
    let rules: [(&str, &str, usize); 5] = [
        ("sses", "ss", 5),
        ("ies", "y", 5),
        ("ing", "", 6),
        ("ed", "", 5),
        ("s", "", 4),
    ];
    for (suffix, repl, min_len) in rules {
        if n >= min_len && w.ends_with(suffix) && !(suffix == "s" && w.ends_with("ss")) {
            return format!("{}{repl}", &w[..w.len() - suffix.len()]);
        }
    }
    w
}

/// Symmetric synonym sets.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SynonymTable {
    sets: HashMap<String, BTreeSet<String>>,
}

impl SynonymTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Makes every word of `group` a synonym of every other.
    pub fn add_group<S: AsRef<str>>(&mut self, group: &[S]) {
        for a in group {
            for b in group {
                if a.as_ref() != b.as_ref() {
                    self.sets
                        .entry(a.as_ref().to_string())
                        .or_default()
                        .insert(b.as_ref().to_string());
                }
            }
        }
    }

    /// One whitespace-separated synonym group per line.
    pub fn parse(text: &str) -> Self {
        let mut t = Self::new();
        for line in text.lines() {
            let group: Vec<&str> = line.split_whitespace().collect();
            t.add_group(&group);
        }
        t
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(Self::parse(
            &fs::read_to_string(path).map_err(|e| Error::file(path, e))?,
        ))
    }

    pub fn are_synonyms(&self, a: &str, b: &str) -> bool {
        self.sets.get(a).is_some_and(|s| s.contains(b))
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

/// Matching statistics of one hypothesis/reference alignment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MeteorStats {
    pub matches: usize,
    pub chunks: usize,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl MeteorStats {
    pub fn add(&mut self, o: &Self) {
        self.matches += o.matches;
        self.chunks += o.chunks;
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }

    /// `Fmean · (1 − 0.5·(chunks/matches)³) × 100`, with
    /// `Fmean = 10PR / (R + 9P)`.
    pub fn score(&self) -> f64 {
        if self.matches == 0 {
            return 0.0;
        }
        let m = self.matches as f64;
        let p = m / self.hyp_len as f64;
        let r = m / self.ref_len as f64;
        let fmean = 10.0 * p * r / (r + 9.0 * p);
        let penalty = 0.5 * (self.chunks as f64 / m).powi(3);
        100.0 * fmean * (1.0 - penalty)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    Exact,
    Stem,
    Synonym,
}

/// Word alignment: `hyp_to_ref[i]` is the reference position matched to
/// hypothesis position `i`.
pub fn align<S: AsRef<str>>(hyp: &[S], reference: &[S], synonyms: &SynonymTable) -> Vec<Option<usize>> {
    let hyp: Vec<&str> = hyp.iter().map(AsRef::as_ref).collect();
    let reference: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let hyp_stems: Vec<String> = hyp.iter().map(|w| suffix_stem(w)).collect();
    let ref_stems: Vec<String> = reference.iter().map(|w| suffix_stem(w)).collect();
    let mut hyp_to_ref: Vec<Option<usize>> = vec![None; hyp.len()];
    let mut ref_used = vec![false; reference.len()];
    for stage in [Stage::Exact, Stage::Stem, Stage::Synonym] {
        let candidates: Vec<Vec<usize>> = (0..hyp.len())
            .map(|i| {
                if hyp_to_ref[i].is_some() {
                    return Vec::new();
                }
                (0..reference.len())
                    .filter(|&j| !ref_used[j])
                    .filter(|&j| match stage {
                        Stage::Exact => hyp[i] == reference[j],
                        Stage::Stem => hyp_stems[i] == ref_stems[j],
                        Stage::Synonym => synonyms.are_synonyms(hyp[i], reference[j]),
                    })
                    .collect()
            })
            .collect();
        if candidates.iter().all(Vec::is_empty) {
            continue;
        }
        let fixed: Vec<(usize, usize)> = hyp_to_ref
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| (i, j)))
            .collect();
        let best = best_matching(&candidates, &fixed, reference.len());
        for (i, j) in best.into_iter().enumerate() {
            if let Some(j) = j {
                hyp_to_ref[i] = Some(j);
                ref_used[j] = true;
            }
        }
    }
    hyp_to_ref
}

fn crosses((i1, j1): (usize, usize), (i2, j2): (usize, usize)) -> bool {
    (i1 < i2 && j1 > j2) || (i1 > i2 && j1 < j2)
}

struct Search<'a> {
    candidates: &'a [Vec<usize>],
    fixed: &'a [(usize, usize)],
    /// Hypothesis positions at or after `i` that have any candidate.
    remaining: Vec<usize>,
    used: Vec<bool>,
    current: Vec<Option<usize>>,
    best: Vec<Option<usize>>,
    best_key: (usize, usize),
    nodes: usize,
}

impl Search<'_> {
    fn run(&mut self, i: usize, matched: usize, crossings: usize) {
        self.nodes += 1;
        if i == self.candidates.len() {
            let better = matched > self.best_key.0
                || (matched == self.best_key.0 && crossings < self.best_key.1);
            if better {
                self.best_key = (matched, crossings);
                self.best.clone_from(&self.current);
            }
            return;
        }
        let potential = matched + self.remaining[i];
        if potential < self.best_key.0
            || (potential == self.best_key.0 && crossings >= self.best_key.1)
            || self.nodes > SEARCH_BUDGET
        {
            return;
        }
        for k in 0..self.candidates[i].len() {
            let j = self.candidates[i][k];
            if self.used[j] {
                continue;
            }
            let added = self
                .fixed
                .iter()
                .copied()
                .chain(
                    self.current[..i]
                        .iter()
                        .enumerate()
                        .filter_map(|(a, b)| b.map(|b| (a, b))),
                )
                .filter(|&p| crosses(p, (i, j)))
                .count();
            self.used[j] = true;
            self.current[i] = Some(j);
            self.run(i + 1, matched + 1, crossings + added);
            self.current[i] = None;
            self.used[j] = false;
        }
        self.run(i + 1, matched, crossings);
    }
}

/// Maximum-cardinality matching with the fewest crossings (counting crossings
/// against `fixed` too). Ties keep the first alignment in depth-first order,
/// which tries reference positions ascending before leaving a word unmatched.
fn best_matching(candidates: &[Vec<usize>], fixed: &[(usize, usize)], ref_len: usize) -> Vec<Option<usize>> {
    let n = candidates.len();
    let mut remaining = vec![0; n + 1];
    for i in (0..n).rev() {
        remaining[i] = remaining[i + 1] + usize::from(!candidates[i].is_empty());
    }
    let mut s = Search {
        candidates,
        fixed,
        remaining,
        used: vec![false; ref_len],
        current: vec![None; n],
        best: vec![None; n],
        best_key: (0, usize::MAX),
        nodes: 0,
    };
    s.run(0, 0, 0);
    s.best
}

/// Number of runs of hypothesis-adjacent matches that are also reference-adjacent.
pub fn count_chunks(hyp_to_ref: &[Option<usize>]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<usize> = None;
    for m in hyp_to_ref {
        match (prev, m) {
            (Some(p), Some(j)) if *j == p + 1 => {}
            (_, Some(_)) => chunks += 1,
            _ => {}
        }
        prev = *m;
    }
    chunks
}

pub fn meteor_stats<S: AsRef<str>>(hyp: &[S], reference: &[S], synonyms: &SynonymTable) -> MeteorStats {
    let a = align(hyp, reference, synonyms);
    MeteorStats {
        matches: a.iter().flatten().count(),
        chunks: count_chunks(&a),
        hyp_len: hyp.len(),
        ref_len: reference.len(),
    }
}

/// Sentence METEOR × 100 against the best-scoring reference.
pub fn meteor<S: AsRef<str>, R: AsRef<[S]>>(hyp: &[S], refs: &[R], synonyms: &SynonymTable) -> f64 {
    best_reference_stats(hyp, refs, synonyms).score()
}

pub fn best_reference_stats<S: AsRef<str>, R: AsRef<[S]>>(
    hyp: &[S],
    refs: &[R],
    synonyms: &SynonymTable,
) -> MeteorStats {
    let mut best: Option<MeteorStats> = None;
    for r in refs {
        let s = meteor_stats(hyp, r.as_ref(), synonyms);
        if best.is_none_or(|b| s.score() > b.score()) {
            best = Some(s);
        }
    }
    best.unwrap_or(MeteorStats {
        hyp_len: hyp.len(),
        ..Default::default()
    })
}

/// Corpus METEOR × 100 from summed statistics.
pub fn corpus_meteor<S, R, RS>(hyps: &[R], refs: &[RS], synonyms: &SynonymTable) -> Result<f64>
where
    S: AsRef<str>,
    R: AsRef<[S]>,
    RS: AsRef<[R]>,
{
    if hyps.len() != refs.len() {
        return Err(Error::Contract(format!(
            "{} hypotheses but {} reference sets",
            hyps.len(),
            refs.len()
        )));
    }
    let mut total = MeteorStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total.add(&best_reference_stats(h.as_ref(), r.as_ref(), synonyms));
    }
    Ok(total.score())
}
