//! Synthetic role-swap corpus: whether a target can be recovered depends on
//! the frame and role channels, not on the surface tokens alone.

use std::collections::HashMap;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::semantics::{AnnotatedSentence, ParaphrasePair, NULL_LABEL};
use crate::tensor::rng_from_seed;

const NOUNS: [(&str, &str); 8] = [
    ("dog", "animal"),
    ("cat", "animal"),
    ("horse", "animal"),
    ("bird", "animal"),
    ("man", "person"),
    ("woman", "person"),
    ("boy", "person"),
    ("girl", "person"),
];

/// Verbs with two senses; only the frame label tells them apart.
const HOMOGRAPHS: [(&str, [(&str, &str); 2]); 4] = [
    ("bank", [("/pb/bank-01", "trusted"), ("/pb/bank-02", "tilted")]),
    ("fire", [("/pb/fire-01", "dismissed"), ("/pb/fire-02", "shot")]),
    ("press", [("/pb/press-01", "pushed"), ("/pb/press-02", "urged")]),
    ("charge", [("/pb/charge-01", "billed"), ("/pb/charge-02", "attacked")]),
];

const PLAIN_VERBS: [(&str, &str, &str); 4] = [
    ("chase", "/pb/chase-01", "chased"),
    ("feed", "/pb/feed-01", "fed"),
    ("watch", "/pb/watch-01", "watched"),
    ("follow", "/pb/follow-01", "followed"),
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthOptions {
    pub size: usize,
    pub seed: u64,
    /// Error rate of a Bayes-optimal predictor that sees tokens and frames
    /// but not roles (and, symmetrically, tokens and roles but not frames).
    pub ambiguity_rate: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            size: 2000,
            seed: 0,
            ambiguity_rate: 0.5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub pairs: Vec<ParaphrasePair>,
    /// The planted rate the corpus was generated with.
    pub ambiguity_rate: f64,
    /// Pairs whose agent is only marked by the role channel.
    pub role_ambiguous: usize,
    /// Pairs whose verb sense is only marked by the frame channel.
    pub frame_ambiguous: usize,
}

/// Generates `size` pairs. A pair uses the order-free template
/// `the N1 and the N2 V` with probability `2·rate` (agent chosen 50/50,
/// marked only by `arg0`), otherwise `the N1 V the N2` with the agent first.
/// Independently, with probability `2·rate` the verb is a homograph whose
/// sense is marked only by its frame. Targets are passives:
/// `the PATIENT was SENSE by the AGENT`.
pub fn make_synthetic_corpus(opts: &SynthOptions) -> Result<SyntheticCorpus> {
    if opts.size < 100 {
        return Err(Error::Config(format!("synthetic corpus size {} is below 100", opts.size)));
    }
    if !(0.0..=0.5).contains(&opts.ambiguity_rate) {
        return Err(Error::Config(format!(
            "ambiguity_rate {} outside [0, 0.5]",
            opts.ambiguity_rate
        )));
    }
    let mut rng = rng_from_seed(opts.seed);
    let p = 2.0 * opts.ambiguity_rate;
    let mut pairs = Vec::with_capacity(opts.size);
    let (mut role_amb, mut frame_amb) = (0, 0);
    for _ in 0..opts.size {
        let a = NOUNS.choose(&mut rng).expect("nouns");
        let b = loop {
            let b = NOUNS.choose(&mut rng).expect("nouns");
            if b.0 != a.0 {
                break b;
            }
        };
        let order_free = rng.random::<f64>() < p;
        let homograph = rng.random::<f64>() < p;
        let (verb, frame, participle) = if homograph {
            let (v, senses) = HOMOGRAPHS.choose(&mut rng).expect("homographs");
            let (f, part) = senses[usize::from(rng.random::<bool>())];
            (*v, f, part)
        } else {
            let (v, f, part) = PLAIN_VERBS.choose(&mut rng).expect("verbs");
            (*v, *f, *part)
        };
        let (src, agent, patient) = if order_free {
            let first_is_agent = rng.random::<bool>();
            let (r1, r2) = if first_is_agent { ("arg0", "arg1") } else { ("arg1", "arg0") };
            let src = build(
                &["the", a.0, "and", "the", b.0, verb],
                &[NULL_LABEL, a.1, NULL_LABEL, NULL_LABEL, b.1, frame],
                &[NULL_LABEL, r1, NULL_LABEL, NULL_LABEL, r2, NULL_LABEL],
            );
            if first_is_agent { (src, a.0, b.0) } else { (src, b.0, a.0) }
        } else {
            let src = build(
                &["the", a.0, verb, "the", b.0],
                &[NULL_LABEL, a.1, frame, NULL_LABEL, b.1],
                &[NULL_LABEL, "arg0", NULL_LABEL, NULL_LABEL, "arg1"],
            );
            (src, a.0, b.0)
        };
        role_amb += usize::from(order_free);
        frame_amb += usize::from(homograph);
        let tgt = AnnotatedSentence::from_tokens(&["the", patient, "was", participle, "by", "the", agent]);
        pairs.push(ParaphrasePair { src, tgt });
    }
    Ok(SyntheticCorpus {
        pairs,
        ambiguity_rate: opts.ambiguity_rate,
        role_ambiguous: role_amb,
        frame_ambiguous: frame_amb,
    })
}

fn build(tokens: &[&str], frames: &[&str], roles: &[&str]) -> AnnotatedSentence {
    let own = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
    AnnotatedSentence::new(own(tokens), own(frames), own(roles)).expect("templates are aligned")
}

/// The target a reader of all three channels produces; `None` if `src` is
/// not a synthetic template.
pub fn synthetic_reference(src: &AnnotatedSentence) -> Option<Vec<String>> {
    let participle = |verb: &str, frame: &str| -> Option<&'static str> {
        if let Some((_, _, part)) = PLAIN_VERBS.iter().find(|(v, f, _)| *v == verb && *f == frame) {
            return Some(part);
        }
        HOMOGRAPHS
            .iter()
            .find(|(v, _)| *v == verb)
            .and_then(|(_, senses)| senses.iter().find(|(f, _)| *f == frame))
            .map(|(_, p)| *p)
    };
    let t = &src.tokens;
    let (agent, patient, part) = match t.len() {
        6 => {
            let part = participle(&t[5], &src.frames[5])?;
            match (src.roles[1].as_str(), src.roles[4].as_str()) {
                ("arg0", "arg1") => (&t[1], &t[4], part),
                ("arg1", "arg0") => (&t[4], &t[1], part),
                _ => return None,
            }
        }
        5 => (&t[1], &t[4], participle(&t[2], &src.frames[2])?),
        _ => return None,
    };
    Some(
        ["the", patient.as_str(), "was", part, "by", "the", agent.as_str()]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    )
}

/// Exact-match accuracy of the Bayes-optimal predictor that sees only the
/// selected channels, estimated on `pairs` itself (so biased upward when
/// groups of identical inputs are small).
pub fn blind_bayes_accuracy(pairs: &[ParaphrasePair], frames: bool, roles: bool) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let mut groups: HashMap<(Vec<&str>, Vec<&str>, Vec<&str>), HashMap<Vec<&str>, usize>> = HashMap::new();
    for p in pairs {
        let key = (
            view(&p.src.tokens, true),
            view(&p.src.frames, frames),
            view(&p.src.roles, roles),
        );
        let tgt: Vec<&str> = p.tgt.tokens.iter().map(String::as_str).collect();
        *groups.entry(key).or_default().entry(tgt).or_default() += 1;
    }
    let best: usize = groups.values().map(|g| g.values().copied().max().unwrap_or(0)).sum();
    best as f64 / pairs.len() as f64
}

fn view(v: &[String], on: bool) -> Vec<&str> {
    if on { v.iter().map(String::as_str).collect() } else { Vec::new() }
}

/// `n` distinct pairs for memorization runs: sources of 4 to `max_len`
/// tokens over a 30-word vocabulary; the target reverses the source and
/// rewrites every word through a fixed substitution.
pub fn memorization_pairs(n: usize, max_len: usize, seed: u64) -> Vec<ParaphrasePair> {
    let words: Vec<String> = (0..30).map(|i| format!("w{i:02}")).collect();
    let mut rng = rng_from_seed(seed);
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n);
    let hi = max_len.max(4);
    while out.len() < n {
        let len = rng.random_range(4..=hi);
        let src: Vec<usize> = (0..len).map(|_| rng.random_range(0..words.len())).collect();
        if !seen.insert(src.clone()) {
            continue;
        }
        let tgt: Vec<&str> = src.iter().rev().map(|&i| words[(i * 7 + 3) % words.len()].as_str()).collect();
        let src: Vec<&str> = src.iter().map(|&i| words[i].as_str()).collect();
        out.push(ParaphrasePair {
            src: AnnotatedSentence::from_tokens(&src),
            tgt: AnnotatedSentence::from_tokens(&tgt),
        });
    }
    out
}
