use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ParaphrasePair, NULL_LABEL};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// String ↔ id map with the four special entries at fixed ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::from_words(Vec::<String>::new()).expect("specials are distinct")
    }
}

impl Vocab {
    /// Builds from non-special words in id order (specials are prepended).
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for w in SPECIALS.iter().map(|s| s.to_string()).chain(words.into_iter().map(Into::into)) {
            if v.index.contains_key(&w) {
                return Err(Error::Contract(format!("duplicate vocabulary entry {w:?}")));
            }
            v.index.insert(w.clone(), v.words.len());
            v.words.push(w);
        }
        Ok(v)
    }

    /// Words with count ≥ `min_count`, most frequent first, ties alphabetical.
    /// Words in `always` are kept regardless of count.
    pub fn from_counts(counts: &HashMap<String, usize>, min_count: usize, always: &[&str]) -> Self {
        let mut kept: Vec<(String, usize)> = counts
            .iter()
            .filter(|(w, &c)| c >= min_count || always.contains(&w.as_str()))
            .map(|(w, &c)| (w.clone(), c))
            .collect();
        for a in always {
            if !counts.contains_key(*a) {
                kept.push((a.to_string(), 0));
            }
        }
        kept.retain(|(w, _)| !SPECIALS.contains(&w.as_str()));
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_words(kept.into_iter().map(|(w, _)| w)).expect("counts keys are distinct")
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    /// Id of `word`, or [`UNK`].
    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> &str {
        self.words.get(id).map_or(SPECIALS[UNK], String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }

    /// Words for `ids`, stopping at the first EOS and skipping PAD/BOS.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != PAD && i != BOS)
            .map(|&i| self.word(i).to_string())
            .collect()
    }

    /// One word per line, in id order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for w in &self.words {
            s.push_str(w);
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let words: Vec<&str> = text.lines().collect();
        if words.len() < SPECIALS.len() || words[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Parse {
                offset: 0,
                message: "vocabulary must start with <pad> <unk> <bos> <eos>".into(),
            });
        }
        Self::from_words(words[SPECIALS.len()..].iter().copied())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::file(path, e))?)
    }

    /// Hex SHA-256 of [`Vocab::to_text`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

/// Token, frame and role vocabularies shared by every model of an experiment.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabularies {
    pub tokens: Vocab,
    pub frames: Vocab,
    pub roles: Vocab,
}

/// Counts both sides of every pair. `min_count` applies to tokens only; every
/// frame and role label seen is kept, and `O` is always present.
pub fn build_vocabularies(pairs: &[ParaphrasePair], min_count: usize) -> Result<Vocabularies> {
    if pairs.is_empty() {
        return Err(Error::contract("cannot build vocabularies from an empty corpus"));
    }
    let mut tok: HashMap<String, usize> = HashMap::new();
    let mut fr: HashMap<String, usize> = HashMap::from([(NULL_LABEL.to_string(), 0)]);
    let mut ro: HashMap<String, usize> = HashMap::from([(NULL_LABEL.to_string(), 0)]);
    for p in pairs {
        for s in [&p.src, &p.tgt] {
            for t in &s.tokens {
                *tok.entry(t.clone()).or_default() += 1;
            }
            for f in &s.frames {
                *fr.entry(f.clone()).or_default() += 1;
            }
            for r in &s.roles {
                *ro.entry(r.clone()).or_default() += 1;
            }
        }
    }
    Ok(Vocabularies {
        tokens: Vocab::from_counts(&tok, min_count.max(1), &[]),
        frames: Vocab::from_counts(&fr, 0, &[NULL_LABEL]),
        roles: Vocab::from_counts(&ro, 0, &[NULL_LABEL]),
    })
}
