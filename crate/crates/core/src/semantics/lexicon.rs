use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{AnnotatedSentence, NULL_LABEL};
use crate::error::{Error, Result};

/// Frames whose label starts with this prefix are predicates.
pub const PREDICATE_PREFIX: &str = "/pb/";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LexEntry {
    pub frame: String,
    /// Role assigned regardless of position (e.g. `argm-mnr` for manner adverbs).
    pub role: Option<String>,
}

/// Token → frame lookup plus the positional role rule used by [`stub_annotate`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AnnotationLexicon {
    entries: BTreeMap<String, LexEntry>,
}

impl AnnotationLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, token: impl Into<String>, frame: impl Into<String>, role: Option<&str>) {
        self.entries.insert(
            token.into(),
            LexEntry {
                frame: frame.into(),
                role: role.map(str::to_string),
            },
        );
    }

    pub fn get(&self, token: &str) -> Option<&LexEntry> {
        self.entries.get(token)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `token<TAB>frame[<TAB>role]` per line; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lex = Self::new();
        let mut offset = 0;
        for (i, line) in text.split_inclusive('\n').enumerate() {
            let body = line.trim_end_matches(['\n', '\r']);
            if !body.trim().is_empty() && !body.starts_with('#') {
                let cols: Vec<&str> = body.split('\t').collect();
                match cols[..] {
                    [tok, frame] => lex.insert(tok, frame, None),
                    [tok, frame, role] => lex.insert(tok, frame, Some(role)),
                    _ => {
                        return Err(Error::at_line(
                            i + 1,
                            Error::Parse {
                                offset,
                                message: "expected token<TAB>frame[<TAB>role]".into(),
                            },
                        ))
                    }
                }
            }
            offset += line.len();
        }
        Ok(lex)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::file(path, e))?)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (tok, e) in &self.entries {
            out.push_str(tok);
            out.push('\t');
            out.push_str(&e.frame);
            if let Some(r) = &e.role {
                out.push('\t');
                out.push_str(r);
            }
            out.push('\n');
        }
        out
    }
}

/// Deterministic labeling from a lexicon.
///
/// Tokens not in the lexicon get `O`. The first token whose frame is a
/// predicate splits the sentence: framed tokens before it are `arg0`, after it
/// `arg1`. Entries with a fixed role keep that role. Without a predicate no
/// positional roles are assigned.
pub fn stub_annotate<S: AsRef<str>>(lexicon: &AnnotationLexicon, tokens: &[S]) -> AnnotatedSentence {
    let entries: Vec<Option<&LexEntry>> = tokens.iter().map(|t| lexicon.get(t.as_ref())).collect();
    let pred = entries
        .iter()
        .position(|e| e.is_some_and(|e| e.frame.starts_with(PREDICATE_PREFIX)));
    let mut frames = Vec::with_capacity(tokens.len());
    let mut roles = Vec::with_capacity(tokens.len());
    for (i, e) in entries.iter().enumerate() {
        let (frame, role) = match e {
            None => (NULL_LABEL, NULL_LABEL),
            Some(e) => {
                let role = match (&e.role, pred) {
                    (Some(r), _) => r.as_str(),
                    (None, Some(p)) if e.frame.starts_with(PREDICATE_PREFIX) || i == p => NULL_LABEL,
                    (None, Some(p)) if i < p => "arg0",
                    (None, Some(_)) => "arg1",
                    (None, None) => NULL_LABEL,
                };
                (e.frame.as_str(), role)
            }
        };
        frames.push(frame.to_string());
        roles.push(role.to_string());
    }
    AnnotatedSentence {
        tokens: tokens.iter().map(|t| t.as_ref().to_string()).collect(),
        frames,
        roles,
    }
}

/// A frame evoked by tokens `start..end`, optionally filling a role.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameSpan {
    pub start: usize,
    pub end: usize,
    pub frame: String,
    pub role: Option<String>,
}

/// Spreads span labels onto tokens. Every token of a span carries the span's
/// label; where spans overlap the shortest one wins, ties going to the span
/// listed first.
pub fn transfer_span_labels(len: usize, spans: &[FrameSpan]) -> Result<(Vec<String>, Vec<String>)> {
    let mut frames = vec![NULL_LABEL.to_string(); len];
    let mut roles = vec![NULL_LABEL.to_string(); len];
    let mut owner: Vec<Option<usize>> = vec![None; len];
    for (k, span) in spans.iter().enumerate() {
        if span.start >= span.end || span.end > len {
            return Err(Error::Contract(format!(
                "span {}..{} outside sentence of length {len}",
                span.start, span.end
            )));
        }
        let width = span.end - span.start;
        for pos in span.start..span.end {
            let better = match owner[pos] {
                None => true,
                Some(j) => width < spans[j].end - spans[j].start,
            };
            if better {
                owner[pos] = Some(k);
                frames[pos] = span.frame.clone();
                roles[pos] = span.role.clone().unwrap_or_else(|| NULL_LABEL.to_string());
            }
        }
    }
    Ok((frames, roles))
}
