//! Token/frame/role channel data model, JSON-lines corpus IO and vocabularies.

mod embeddings;
mod lexicon;
mod vocab;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use embeddings::WordVectors;
pub use lexicon::{stub_annotate, transfer_span_labels, AnnotationLexicon, FrameSpan, LexEntry};
pub use vocab::{build_vocabularies, Vocab, Vocabularies, BOS, EOS, PAD, UNK};

/// Label carried by positions with no frame or role.
pub const NULL_LABEL: &str = "O";

/// Three aligned label vectors for one sentence.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct AnnotatedSentence {
    pub tokens: Vec<String>,
    pub frames: Vec<String>,
    pub roles: Vec<String>,
}

#[derive(Deserialize)]
struct RawSentence {
    tokens: Vec<String>,
    #[serde(default)]
    frames: Option<Vec<String>>,
    #[serde(default)]
    roles: Option<Vec<String>>,
}

impl TryFrom<RawSentence> for AnnotatedSentence {
    type Error = Error;

    fn try_from(raw: RawSentence) -> Result<Self> {
        let n = raw.tokens.len();
        let fill = || vec![NULL_LABEL.to_string(); n];
        AnnotatedSentence::new(
            raw.tokens,
            raw.frames.unwrap_or_else(fill),
            raw.roles.unwrap_or_else(fill),
        )
    }
}

impl AnnotatedSentence {
    pub fn new(tokens: Vec<String>, frames: Vec<String>, roles: Vec<String>) -> Result<Self> {
        if tokens.len() != frames.len() || tokens.len() != roles.len() {
            return Err(Error::Alignment {
                index: tokens.len().min(frames.len()).min(roles.len()),
                tokens: tokens.len(),
                frames: frames.len(),
                roles: roles.len(),
            });
        }
        Ok(Self {
            tokens,
            frames,
            roles,
        })
    }

    /// Tokens with every frame and role set to the null label.
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Self {
        let tokens: Vec<String> = tokens.iter().map(|t| t.as_ref().to_string()).collect();
        let n = tokens.len();
        Self {
            tokens,
            frames: vec![NULL_LABEL.to_string(); n],
            roles: vec![NULL_LABEL.to_string(); n],
        }
    }

    /// Whitespace-tokenized, unannotated sentence.
    pub fn from_text(text: &str) -> Self {
        Self::from_tokens(&text.split_whitespace().collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_annotated(&self) -> bool {
        self.frames
            .iter()
            .chain(&self.roles)
            .any(|l| l != NULL_LABEL)
    }

    /// Keeps the first `max_len` positions of all three channels.
    pub fn truncate(&mut self, max_len: usize) {
        self.tokens.truncate(max_len);
        self.frames.truncate(max_len);
        self.roles.truncate(max_len);
    }

    /// Lowercases tokens; labels are left alone.
    pub fn lowercase(&mut self) {
        for t in &mut self.tokens {
            *t = t.to_lowercase();
        }
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    /// Canonical JSON form: all three arrays present, no whitespace.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("strings always serialize")
    }
}

/// Parses one `{"tokens":[...],"frames":[...],"roles":[...]}` record.
pub fn parse_annotated(line: &str) -> Result<AnnotatedSentence> {
    let raw: RawSentence = serde_json::from_str(line).map_err(|e| json_error(line, &e))?;
    raw.try_into()
}

fn json_error(text: &str, e: &serde_json::Error) -> Error {
    // serde_json reports 1-based line and byte column.
    let line_start: usize = text
        .split_inclusive('\n')
        .take(e.line().saturating_sub(1))
        .map(str::len)
        .sum();
    Error::Parse {
        offset: line_start + e.column().saturating_sub(1),
        message: e.to_string(),
    }
}

/// Source/target training or evaluation unit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParaphrasePair {
    pub src: AnnotatedSentence,
    pub tgt: AnnotatedSentence,
}

#[derive(Deserialize)]
struct RawPair {
    src: RawSentence,
    tgt: RawSentence,
}

impl ParaphrasePair {
    pub fn parse(line: &str) -> Result<Self> {
        let raw: RawPair = serde_json::from_str(line).map_err(|e| json_error(line, &e))?;
        Ok(Self {
            src: raw.src.try_into()?,
            tgt: raw.tgt.try_into()?,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("strings always serialize")
    }

    /// Truncates both sides to `max_len` and optionally lowercases tokens.
    pub fn prepared(&self, max_len: usize, lowercase: bool) -> Self {
        let mut p = self.clone();
        for s in [&mut p.src, &mut p.tgt] {
            s.truncate(max_len);
            if lowercase {
                s.lowercase();
            }
        }
        p
    }
}

/// Parses JSON-lines text; blank lines are skipped. Errors carry the 1-based
/// line number and, for syntax errors, the byte offset into `text`.
pub fn parse_pairs(text: &str) -> Result<Vec<ParaphrasePair>> {
    let mut pairs = Vec::new();
    let mut offset = 0;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let body = line.trim_end_matches(['\n', '\r']);
        if !body.trim().is_empty() {
            let pair = ParaphrasePair::parse(body).map_err(|e| match e {
                Error::Parse {
                    offset: o,
                    message,
                } => Error::at_line(
                    i + 1,
                    Error::Parse {
                        offset: offset + o,
                        message,
                    },
                ),
                other => Error::at_line(i + 1, other),
            })?;
            pairs.push(pair);
        }
        offset += line.len();
    }
    Ok(pairs)
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<ParaphrasePair>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_pairs(&text)
}

pub fn write_pairs(path: impl AsRef<Path>, pairs: &[ParaphrasePair]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, pairs_to_jsonl(pairs)).map_err(|e| Error::file(path, e))
}

pub fn pairs_to_jsonl(pairs: &[ParaphrasePair]) -> String {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&p.to_json());
        out.push('\n');
    }
    out
}

/// Two-column `source<TAB>target` text, whitespace tokenized.
pub fn parse_tsv(text: &str) -> Result<Vec<ParaphrasePair>> {
    let mut pairs = Vec::new();
    let mut offset = 0;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let body = line.trim_end_matches(['\n', '\r']);
        if !body.trim().is_empty() {
            let (src, tgt) = body.split_once('\t').ok_or_else(|| {
                Error::at_line(
                    i + 1,
                    Error::Parse {
                        offset,
                        message: "expected source<TAB>target".into(),
                    },
                )
            })?;
            pairs.push(ParaphrasePair {
                src: AnnotatedSentence::from_text(src),
                tgt: AnnotatedSentence::from_text(tgt),
            });
        }
        offset += line.len();
    }
    Ok(pairs)
}

pub fn pairs_to_tsv(pairs: &[ParaphrasePair]) -> String {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&p.src.text());
        out.push('\t');
        out.push_str(&p.tgt.text());
        out.push('\n');
    }
    out
}

/// Writes `lines` one per line.
pub fn write_lines<I, S>(path: impl AsRef<Path>, lines: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let path = path.as_ref();
    let mut buf = Vec::new();
    for l in lines {
        buf.write_all(l.as_ref().as_bytes())?;
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(|e| Error::file(path, e))
}
