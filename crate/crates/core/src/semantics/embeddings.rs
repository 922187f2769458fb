use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

/// Word vectors read from GloVe-style text: a word, then its components.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WordVectors {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

impl WordVectors {
    /// Keeps only words accepted by `keep`, so a large file costs memory only
    /// for the vocabulary in use. Every line must have the same width; a later
    /// duplicate of a word is ignored.
    pub fn read<R: BufRead>(reader: R, keep: impl Fn(&str) -> bool) -> Result<Self> {
        let mut out = WordVectors::default();
        let mut offset = 0;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let at = offset;
            offset += line.len() + 1;
            let mut fields = line.split_whitespace();
            let Some(word) = fields.next() else { continue };
            let bad = |m: String| Error::at_line(i + 1, Error::Parse { offset: at, message: m });
            let values = fields
                .map(|f| f.parse::<f64>().map_err(|_| bad(format!("bad component {f:?}"))))
                .collect::<Result<Vec<_>>>()?;
            if values.is_empty() {
                return Err(bad(format!("word {word:?} has no vector")));
            }
            if out.dim == 0 {
                out.dim = values.len();
            } else if values.len() != out.dim {
                return Err(bad(format!("expected {} components, found {}", out.dim, values.len())));
            }
            if keep(word) {
                out.vectors.entry(word.to_string()).or_insert(values);
            }
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>, keep: impl Fn(&str) -> bool) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        Self::read(BufReader::new(file), keep)
    }
}
