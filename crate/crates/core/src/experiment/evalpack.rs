use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use sha2::{Digest, Sha256};

use super::Prediction;
use crate::error::{Error, Result};
use crate::tensor::rng_from_seed;

/// Layout of a human rating sheet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalPackMode {
    /// Do s1 and s2 mean roughly the same? The generated sentence is put in
    /// a random slot.
    Task1Pair,
    /// Given that s1 and s2 (source, reference) agree, does s3 (generated)?
    Task2Triple,
    /// Is s2 (generated) an acceptable caption of the image that s1 describes?
    Task3Image,
}

impl EvalPackMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalPackMode::Task1Pair => "task1_pair",
            EvalPackMode::Task2Triple => "task2_triple",
            EvalPackMode::Task3Image => "task3_image",
        }
    }

    fn header(self) -> &'static str {
        match self {
            EvalPackMode::Task1Pair => "id\ts1\ts2",
            EvalPackMode::Task2Triple => "id\ts1\ts2\ts3",
            EvalPackMode::Task3Image => "id\timage\ts1\ts2",
        }
    }
}

impl fmt::Display for EvalPackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalPackMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().replace('-', "_");
        [EvalPackMode::Task1Pair, EvalPackMode::Task2Triple, EvalPackMode::Task3Image]
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| Error::Config(format!("unknown eval-pack mode {s:?}")))
    }
}

/// One answer-key row: which prediction an item shows and where the
/// generated sentence sits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyEntry {
    pub id: String,
    pub index: usize,
    /// Column holding the generated sentence (`s1`, `s2` or `s3`).
    pub generated: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalPack {
    /// Tab-separated sheet for raters, header first.
    pub sheet: String,
    /// Tab-separated `id, index, generated` rows, header first.
    pub key: String,
}

fn item_id(seed: u64, index: usize) -> String {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((index as u64).to_le_bytes());
    hex::encode(&h.finalize()[..6])
}

fn cell(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

/// Draws `sample` predictions without replacement in a seeded random order
/// and lays them out for raters. Item ids depend only on the seed and the
/// prediction index.
pub fn export_eval_pack(preds: &[Prediction], mode: EvalPackMode, sample: usize, seed: u64) -> Result<EvalPack> {
    if sample > preds.len() {
        return Err(Error::Config(format!(
            "eval pack wants {sample} items but only {} predictions are available",
            preds.len()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.shuffle(&mut rng);
    order.truncate(sample);
    let mut sheet = format!("{}\n", mode.header());
    let mut key = String::from("id\tindex\tgenerated\n");
    for &i in &order {
        let p = &preds[i];
        let id = item_id(seed, p.index);
        let (row, slot) = match mode {
            EvalPackMode::Task1Pair => {
                if rng.random::<bool>() {
                    (format!("{}\t{}", cell(&p.hypothesis), cell(&p.source)), "s1")
                } else {
                    (format!("{}\t{}", cell(&p.source), cell(&p.hypothesis)), "s2")
                }
            }
            EvalPackMode::Task2Triple => (
                format!("{}\t{}\t{}", cell(&p.source), cell(&p.reference), cell(&p.hypothesis)),
                "s3",
            ),
            EvalPackMode::Task3Image => {
                let image = p.image.as_deref().ok_or_else(|| {
                    Error::Config(format!("prediction {} has no image id for task3_image", p.index))
                })?;
                (format!("{}\t{}\t{}", cell(image), cell(&p.source), cell(&p.hypothesis)), "s2")
            }
        };
        writeln!(sheet, "{id}\t{row}").expect("writing to a String");
        writeln!(key, "{id}\t{}\t{slot}", p.index).expect("writing to a String");
    }
    Ok(EvalPack { sheet, key })
}

/// Parses an answer key written by [`export_eval_pack`].
pub fn parse_key(text: &str) -> Result<Vec<KeyEntry>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let body = line.trim_end();
        if i > 0 && !body.is_empty() {
            let bad = |m: &str| Error::at_line(i + 1, Error::Parse { offset, message: m.to_string() });
            let cols: Vec<&str> = body.split('\t').collect();
            let [id, index, generated] = cols[..] else {
                return Err(bad("expected 3 columns"));
            };
            out.push(KeyEntry {
                id: id.to_string(),
                index: index.parse().map_err(|_| bad("index is not a number"))?,
                generated: generated.to_string(),
            });
        }
        offset += line.len();
    }
    Ok(out)
}
