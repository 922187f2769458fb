use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Token,
    Frame,
    Role,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Token, Channel::Frame, Channel::Role];
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::Token => "token",
            Channel::Frame => "frame",
            Channel::Role => "role",
        })
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token" => Ok(Channel::Token),
            "frame" => Ok(Channel::Frame),
            "role" => Ok(Channel::Role),
            other => Err(Error::Config(format!("unknown channel {other:?}"))),
        }
    }
}

/// First decoder layer target→source attention of one decoded sentence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttentionTrace {
    /// One label per decoding step (the emitted token, `<eos>` included).
    pub target: Vec<String>,
    /// `heads[h][t][s]`.
    pub heads: Vec<Vec<Vec<f64>>>,
    /// Source labels of each channel the weights can be read against.
    pub channels: Vec<(Channel, Vec<String>)>,
}

impl AttentionTrace {
    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    /// Head-averaged `target × source` matrix.
    pub fn averaged(&self) -> Vec<Vec<f64>> {
        let Some(first) = self.heads.first() else {
            return Vec::new();
        };
        let n = self.heads.len() as f64;
        let mut avg: Vec<Vec<f64>> = first.iter().map(|r| vec![0.0; r.len()]).collect();
        for head in &self.heads {
            for (a, row) in avg.iter_mut().zip(head) {
                for (x, w) in a.iter_mut().zip(row) {
                    *x += w;
                }
            }
        }
        for row in &mut avg {
            for x in row {
                *x /= n;
            }
        }
        avg
    }

    /// One dump record per requested channel.
    pub fn records(&self, channels: &[Channel]) -> Result<Vec<AttentionRecord>> {
        if self.is_empty() {
            return Err(Error::contract("model produced no attention weights"));
        }
        let weights = self.averaged();
        channels
            .iter()
            .map(|c| {
                let (_, source) = self
                    .channels
                    .iter()
                    .find(|(k, _)| k == c)
                    .ok_or_else(|| Error::Contract(format!("model has no {c} channel")))?;
                Ok(AttentionRecord {
                    channel: *c,
                    target: self.target.clone(),
                    source: source.clone(),
                    weights: weights.clone(),
                })
            })
            .collect()
    }
}

/// One line of an attention dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub channel: Channel,
    pub target: Vec<String>,
    pub source: Vec<String>,
    pub weights: Vec<Vec<f64>>,
}

impl AttentionRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("finite weights serialize")
    }

    /// Checks the matrix is `target × source`.
    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.target.len()
            || self.weights.iter().any(|r| r.len() != self.source.len())
        {
            return Err(Error::shape(
                "attention_record",
                &[self.weights.len(), self.weights.first().map_or(0, Vec::len)],
                &[self.target.len(), self.source.len()],
            ));
        }
        Ok(())
    }
}

pub fn records_to_jsonl(records: &[AttentionRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&r.to_json());
        s.push('\n');
    }
    s
}

/// Parses a dump, reporting the 1-based line of the first bad record.
pub fn parse_records(text: &str) -> Result<Vec<AttentionRecord>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let body = line.trim_end_matches(['\n', '\r']);
        if !body.trim().is_empty() {
            let rec: AttentionRecord = serde_json::from_str(body).map_err(|e| {
                Error::at_line(
                    i + 1,
                    Error::Parse {
                        offset: offset + e.column().saturating_sub(1),
                        message: e.to_string(),
                    },
                )
            })?;
            rec.validate().map_err(|e| Error::at_line(i + 1, e))?;
            out.push(rec);
        }
        offset += line.len();
    }
    Ok(out)
}
