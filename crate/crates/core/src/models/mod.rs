//! The five sequence-to-sequence families behind one train/decode interface.

mod batch;
mod config;
mod nvlstm;
mod seq2seq;
mod srlstm;
mod trace;
mod train;
mod transformer;

pub use batch::{argmax_rows, Layout};
pub use config::{ChannelMask, DecayMode, Family, LatentInference, ModelConfig};
pub use nvlstm::{kl_divergence, LatentSample, NvLstmNet};
pub use seq2seq::{Decoded, ModelSummary, Network, Seq2Seq, PE_TABLE_LEN};
pub use srlstm::{LstmEncoding, ResidualBiStack, SrLstmNet};
pub use trace::{parse_records, records_to_jsonl, AttentionRecord, AttentionTrace, Channel};
pub use train::{objective, Adam, LossReport, Trainer};
pub use transformer::{ChannelStates, TransformerNet};

use crate::error::{Error, Result};
use crate::semantics::{BOS, EOS};
use crate::tensor::{Tape, Var};

/// Vocabulary ids of the three channels of one source sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSentence {
    pub tokens: Vec<usize>,
    pub frames: Vec<usize>,
    pub roles: Vec<usize>,
}

impl EncodedSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Ids of channel `c`.
    pub fn channel(&self, c: Channel) -> &[usize] {
        match c {
            Channel::Token => &self.tokens,
            Channel::Frame => &self.frames,
            Channel::Role => &self.roles,
        }
    }
}

/// A source sentence and its target token ids (no BOS/EOS).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedPair {
    pub src: EncodedSentence,
    pub tgt: Vec<usize>,
}

impl EncodedPair {
    /// `BOS, y_1 .. y_n`.
    pub fn decoder_input(&self) -> Vec<usize> {
        std::iter::once(BOS).chain(self.tgt.iter().copied()).collect()
    }

    /// `y_1 .. y_n, EOS`.
    pub fn decoder_output(&self) -> Vec<usize> {
        self.tgt.iter().copied().chain(std::iter::once(EOS)).collect()
    }
}

/// Summed loss terms of one batch.
#[derive(Clone, Copy, Debug)]
pub struct BatchLoss {
    /// Cross-entropy summed over every target token (EOS included).
    pub ce_sum: Var,
    pub tokens: usize,
    /// KL term summed over the batch (nv-lstm only).
    pub kl_sum: Option<Var>,
}

/// Tokens emitted for one sentence, before mapping back to strings.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawDecode {
    /// Emitted ids, EOS included when it was produced.
    pub ids: Vec<usize>,
    /// No EOS within `max_out` steps.
    pub truncated: bool,
    /// First-layer cross-attention, `heads[h][t][s]`; empty without attention.
    pub heads: Vec<Vec<Vec<f64>>>,
}

/// What one decoding step produces for the whole batch.
pub(crate) struct StepOut {
    /// `batch × vocab`.
    pub logits: Var,
    /// Per head, `batch × width`; row `b` starts with sentence `b`'s weights.
    pub attention: Vec<Var>,
}

fn check_batch<T>(items: &[T]) -> Result<()> {
    if items.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    Ok(())
}

/// Greedy decoding of a batch: every sentence advances one token per step and
/// stops at EOS or after `max_out` tokens.
pub(crate) fn greedy_loop<F>(
    tape: &mut Tape<'_>,
    source: &Layout,
    max_out: usize,
    mut step: F,
) -> Result<Vec<RawDecode>>
where
    F: FnMut(&mut Tape<'_>, &[usize], usize) -> Result<StepOut>,
{
    let batch = source.batch();
    let mut out = vec![RawDecode::default(); batch];
    let mut done = vec![false; batch];
    let mut prev = vec![BOS; batch];
    for t in 0..max_out {
        let so = step(tape, &prev, t)?;
        let ids = argmax_rows(tape.value(so.logits));
        for (b, r) in out.iter_mut().enumerate() {
            if done[b] {
                continue;
            }
            r.ids.push(ids[b]);
            if r.heads.len() < so.attention.len() {
                r.heads.resize(so.attention.len(), Vec::new());
            }
            let len = source.lens()[b];
            for (h, w) in so.attention.iter().enumerate() {
                r.heads[h].push(tape.value(*w).row(b)[..len].to_vec());
            }
            done[b] = ids[b] == EOS;
        }
        prev = ids;
        if done.iter().all(|&d| d) {
            break;
        }
    }
    for (r, d) in out.iter_mut().zip(done) {
        r.truncated = !d;
    }
    Ok(out)
}

/// Rows of the time-major `steps·batch` stack that belong to real target
/// positions, in sentence-major order.
pub(crate) fn valid_rows(lens: &[usize]) -> Vec<usize> {
    let batch = lens.len();
    let mut out = Vec::new();
    for (b, &l) in lens.iter().enumerate() {
        out.extend((0..l).map(|t| t * batch + b));
    }
    out
}
