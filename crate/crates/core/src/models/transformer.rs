use std::rc::Rc;

use super::batch::{step_index, Layout};
use super::{check_batch, greedy_loop, BatchLoss, Channel, ChannelMask, EncodedPair, EncodedSentence, ModelConfig, RawDecode, StepOut};
use crate::error::Result;
use crate::nn::{DecoderBlock, Embedding, EncoderBlock, Keys, Linear, PositionalEncoder, SelfAttnCache};
use crate::semantics::Vocabularies;
use crate::tensor::{KeyIndex, ParamStore, SemaRng, Tape, Tensor, Var};

/// Transformer encoder–decoder; the multi-encoder variant runs one encoder
/// stack per channel and merges them position by position.
#[derive(Clone, Debug)]
pub struct TransformerNet {
    pub dim: usize,
    pub dropout: f64,
    pub mask: ChannelMask,
    /// Token embeddings, shared by the source token channel and the decoder.
    pub tokens: Embedding,
    pub frames: Option<Embedding>,
    pub roles: Option<Embedding>,
    pub positions: PositionalEncoder,
    /// One stack per channel: token, then frame and role for the multi-encoder variant.
    pub encoders: Vec<Vec<EncoderBlock>>,
    /// `3·dim → dim` over the concatenated channel states.
    pub merge: Option<Linear>,
    pub decoder: Vec<DecoderBlock>,
    pub output: Linear,
}

/// Per-channel encoder states (`None` for channels the mask leaves out) and
/// the states the decoder attends to.
#[derive(Clone, Debug)]
pub struct ChannelStates {
    pub token: Var,
    pub frame: Option<Var>,
    pub role: Option<Var>,
    pub merged: Var,
}

impl TransformerNet {
    pub fn new(
        store: &mut ParamStore,
        cfg: &ModelConfig,
        vocabs: &Vocabularies,
        pe_len: usize,
        rng: &mut SemaRng,
    ) -> Result<Self> {
        let d = cfg.model_dim;
        let multi = cfg.family.is_multi_encoder();
        let tokens = Embedding::new(store, "emb/token", vocabs.tokens.len(), d, cfg.embed_std, rng);
        let (frames, roles) = if multi {
            (
                Some(Embedding::new(store, "emb/frame", vocabs.frames.len(), d, cfg.embed_std, rng)),
                Some(Embedding::new(store, "emb/role", vocabs.roles.len(), d, cfg.embed_std, rng)),
            )
        } else {
            (None, None)
        };
        let channels: &[Channel] = if multi { &Channel::ALL } else { &[Channel::Token] };
        let mut encoders = Vec::new();
        for c in channels {
            let mut stack = Vec::new();
            for i in 0..cfg.num_blocks {
                stack.push(EncoderBlock::new(
                    store,
                    &format!("enc/{c}/{i}"),
                    d,
                    cfg.num_heads,
                    cfg.norm_style,
                    cfg.dropout,
                    rng,
                )?);
            }
            encoders.push(stack);
        }
        let merge = multi.then(|| Linear::new(store, "merge", 3 * d, d, true, rng));
        let mut decoder = Vec::new();
        for i in 0..cfg.num_blocks {
            decoder.push(DecoderBlock::new(
                store,
                &format!("dec/{i}"),
                d,
                cfg.num_heads,
                cfg.norm_style,
                cfg.dropout,
                rng,
            )?);
        }
        let output = Linear::new(store, "out", d, vocabs.tokens.len(), true, rng);
        Ok(Self {
            dim: d,
            dropout: cfg.dropout,
            mask: cfg.channel_mask,
            tokens,
            frames,
            roles,
            positions: PositionalEncoder::new(pe_len, d),
            encoders,
            merge,
            decoder,
            output,
        })
    }

    /// `dropout(√d · E[ids] + PE[positions])`.
    fn embed(&self, tape: &mut Tape<'_>, table: &Embedding, ids: &[usize], positions: &[usize]) -> Result<Var> {
        let e = table.forward(tape, ids)?;
        let e = tape.scale(e, (self.dim as f64).sqrt());
        let e = self.positions.encode_positions(tape, e, positions)?;
        tape.dropout(e, self.dropout)
    }

    fn encode_channel(
        &self,
        tape: &mut Tape<'_>,
        index: usize,
        table: &Embedding,
        ids: &[usize],
        layout: &Layout,
    ) -> Result<Var> {
        let mut x = self.embed(tape, table, ids, &layout.positions())?;
        let keys = Layout::key_index(layout, layout, false);
        for block in &self.encoders[index] {
            x = block.forward_masked(tape, x, keys_of(keys.as_ref()))?.0;
        }
        Ok(x)
    }

    /// Encodes sentences stacked row-wise in the order given.
    pub fn encode(&self, tape: &mut Tape<'_>, srcs: &[EncodedSentence]) -> Result<(ChannelStates, Layout)> {
        check_batch(srcs)?;
        let layout = Layout::new(srcs.iter().map(EncodedSentence::len).collect());
        let stacked = |c: Channel| -> Vec<usize> { srcs.iter().flat_map(|s| s.channel(c).iter().copied()).collect() };
        let token = self.encode_channel(tape, 0, &self.tokens, &stacked(Channel::Token), &layout)?;
        let Some(merge) = &self.merge else {
            let states = ChannelStates {
                token,
                frame: None,
                role: None,
                merged: token,
            };
            return Ok((states, layout));
        };
        let frame = match (&self.frames, self.mask.frames()) {
            (Some(t), true) => Some(self.encode_channel(tape, 1, t, &stacked(Channel::Frame), &layout)?),
            _ => None,
        };
        let role = match (&self.roles, self.mask.roles()) {
            (Some(t), true) => Some(self.encode_channel(tape, 2, t, &stacked(Channel::Role), &layout)?),
            _ => None,
        };
        let zeros = || Tensor::zeros(&[layout.total(), self.dim]);
        let f = match frame {
            Some(v) => v,
            None => tape.constant(zeros()),
        };
        let r = match role {
            Some(v) => v,
            None => tape.constant(zeros()),
        };
        let cat = tape.concat(&[token, f, r], 1)?;
        let merged = merge.forward(tape, cat)?;
        Ok((
            ChannelStates {
                token,
                frame,
                role,
                merged,
            },
            layout,
        ))
    }

    pub fn loss(&self, tape: &mut Tape<'_>, batch: &[EncodedPair]) -> Result<BatchLoss> {
        let srcs: Vec<EncodedSentence> = batch.iter().map(|p| p.src.clone()).collect();
        let (states, src_layout) = self.encode(tape, &srcs)?;
        let inputs: Vec<usize> = batch.iter().flat_map(EncodedPair::decoder_input).collect();
        let targets: Vec<usize> = batch.iter().flat_map(EncodedPair::decoder_output).collect();
        let tgt_layout = Layout::new(batch.iter().map(|p| p.tgt.len() + 1).collect());
        let self_keys = Layout::key_index(&tgt_layout, &tgt_layout, true).expect("causal keys");
        let cross_keys = Layout::key_index(&tgt_layout, &src_layout, false);
        let mut y = self.embed(tape, &self.tokens, &inputs, &tgt_layout.positions())?;
        for block in &self.decoder {
            let kv = block.memory_kv(tape, states.merged)?;
            y = block
                .forward_masked(tape, y, kv, Keys::Index(&self_keys), keys_of(cross_keys.as_ref()))?
                .out;
        }
        let logits = self.output.forward(tape, y)?;
        Ok(BatchLoss {
            ce_sum: tape.cross_entropy_sum(logits, &targets)?,
            tokens: targets.len(),
            kl_sum: None,
        })
    }

    pub fn decode(&self, tape: &mut Tape<'_>, srcs: &[EncodedSentence], max_out: usize) -> Result<Vec<RawDecode>> {
        let (states, layout) = self.encode(tape, srcs)?;
        let batch = layout.batch();
        let mut kvs = Vec::with_capacity(self.decoder.len());
        for block in &self.decoder {
            kvs.push(block.memory_kv(tape, states.merged)?);
        }
        let cross_keys = (batch > 1).then(|| layout.sentence_index());
        let mut caches = vec![SelfAttnCache::default(); self.decoder.len()];
        greedy_loop(tape, &layout, max_out, |tape, prev, t| {
            let mut y = self.embed(tape, &self.tokens, prev, &vec![t; batch])?;
            let self_keys = step_index(batch, t + 1);
            let mut attention = Vec::new();
            for (i, block) in self.decoder.iter().enumerate() {
                let (own, cross) = (keys_of(self_keys.as_ref()), keys_of(cross_keys.as_ref()));
                let o = block.step_masked(tape, y, &mut caches[i], kvs[i], own, cross)?;
                if i == 0 {
                    attention = o.cross_weights;
                }
                y = o.out;
            }
            Ok(StepOut {
                logits: self.output.forward(tape, y)?,
                attention,
            })
        })
    }
}

fn keys_of(index: Option<&Rc<KeyIndex>>) -> Keys<'_> {
    index.map_or(Keys::All, Keys::Index)
}
