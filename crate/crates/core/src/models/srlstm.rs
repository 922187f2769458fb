use super::batch::{activity_masks, run_cell, Layout};
use super::{check_batch, greedy_loop, valid_rows, BatchLoss, Channel, ChannelMask, EncodedPair, EncodedSentence, ModelConfig, RawDecode, StepOut};
use crate::error::Result;
use crate::nn::{BahdanauAttention, Embedding, Linear, LstmCell, LstmState};
use crate::semantics::Vocabularies;
use crate::tensor::{ParamStore, SemaRng, Tape, Tensor, Var};

/// Stacked bidirectional LSTM whose every layer adds the input embedding
/// back onto its output.
#[derive(Clone, Debug)]
pub struct ResidualBiStack {
    pub forward: Vec<LstmCell>,
    pub backward: Vec<LstmCell>,
}

impl ResidualBiStack {
    fn new(store: &mut ParamStore, name: &str, layers: usize, hidden: usize, rng: &mut SemaRng) -> Self {
        let mut make = |dir: &str| -> Vec<LstmCell> {
            (0..layers)
                .map(|i| LstmCell::new(store, &format!("{name}/{dir}{i}"), hidden, hidden, rng))
                .collect()
        };
        let forward = make("fwd");
        let backward = make("bwd");
        Self { forward, backward }
    }

    fn run_direction(
        tape: &mut Tape<'_>,
        cells: &[LstmCell],
        w: Var,
        lens: &[usize],
    ) -> Result<(Var, Var)> {
        let batch = lens.len();
        let hidden = cells[0].hidden_dim;
        let active = activity_masks(tape, lens, hidden);
        let mut x = w;
        let mut last = None;
        for cell in cells {
            let init = LstmState::zeros(tape, batch, hidden);
            let (outs, fin) = run_cell(tape, cell, x, batch, &active, init, Some(w))?;
            x = tape.concat(&outs, 0)?;
            last = Some(fin.h);
        }
        Ok((x, last.expect("at least one layer")))
    }

    /// Returns stacked per-position states `Σlen × 2h` and the final
    /// `[forward; backward]` states `batch × 2h`.
    fn encode(&self, tape: &mut Tape<'_>, table: &Embedding, seqs: &[&[usize]], dropout: f64) -> Result<(Var, Var)> {
        let lens: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
        let steps = lens.iter().copied().max().unwrap_or(0);
        let batch = lens.len();
        let fwd_ids = Layout::time_major(seqs, steps);
        let reversed: Vec<Vec<usize>> = seqs.iter().map(|s| s.iter().rev().copied().collect()).collect();
        let rev_refs: Vec<&[usize]> = reversed.iter().map(Vec::as_slice).collect();
        let bwd_ids = Layout::time_major(&rev_refs, steps);
        let wf = table.forward(tape, &fwd_ids)?;
        let wf = tape.dropout(wf, dropout)?;
        let wb = table.forward(tape, &bwd_ids)?;
        let wb = tape.dropout(wb, dropout)?;
        let (hf, cf) = Self::run_direction(tape, &self.forward, wf, &lens)?;
        let (hb, cb) = Self::run_direction(tape, &self.backward, wb, &lens)?;
        let mut fi = Vec::new();
        let mut bi = Vec::new();
        for (b, &l) in lens.iter().enumerate() {
            for p in 0..l {
                fi.push(p * batch + b);
                bi.push((l - 1 - p) * batch + b);
            }
        }
        let sf = tape.embedding(hf, &fi)?;
        let sb = tape.embedding(hb, &bi)?;
        let states = tape.concat(&[sf, sb], 1)?;
        let context = tape.concat(&[cf, cb], 1)?;
        Ok((states, context))
    }
}

/// Stacked residual LSTM encoder–decoder with additive attention; the
/// multi-encoder variant runs one encoder per channel.
#[derive(Clone, Debug)]
pub struct SrLstmNet {
    pub hidden: usize,
    pub dropout: f64,
    pub mask: ChannelMask,
    /// Token embeddings, shared by the encoder and the decoder.
    pub tokens: Embedding,
    pub frames: Option<Embedding>,
    pub roles: Option<Embedding>,
    pub encoders: Vec<ResidualBiStack>,
    /// Concatenated final encoder states → initial decoder state.
    pub context: Linear,
    pub decoder: Vec<LstmCell>,
    pub attention: BahdanauAttention,
    pub output: Linear,
}

/// Encoder result: attended states (`Σlen × enc_dim`), the decoder's initial
/// state `c` (`batch × hidden`), and the per-channel final states that fed it.
#[derive(Clone, Debug)]
pub struct LstmEncoding {
    pub states: Var,
    pub context: Var,
    pub channel_contexts: Vec<Var>,
    pub layout: Layout,
}

impl SrLstmNet {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, vocabs: &Vocabularies, rng: &mut SemaRng) -> Self {
        let h = cfg.hidden_dim;
        let multi = cfg.family.is_multi_encoder();
        let tokens = Embedding::new(store, "emb/token", vocabs.tokens.len(), h, cfg.embed_std, rng);
        let (frames, roles) = if multi {
            (
                Some(Embedding::new(store, "emb/frame", vocabs.frames.len(), h, cfg.embed_std, rng)),
                Some(Embedding::new(store, "emb/role", vocabs.roles.len(), h, cfg.embed_std, rng)),
            )
        } else {
            (None, None)
        };
        let channels: &[Channel] = if multi { &Channel::ALL } else { &[Channel::Token] };
        let encoders: Vec<ResidualBiStack> = channels
            .iter()
            .map(|c| ResidualBiStack::new(store, &format!("enc/{c}"), cfg.num_blocks, h, rng))
            .collect();
        let enc_dim = 2 * h * encoders.len();
        let context = Linear::new(store, "context", enc_dim, h, true, rng);
        let decoder = (0..cfg.num_blocks)
            .map(|i| LstmCell::new(store, &format!("dec/{i}"), h, h, rng))
            .collect();
        let attention = BahdanauAttention::new(store, "attn", h, enc_dim, h, rng);
        let output = Linear::new(store, "out", h + enc_dim, vocabs.tokens.len(), true, rng);
        Self {
            hidden: h,
            dropout: cfg.dropout,
            mask: cfg.channel_mask,
            tokens,
            frames,
            roles,
            encoders,
            context,
            decoder,
            attention,
            output,
        }
    }

    pub fn encoder_dim(&self) -> usize {
        2 * self.hidden * self.encoders.len()
    }

    pub fn encode(&self, tape: &mut Tape<'_>, srcs: &[EncodedSentence]) -> Result<LstmEncoding> {
        check_batch(srcs)?;
        let layout = Layout::new(srcs.iter().map(EncodedSentence::len).collect());
        let batch = layout.batch();
        let two_h = 2 * self.hidden;
        let mut states = Vec::new();
        let mut contexts = Vec::new();
        let channels = [
            (Channel::Token, Some(&self.tokens), true),
            (Channel::Frame, self.frames.as_ref(), self.mask.frames()),
            (Channel::Role, self.roles.as_ref(), self.mask.roles()),
        ];
        for (i, (c, table, enabled)) in channels.into_iter().enumerate() {
            let Some(table) = table else { continue };
            if enabled {
                let seqs: Vec<&[usize]> = srcs.iter().map(|s| s.channel(c)).collect();
                let (s, ctx) = self.encoders[i].encode(tape, table, &seqs, self.dropout)?;
                states.push(s);
                contexts.push(ctx);
            } else {
                states.push(tape.constant(Tensor::zeros(&[layout.total(), two_h])));
                contexts.push(tape.constant(Tensor::zeros(&[batch, two_h])));
            }
        }
        let (states_all, ctx_all) = if states.len() == 1 {
            (states[0], contexts[0])
        } else {
            (tape.concat(&states, 1)?, tape.concat(&contexts, 1)?)
        };
        let context = self.context.forward(tape, ctx_all)?;
        Ok(LstmEncoding {
            states: states_all,
            context,
            channel_contexts: contexts,
            layout,
        })
    }

    fn initial_states(&self, tape: &mut Tape<'_>, context: Var, batch: usize) -> Vec<LstmState> {
        self.decoder
            .iter()
            .map(|_| LstmState {
                h: context,
                c: tape.constant(Tensor::zeros(&[batch, self.hidden])),
            })
            .collect()
    }

    pub fn loss(&self, tape: &mut Tape<'_>, batch: &[EncodedPair]) -> Result<BatchLoss> {
        let srcs: Vec<EncodedSentence> = batch.iter().map(|p| p.src.clone()).collect();
        let enc = self.encode(tape, &srcs)?;
        let n = batch.len();
        let inputs: Vec<Vec<usize>> = batch.iter().map(EncodedPair::decoder_input).collect();
        let refs: Vec<&[usize]> = inputs.iter().map(Vec::as_slice).collect();
        let lens: Vec<usize> = inputs.iter().map(Vec::len).collect();
        let steps = lens.iter().copied().max().unwrap_or(0);
        let w = self.tokens.forward(tape, &Layout::time_major(&refs, steps))?;
        let w = tape.dropout(w, self.dropout)?;
        let mut x = w;
        for (cell, init) in self.decoder.iter().zip(self.initial_states(tape, enc.context, n)) {
            let (outs, _) = run_cell(tape, cell, x, n, &[], init, Some(w))?;
            x = tape.concat(&outs, 0)?;
        }
        let projected = self.attention.precompute(tape, enc.states)?;
        let owners = enc.layout.owners();
        let index = enc.layout.sentence_index();
        let mut contexts = Vec::with_capacity(steps);
        for t in 0..steps {
            let h = tape.slice_rows(x, t * n, n)?;
            let (ctx, _) = self
                .attention
                .attend_batched(tape, h, enc.states, projected, &owners, &index)?;
            contexts.push(ctx);
        }
        let ctx = tape.concat(&contexts, 0)?;
        let features = tape.concat(&[x, ctx], 1)?;
        let features = tape.dropout(features, self.dropout)?;
        let rows = tape.embedding(features, &valid_rows(&lens))?;
        let logits = self.output.forward(tape, rows)?;
        let targets: Vec<usize> = batch.iter().flat_map(EncodedPair::decoder_output).collect();
        Ok(BatchLoss {
            ce_sum: tape.cross_entropy_sum(logits, &targets)?,
            tokens: targets.len(),
            kl_sum: None,
        })
    }

    pub fn decode(&self, tape: &mut Tape<'_>, srcs: &[EncodedSentence], max_out: usize) -> Result<Vec<RawDecode>> {
        let enc = self.encode(tape, srcs)?;
        let n = enc.layout.batch();
        let projected = self.attention.precompute(tape, enc.states)?;
        let owners = enc.layout.owners();
        let index = enc.layout.sentence_index();
        let mut states = self.initial_states(tape, enc.context, n);
        greedy_loop(tape, &enc.layout, max_out, |tape, prev, _| {
            let w = self.tokens.forward(tape, prev)?;
            let mut x = w;
            for (cell, state) in self.decoder.iter().zip(states.iter_mut()) {
                let next = cell.step(tape, x, *state)?;
                let h = tape.add(next.h, w)?;
                *state = LstmState { h, c: next.c };
                x = h;
            }
            let (ctx, weights) = self
                .attention
                .attend_batched(tape, x, enc.states, projected, &owners, &index)?;
            let features = tape.concat(&[x, ctx], 1)?;
            Ok(StepOut {
                logits: self.output.forward(tape, features)?,
                attention: vec![weights],
            })
        })
    }
}
