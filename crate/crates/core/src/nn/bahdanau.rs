use std::rc::Rc;

use super::Linear;
use crate::error::{Error, Result};
use crate::tensor::{KeyIndex, ParamStore, SemaRng, Tape, Tensor, Var};

/// Additive attention: `score_j = v · tanh(W_d s + W_e h_j + b)`.
#[derive(Clone, Debug)]
pub struct BahdanauAttention {
    pub decoder: Linear,
    pub encoder: Linear,
    pub score: Linear,
}

impl BahdanauAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        decoder_dim: usize,
        encoder_dim: usize,
        attn_dim: usize,
        rng: &mut SemaRng,
    ) -> Self {
        Self {
            decoder: Linear::new(store, &format!("{name}/wd"), decoder_dim, attn_dim, false, rng),
            encoder: Linear::new(store, &format!("{name}/we"), encoder_dim, attn_dim, true, rng),
            score: Linear::new(store, &format!("{name}/v"), attn_dim, 1, false, rng),
        }
    }

    /// `W_e h_j + b` for all encoder states; reusable across decoder steps.
    pub fn precompute(&self, tape: &mut Tape<'_>, encoder_states: Var) -> Result<Var> {
        if tape.shape(encoder_states)[0] == 0 {
            return Err(Error::contract("no encoder states to attend over"));
        }
        self.encoder.forward(tape, encoder_states)
    }

    /// Returns `(context 1 × encoder_dim, weights len × 1)`.
    pub fn attend(
        &self,
        tape: &mut Tape<'_>,
        decoder_state: Var,
        encoder_states: Var,
        projected: Var,
    ) -> Result<(Var, Var)> {
        let d = self.decoder.forward(tape, decoder_state)?;
        let e = tape.add_row(projected, d)?;
        let e = tape.tanh(e);
        let scores = self.score.forward(tape, e)?;
        let weights = tape.softmax(scores, 0)?;
        let wt = tape.transpose(weights)?;
        let context = tape.matmul(wt, encoder_states)?;
        Ok((context, weights))
    }

    /// Attention for `B` decoder states at once over stacked encoder states.
    /// `owners[r]` is the sentence of encoder row `r`; `index` lists each
    /// sentence's rows. Returns `(contexts B × encoder_dim, weights B × width)`.
    pub fn attend_batched(
        &self,
        tape: &mut Tape<'_>,
        decoder_states: Var,
        encoder_states: Var,
        projected: Var,
        owners: &[usize],
        index: &Rc<KeyIndex>,
    ) -> Result<(Var, Var)> {
        let batch = tape.shape(decoder_states)[0];
        let d = self.decoder.forward(tape, decoder_states)?;
        let d = tape.embedding(d, owners)?;
        let e = tape.add(projected, d)?;
        let e = tape.tanh(e);
        let scores = self.score.forward(tape, e)?;
        let ones = tape.constant(Tensor::full(&[batch, 1], 1.0));
        let scores = tape.gather_scores(ones, scores, index)?;
        let weights = tape.masked_softmax(scores, &index.keep())?;
        let context = tape.gather_mix(weights, encoder_states, index)?;
        Ok((context, weights))
    }

    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        decoder_state: Var,
        encoder_states: Var,
    ) -> Result<(Var, Var)> {
        let projected = self.precompute(tape, encoder_states)?;
        self.attend(tape, decoder_state, encoder_states, projected)
    }
}
