use super::attention::causal_mask;
use super::{residual_norm, AttnOutput, Keys, LayerNorm, Linear, MultiHeadAttention, NormStyle};
use crate::error::Result;
use crate::tensor::{ParamStore, SemaRng, Tape, Var};

/// Two linear layers with a ReLU between them; inner width is 4× the model width.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut SemaRng) -> Self {
        Self {
            inner: Linear::new(store, &format!("{name}/ff1"), dim, 4 * dim, true, rng),
            outer: Linear::new(store, &format!("{name}/ff2"), 4 * dim, dim, true, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let h = self.inner.forward(tape, x)?;
        let h = tape.relu(h);
        self.outer.forward(tape, h)
    }
}

/// Self-attention then feedforward, each wrapped by a residual and a layer norm.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub attn: MultiHeadAttention,
    pub ffn: FeedForward,
    pub norm_attn: LayerNorm,
    pub norm_ffn: LayerNorm,
    pub style: NormStyle,
    pub dropout: f64,
}

impl EncoderBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        style: NormStyle,
        dropout: f64,
        rng: &mut SemaRng,
    ) -> Result<Self> {
        Ok(Self {
            attn: MultiHeadAttention::new(store, &format!("{name}/attn"), dim, heads, rng)?,
            ffn: FeedForward::new(store, name, dim, rng),
            norm_attn: LayerNorm::new(store, &format!("{name}/ln_attn"), dim),
            norm_ffn: LayerNorm::new(store, &format!("{name}/ln_ffn"), dim),
            style,
            dropout,
        })
    }

    /// `m = LayerNorm(MultiAttn(x)) + x; h = LayerNorm(FFNN(m)) + m` under the
    /// default style.
    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        Ok(self.forward_traced(tape, x)?.0)
    }

    /// Like [`EncoderBlock::forward`], also returning the self-attention weights.
    pub fn forward_traced(&self, tape: &mut Tape<'_>, x: Var) -> Result<(Var, Vec<Var>)> {
        self.forward_masked(tape, x, Keys::All)
    }

    /// Self-attention restricted to `keep`, used to encode several stacked
    /// sentences at once.
    pub fn forward_masked(&self, tape: &mut Tape<'_>, x: Var, keep: Keys<'_>) -> Result<(Var, Vec<Var>)> {
        let AttnOutput { out, weights } = self.attn.forward(tape, x, x, keep)?;
        let a = tape.dropout(out, self.dropout)?;
        let m = residual_norm(tape, self.style, &self.norm_attn, x, a)?;
        let f = self.ffn.forward(tape, m)?;
        let f = tape.dropout(f, self.dropout)?;
        Ok((residual_norm(tape, self.style, &self.norm_ffn, m, f)?, weights))
    }
}

/// Keys and values of every target position decoded so far.
#[derive(Clone, Debug, Default)]
pub struct SelfAttnCache {
    keys: Option<Var>,
    values: Option<Var>,
}

impl SelfAttnCache {
    pub fn len(&self, tape: &Tape<'_>) -> usize {
        self.keys.map_or(0, |k| tape.shape(k)[0])
    }
}

#[derive(Clone, Debug)]
pub struct DecoderBlockOutput {
    pub out: Var,
    pub self_weights: Vec<Var>,
    /// Per head, `len_target × len_source`.
    pub cross_weights: Vec<Var>,
}

/// Causal self-attention, attention over the encoder memory, then feedforward.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub self_attn: MultiHeadAttention,
    pub cross_attn: MultiHeadAttention,
    pub ffn: FeedForward,
    pub norm_self: LayerNorm,
    pub norm_cross: LayerNorm,
    pub norm_ffn: LayerNorm,
    pub style: NormStyle,
    pub dropout: f64,
}

impl DecoderBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        style: NormStyle,
        dropout: f64,
        rng: &mut SemaRng,
    ) -> Result<Self> {
        Ok(Self {
            self_attn: MultiHeadAttention::new(store, &format!("{name}/self"), dim, heads, rng)?,
            cross_attn: MultiHeadAttention::new(store, &format!("{name}/cross"), dim, heads, rng)?,
            ffn: FeedForward::new(store, name, dim, rng),
            norm_self: LayerNorm::new(store, &format!("{name}/ln_self"), dim),
            norm_cross: LayerNorm::new(store, &format!("{name}/ln_cross"), dim),
            norm_ffn: LayerNorm::new(store, &format!("{name}/ln_ffn"), dim),
            style,
            dropout,
        })
    }

    /// Keys and values of the encoder memory for the cross-attention.
    pub fn memory_kv(&self, tape: &mut Tape<'_>, memory: Var) -> Result<(Var, Var)> {
        self.cross_attn.project_kv(tape, memory)
    }

    /// Teacher-forced pass over a whole target prefix with a causal mask.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        y: Var,
        memory_kv: (Var, Var),
    ) -> Result<DecoderBlockOutput> {
        let len = tape.shape(y)[0];
        let keep = causal_mask(len);
        self.forward_masked(tape, y, memory_kv, Keys::Mask(&keep), Keys::All)
    }

    /// Teacher-forced pass with explicit self- and cross-attention key sets.
    pub fn forward_masked(
        &self,
        tape: &mut Tape<'_>,
        y: Var,
        memory_kv: (Var, Var),
        self_keep: Keys<'_>,
        cross_keep: Keys<'_>,
    ) -> Result<DecoderBlockOutput> {
        let own = self.self_attn.forward(tape, y, y, self_keep)?;
        self.finish(tape, y, own, memory_kv, cross_keep)
    }

    /// One new target row, attending over the cached rows plus itself.
    pub fn step(
        &self,
        tape: &mut Tape<'_>,
        y_row: Var,
        cache: &mut SelfAttnCache,
        memory_kv: (Var, Var),
    ) -> Result<DecoderBlockOutput> {
        self.step_masked(tape, y_row, cache, memory_kv, Keys::All, Keys::All)
    }

    /// One new row per stacked sentence. Cached keys are appended step-major,
    /// so the key sets select each sentence's own history and memory.
    pub fn step_masked(
        &self,
        tape: &mut Tape<'_>,
        y_row: Var,
        cache: &mut SelfAttnCache,
        memory_kv: (Var, Var),
        self_keep: Keys<'_>,
        cross_keep: Keys<'_>,
    ) -> Result<DecoderBlockOutput> {
        let (k, v) = self.self_attn.project_kv(tape, y_row)?;
        let (keys, values) = match (cache.keys, cache.values) {
            (Some(ck), Some(cv)) => (tape.concat(&[ck, k], 0)?, tape.concat(&[cv, v], 0)?),
            _ => (k, v),
        };
        cache.keys = Some(keys);
        cache.values = Some(values);
        let own = self.self_attn.attend(tape, y_row, keys, values, self_keep)?;
        self.finish(tape, y_row, own, memory_kv, cross_keep)
    }

    fn finish(
        &self,
        tape: &mut Tape<'_>,
        y: Var,
        own: AttnOutput,
        (mk, mv): (Var, Var),
        cross_keep: Keys<'_>,
    ) -> Result<DecoderBlockOutput> {
        let a = tape.dropout(own.out, self.dropout)?;
        let m1 = residual_norm(tape, self.style, &self.norm_self, y, a)?;
        let cross = self.cross_attn.attend(tape, m1, mk, mv, cross_keep)?;
        let c = tape.dropout(cross.out, self.dropout)?;
        let m2 = residual_norm(tape, self.style, &self.norm_cross, m1, c)?;
        let f = self.ffn.forward(tape, m2)?;
        let f = tape.dropout(f, self.dropout)?;
        let out = residual_norm(tape, self.style, &self.norm_ffn, m2, f)?;
        Ok(DecoderBlockOutput {
            out,
            self_weights: own.weights,
            cross_weights: cross.weights,
        })
    }
}
