use std::rc::Rc;

use super::Linear;
use crate::error::{Error, Result};
use crate::tensor::{KeyIndex, ParamStore, SemaRng, Tape, Var};

/// Which keys each query row sees.
#[derive(Clone, Copy, Debug)]
pub enum Keys<'a> {
    All,
    /// Row-major `len_q × len_k` mask; `false` hides a key from a query.
    Mask(&'a [bool]),
    /// Per-row key lists; weights come out `len_q × index.width()`.
    Index(&'a Rc<KeyIndex>),
}

/// Scaled dot-product attention over `num_heads` column slices of the
/// projected queries, keys and values, followed by an output projection.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub num_heads: usize,
    pub model_dim: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

/// Output rows plus one `len_q × len_k` weight matrix per head.
#[derive(Clone, Debug)]
pub struct AttnOutput {
    pub out: Var,
    pub weights: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        model_dim: usize,
        num_heads: usize,
        rng: &mut SemaRng,
    ) -> Result<Self> {
        if num_heads == 0 || !model_dim.is_multiple_of(num_heads) {
            return Err(Error::Config(format!(
                "model_dim {model_dim} is not divisible by {num_heads} heads"
            )));
        }
        Ok(Self {
            num_heads,
            model_dim,
            query: Linear::new(store, &format!("{name}/q"), model_dim, model_dim, true, rng),
            key: Linear::new(store, &format!("{name}/k"), model_dim, model_dim, true, rng),
            value: Linear::new(store, &format!("{name}/v"), model_dim, model_dim, true, rng),
            output: Linear::new(store, &format!("{name}/o"), model_dim, model_dim, true, rng),
        })
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    /// Projects the attended-over rows into keys and values.
    pub fn project_kv(&self, tape: &mut Tape<'_>, kv_in: Var) -> Result<(Var, Var)> {
        let k = self.key.forward(tape, kv_in)?;
        let v = self.value.forward(tape, kv_in)?;
        Ok((k, v))
    }

    /// Full attention: `q_in` attends over `kv_in`.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        q_in: Var,
        kv_in: Var,
        keep: Keys<'_>,
    ) -> Result<AttnOutput> {
        let (k, v) = self.project_kv(tape, kv_in)?;
        self.attend(tape, q_in, k, v, keep)
    }

    /// Attention of `q_in` over already projected keys and values.
    pub fn attend(
        &self,
        tape: &mut Tape<'_>,
        q_in: Var,
        k: Var,
        v: Var,
        keep: Keys<'_>,
    ) -> Result<AttnOutput> {
        let q = self.query.forward(tape, q_in)?;
        let index_keep = match keep {
            Keys::Index(index) => Some(index.keep()),
            _ => None,
        };
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.num_heads);
        let mut weights = Vec::with_capacity(self.num_heads);
        for h in 0..self.num_heads {
            let (qh, kh, vh) = if self.num_heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, h * dh, dh)?,
                    tape.slice_cols(k, h * dh, dh)?,
                    tape.slice_cols(v, h * dh, dh)?,
                )
            };
            let (w, mixed) = match keep {
                Keys::Index(index) => {
                    let scores = tape.gather_scores(qh, kh, index)?;
                    let scores = tape.scale(scores, scale);
                    let w = tape.masked_softmax(scores, index_keep.as_deref().expect("index mask"))?;
                    (w, tape.gather_mix(w, vh, index)?)
                }
                dense => {
                    let scores = tape.matmul_nt(qh, kh)?;
                    let scores = tape.scale(scores, scale);
                    let w = match dense {
                        Keys::Mask(mask) => tape.masked_softmax(scores, mask)?,
                        _ => tape.softmax(scores, 1)?,
                    };
                    (w, tape.matmul(w, vh)?)
                }
            };
            heads.push(mixed);
            weights.push(w);
        }
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat(&heads, 1)?
        };
        let out = self.output.forward(tape, merged)?;
        Ok(AttnOutput { out, weights })
    }
}

/// Lower-triangular mask: query `i` sees keys `0..=i`.
pub fn causal_mask(len: usize) -> Vec<bool> {
    let mut keep = vec![false; len * len];
    for i in 0..len {
        keep[i * len..=i * len + i].fill(true);
    }
    keep
}
