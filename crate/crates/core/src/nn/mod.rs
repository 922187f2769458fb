//! Reusable layers built on the gradient tape.
//!
//! Layers are parameter containers: they register their tensors in a
//! [`ParamStore`] at construction and hold only [`ParamId`]s, so a forward pass
//! needs nothing but a [`Tape`] borrowing that store.

mod attention;
mod bahdanau;
mod lstm;
mod positional;
mod transformer;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::{ParamId, ParamStore, SemaRng, Tape, Tensor, Var};

pub use attention::{causal_mask, AttnOutput, Keys, MultiHeadAttention};
pub use bahdanau::BahdanauAttention;
pub use lstm::{LstmCell, LstmState};
pub use positional::PositionalEncoder;
pub use transformer::{DecoderBlock, DecoderBlockOutput, EncoderBlock, FeedForward, SelfAttnCache};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Where layer normalization sits relative to the residual connection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormStyle {
    /// `out = LayerNorm(sublayer(x)) + x`
    #[default]
    Paper,
    /// `out = LayerNorm(x + sublayer(x))`
    Post,
}

impl std::str::FromStr for NormStyle {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Self::Paper),
            "post" => Ok(Self::Post),
            other => Err(format!("unknown norm style {other:?} (paper|post)")),
        }
    }
}

impl std::fmt::Display for NormStyle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Paper => "paper",
            Self::Post => "post",
        })
    }
}

/// Glorot-uniform initialized `in_dim × out_dim` weight.
pub fn xavier(in_dim: usize, out_dim: usize, rng: &mut SemaRng) -> Tensor {
    let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
    Tensor::uniform(&[in_dim, out_dim], -limit, limit, rng)
}

/// `x · W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut SemaRng,
    ) -> Self {
        let weight = store.add(format!("{name}/w"), xavier(in_dim, out_dim, rng));
        let bias = bias.then(|| store.add(format!("{name}/b"), Tensor::zeros(&[out_dim])));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = self.bias.map(|b| tape.param(b));
        tape.linear(x, w, b)
    }
}

/// Gain and bias of a layer normalization.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}/gain"), Tensor::full(&[dim], 1.0)),
            bias: store.add(format!("{name}/bias"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        tape.layer_norm(x, g, b, LAYER_NORM_EPS)
    }
}

/// Combines a sublayer output with its residual input per `style`.
pub fn residual_norm(
    tape: &mut Tape<'_>,
    style: NormStyle,
    norm: &LayerNorm,
    residual: Var,
    sublayer: Var,
) -> Result<Var> {
    match style {
        NormStyle::Paper => {
            let n = norm.forward(tape, sublayer)?;
            tape.add(n, residual)
        }
        NormStyle::Post => {
            let s = tape.add(residual, sublayer)?;
            norm.forward(tape, s)
        }
    }
}

/// A lookup table of `vocab × dim` embeddings.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        vocab: usize,
        dim: usize,
        std: f64,
        rng: &mut SemaRng,
    ) -> Self {
        let table = store.add(name.to_string(), Tensor::randn(&[vocab, dim], std, rng));
        Self { table, vocab, dim }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, ids: &[usize]) -> Result<Var> {
        let t = tape.param(self.table);
        tape.embedding(t, ids)
    }
}
