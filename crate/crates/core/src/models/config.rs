use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::NormStyle;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Transformer,
    TransformerPb,
    SrLstm,
    SrLstmPb,
    NvLstm,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Transformer,
        Family::TransformerPb,
        Family::SrLstm,
        Family::SrLstmPb,
        Family::NvLstm,
    ];

    /// Families with separate frame and role encoders.
    pub fn is_multi_encoder(self) -> bool {
        matches!(self, Family::TransformerPb | Family::SrLstmPb)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Transformer => "transformer",
            Family::TransformerPb => "transformer_pb",
            Family::SrLstm => "sr_lstm",
            Family::SrLstmPb => "sr_lstm_pb",
            Family::NvLstm => "nv_lstm",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().replace('-', "_");
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == norm)
            .ok_or_else(|| Error::Config(format!("unknown family {s:?}")))
    }
}

/// Which semantic channels feed a multi-encoder model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum ChannelMask {
    #[default]
    None,
    FrameOnly,
    RoleOnly,
    Both,
}

impl ChannelMask {
    pub const ALL: [ChannelMask; 4] = [
        ChannelMask::None,
        ChannelMask::FrameOnly,
        ChannelMask::RoleOnly,
        ChannelMask::Both,
    ];

    pub fn frames(self) -> bool {
        matches!(self, ChannelMask::FrameOnly | ChannelMask::Both)
    }

    pub fn roles(self) -> bool {
        matches!(self, ChannelMask::RoleOnly | ChannelMask::Both)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelMask::None => "none",
            ChannelMask::FrameOnly => "frame_only",
            ChannelMask::RoleOnly => "role_only",
            ChannelMask::Both => "both",
        }
    }
}

impl fmt::Display for ChannelMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChannelMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().replace('-', "_");
        ChannelMask::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| Error::Config(format!("unknown channel mask {s:?}")))
    }
}

/// How the `lr_decay` factor is applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DecayMode {
    /// Learning rate multiplied by `lr_decay` after every epoch.
    #[default]
    Schedule,
    /// Constant learning rate after warmup plus an L2 penalty of `1 - lr_decay`.
    L2,
}

impl fmt::Display for DecayMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecayMode::Schedule => "schedule",
            DecayMode::L2 => "l2",
        })
    }
}

impl FromStr for DecayMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "schedule" => Ok(DecayMode::Schedule),
            "l2" => Ok(DecayMode::L2),
            other => Err(Error::Config(format!("unknown decay mode {other:?}"))),
        }
    }
}

/// How the nv-lstm latent is chosen at inference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LatentInference {
    /// `z ~ N(0, I)` from the seeded decode RNG.
    #[default]
    Sample,
    /// `z = 0`, the prior mean.
    Mean,
}

impl fmt::Display for LatentInference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LatentInference::Sample => "sample",
            LatentInference::Mean => "mean",
        })
    }
}

impl FromStr for LatentInference {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sample" => Ok(LatentInference::Sample),
            "mean" => Ok(LatentInference::Mean),
            other => Err(Error::Config(format!("unknown latent inference {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub family: Family,
    /// Encoder and decoder blocks (transformer) or stacked layers (LSTMs).
    pub num_blocks: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub channel_mask: ChannelMask,
    pub max_len: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub lr_decay: f64,
    pub decay_mode: DecayMode,
    pub grad_clip: f64,
    pub latent_dim: usize,
    pub kl_weight: f64,
    /// Fraction of `total_steps` over which the KL weight ramps from 0.
    pub kl_anneal: f64,
    /// Planned optimizer steps; only used by the KL anneal.
    pub total_steps: usize,
    pub latent_inference: LatentInference,
    pub norm_style: NormStyle,
    pub embed_std: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            family: Family::Transformer,
            num_blocks: 2,
            num_heads: 4,
            model_dim: 256,
            hidden_dim: 256,
            dropout: 0.1,
            channel_mask: ChannelMask::None,
            max_len: 15,
            learning_rate: 1e-3,
            warmup_steps: 500,
            lr_decay: 0.99,
            decay_mode: DecayMode::Schedule,
            grad_clip: 5.0,
            latent_dim: 64,
            kl_weight: 1.0,
            kl_anneal: 0.2,
            total_steps: 10_000,
            latent_inference: LatentInference::Sample,
            norm_style: NormStyle::Paper,
            embed_std: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Defaults for `family`; multi-encoder families use both channels.
    pub fn for_family(family: Family) -> Self {
        Self {
            family,
            channel_mask: if family.is_multi_encoder() {
                ChannelMask::Both
            } else {
                ChannelMask::None
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.channel_mask != ChannelMask::None && !self.family.is_multi_encoder() {
            return fail(format!(
                "channel_mask {} needs a multi-encoder family, not {}",
                self.channel_mask, self.family
            ));
        }
        if self.max_len == 0 {
            return fail("max_len must be at least 1".into());
        }
        if self.num_blocks == 0 || self.model_dim == 0 || self.hidden_dim == 0 || self.latent_dim == 0 {
            return fail("num_blocks and all dimensions must be positive".into());
        }
        if matches!(self.family, Family::Transformer | Family::TransformerPb)
            && (self.num_heads == 0 || !self.model_dim.is_multiple_of(self.num_heads))
        {
            return fail(format!(
                "model_dim {} is not divisible by num_heads {}",
                self.model_dim, self.num_heads
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail("learning_rate must be positive and lr_decay in (0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.kl_anneal) {
            return fail("kl_anneal must be in [0, 1]".into());
        }
        Ok(())
    }

    /// `key = value` lines in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("family", self.family.to_string()),
            ("num_blocks", self.num_blocks.to_string()),
            ("num_heads", self.num_heads.to_string()),
            ("model_dim", self.model_dim.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("dropout", fmt_f64(self.dropout)),
            ("channel_mask", self.channel_mask.to_string()),
            ("max_len", self.max_len.to_string()),
            ("learning_rate", fmt_f64(self.learning_rate)),
            ("warmup_steps", self.warmup_steps.to_string()),
            ("lr_decay", fmt_f64(self.lr_decay)),
            ("decay_mode", self.decay_mode.to_string()),
            ("grad_clip", fmt_f64(self.grad_clip)),
            ("latent_dim", self.latent_dim.to_string()),
            ("kl_weight", fmt_f64(self.kl_weight)),
            ("kl_anneal", fmt_f64(self.kl_anneal)),
            ("total_steps", self.total_steps.to_string()),
            ("latent_inference", self.latent_inference.to_string()),
            ("norm_style", self.norm_style.to_string()),
            ("embed_std", fmt_f64(self.embed_std)),
            ("seed", self.seed.to_string()),
        ]
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
        }
        match key.trim() {
            "family" => self.family = value.parse()?,
            "num_blocks" => self.num_blocks = num(key, value)?,
            "num_heads" => self.num_heads = num(key, value)?,
            "model_dim" => self.model_dim = num(key, value)?,
            "hidden_dim" => self.hidden_dim = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "channel_mask" => self.channel_mask = value.parse()?,
            "max_len" => self.max_len = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "warmup_steps" => self.warmup_steps = num(key, value)?,
            "lr_decay" => self.lr_decay = num(key, value)?,
            "decay_mode" => self.decay_mode = value.parse()?,
            "grad_clip" => self.grad_clip = num(key, value)?,
            "latent_dim" => self.latent_dim = num(key, value)?,
            "kl_weight" => self.kl_weight = num(key, value)?,
            "kl_anneal" => self.kl_anneal = num(key, value)?,
            "total_steps" => self.total_steps = num(key, value)?,
            "latent_inference" => self.latent_inference = value.parse()?,
            "norm_style" => self.norm_style = value.trim().parse().map_err(Error::Config)?,
            "embed_std" => self.embed_std = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::at_line(i + 1, Error::Config(format!("expected key = value, got {line:?}")))
            })?;
            self.set(k, v).map_err(|e| Error::at_line(i + 1, e))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }
}

/// Shortest text that parses back to the same value.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}
