use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{AttentionTrace, BatchLoss, Channel, EncodedPair, EncodedSentence, Family, ModelConfig, NvLstmNet, RawDecode, SrLstmNet, TransformerNet};
use crate::error::{Error, Result};
use crate::semantics::{AnnotatedSentence, ParaphrasePair, Vocab, Vocabularies, WordVectors};
use crate::tensor::{checkpoint, rng_from_seed, ParamStore, Tape};

/// Rows of the sinusoidal position table; bounds target length at decode time.
pub const PE_TABLE_LEN: usize = 512;

const CHECKPOINT_FILE: &str = "model.ckpt";
const META_FILE: &str = "model.meta";
const VOCAB_FILES: [&str; 3] = ["vocab.tokens", "vocab.frames", "vocab.roles"];

#[derive(Clone, Debug)]
pub enum Network {
    Transformer(TransformerNet),
    SrLstm(SrLstmNet),
    NvLstm(NvLstmNet),
}

impl Network {
    pub fn loss(&self, tape: &mut Tape<'_>, batch: &[EncodedPair]) -> Result<BatchLoss> {
        match self {
            Network::Transformer(n) => n.loss(tape, batch),
            Network::SrLstm(n) => n.loss(tape, batch),
            Network::NvLstm(n) => n.loss(tape, batch),
        }
    }

    pub fn decode(
        &self,
        tape: &mut Tape<'_>,
        srcs: &[EncodedSentence],
        max_out: usize,
    ) -> Result<Vec<RawDecode>> {
        match self {
            Network::Transformer(n) => n.decode(tape, srcs, max_out),
            Network::SrLstm(n) => n.decode(tape, srcs, max_out),
            Network::NvLstm(n) => n.decode(tape, srcs, max_out),
        }
    }
}

/// A decoded sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    /// Emitted ids, EOS included when produced.
    pub ids: Vec<usize>,
    /// Emitted words up to (not including) EOS.
    pub tokens: Vec<String>,
    pub truncated: bool,
    pub trace: AttentionTrace,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSummary {
    pub family: Family,
    pub num_params: usize,
    pub num_tensors: usize,
    pub num_encoders: usize,
}

/// A network, its parameters and the vocabularies it is bound to.
#[derive(Clone, Debug)]
pub struct Seq2Seq {
    pub config: ModelConfig,
    pub vocabs: Vocabularies,
    pub net: Network,
    pub params: ParamStore,
}

impl Seq2Seq {
    /// Builds a freshly initialized model; initialization draws from `config.seed`.
    pub fn new(config: ModelConfig, vocabs: Vocabularies) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = rng_from_seed(config.seed);
        let net = match config.family {
            Family::Transformer | Family::TransformerPb => Network::Transformer(TransformerNet::new(
                &mut params,
                &config,
                &vocabs,
                PE_TABLE_LEN,
                &mut rng,
            )?),
            Family::SrLstm | Family::SrLstmPb => {
                Network::SrLstm(SrLstmNet::new(&mut params, &config, &vocabs, &mut rng))
            }
            Family::NvLstm => Network::NvLstm(NvLstmNet::new(&mut params, &config, &vocabs, &mut rng)),
        };
        Ok(Self {
            config,
            vocabs,
            net,
            params,
        })
    }

    pub fn describe(&self) -> ModelSummary {
        let num_encoders = match &self.net {
            Network::Transformer(n) => n.encoders.len(),
            Network::SrLstm(n) => n.encoders.len(),
            Network::NvLstm(_) => 1,
        };
        ModelSummary {
            family: self.config.family,
            num_params: self.params.num_scalars(),
            num_tensors: self.params.len(),
            num_encoders,
        }
    }

    /// Overwrites the token embedding rows of words found in `vectors`; the
    /// rest keep their random initialization. Returns how many rows were set.
    pub fn load_embeddings(&mut self, vectors: &WordVectors) -> Result<usize> {
        let id = self
            .params
            .find("emb/token")
            .ok_or_else(|| Error::contract("model has no token embedding table"))?;
        let table = &mut self.params.get_mut(id).value;
        let width = table.cols();
        if vectors.dim != width {
            return Err(Error::Config(format!(
                "word vectors have {} components but the token embedding width is {width}",
                vectors.dim
            )));
        }
        let mut set = 0;
        for (i, word) in self.vocabs.tokens.words().iter().enumerate() {
            if let Some(v) = vectors.vectors.get(word) {
                table.data_mut()[i * width..(i + 1) * width].copy_from_slice(v);
                set += 1;
            }
        }
        Ok(set)
    }

    /// Truncates to `max_len` and maps every channel to ids.
    pub fn encode_sentence(&self, s: &AnnotatedSentence) -> Result<EncodedSentence> {
        if s.tokens.len() != s.frames.len() || s.tokens.len() != s.roles.len() {
            return Err(Error::Alignment {
                index: s.tokens.len().min(s.frames.len()).min(s.roles.len()),
                tokens: s.tokens.len(),
                frames: s.frames.len(),
                roles: s.roles.len(),
            });
        }
        if s.is_empty() {
            return Err(Error::contract("empty source sentence"));
        }
        let n = s.len().min(self.config.max_len);
        Ok(EncodedSentence {
            tokens: self.vocabs.tokens.encode(&s.tokens[..n]),
            frames: self.vocabs.frames.encode(&s.frames[..n]),
            roles: self.vocabs.roles.encode(&s.roles[..n]),
        })
    }

    pub fn encode_pair(&self, p: &ParaphrasePair) -> Result<EncodedPair> {
        if p.tgt.is_empty() {
            return Err(Error::contract("empty target sentence"));
        }
        let n = p.tgt.len().min(self.config.max_len);
        Ok(EncodedPair {
            src: self.encode_sentence(&p.src)?,
            tgt: self.vocabs.tokens.encode(&p.tgt.tokens[..n]),
        })
    }

    /// Greedy decode of one sentence.
    pub fn greedy_decode(&self, src: &AnnotatedSentence, max_out: usize) -> Result<Decoded> {
        Ok(self
            .greedy_decode_batch(std::slice::from_ref(src), max_out)?
            .pop()
            .expect("one result per source"))
    }

    /// Greedy decode of several sentences in one stacked pass. The decode
    /// RNG (used by nv-lstm prior sampling) is seeded from the config seed.
    pub fn greedy_decode_batch(&self, srcs: &[AnnotatedSentence], max_out: usize) -> Result<Vec<Decoded>> {
        let encoded = srcs
            .iter()
            .map(|s| self.encode_sentence(s))
            .collect::<Result<Vec<_>>>()?;
        let mut tape = Tape::inference(&self.params, self.config.seed);
        let raw = self.net.decode(&mut tape, &encoded, max_out)?;
        Ok(raw
            .into_iter()
            .zip(srcs)
            .map(|(r, s)| self.finish(r, s))
            .collect())
    }

    fn finish(&self, raw: RawDecode, src: &AnnotatedSentence) -> Decoded {
        let tokens = self.vocabs.tokens.decode(&raw.ids);
        let target = raw
            .ids
            .iter()
            .map(|&i| self.vocabs.tokens.word(i).to_string())
            .collect();
        let n = src.len().min(self.config.max_len);
        let mut channels = vec![(Channel::Token, src.tokens[..n].to_vec())];
        if self.config.family.is_multi_encoder() {
            channels.push((Channel::Frame, src.frames[..n].to_vec()));
            channels.push((Channel::Role, src.roles[..n].to_vec()));
        }
        let trace = if raw.heads.is_empty() {
            AttentionTrace::default()
        } else {
            AttentionTrace {
                target,
                heads: raw.heads,
                channels,
            }
        };
        Decoded {
            ids: raw.ids,
            tokens,
            truncated: raw.truncated,
            trace,
        }
    }

    /// Writes the checkpoint, the metadata sidecar and the vocabularies into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        checkpoint::save(&self.params, &dir.join(CHECKPOINT_FILE))?;
        let vocabs = [&self.vocabs.tokens, &self.vocabs.frames, &self.vocabs.roles];
        for (v, name) in vocabs.iter().zip(VOCAB_FILES) {
            v.save(dir.join(name))?;
        }
        let path = dir.join(META_FILE);
        fs::write(&path, self.meta_text()).map_err(|e| Error::file(&path, e))
    }

    fn meta_text(&self) -> String {
        let mut s = self.config.to_text();
        let vocabs = [&self.vocabs.tokens, &self.vocabs.frames, &self.vocabs.roles];
        for (v, name) in vocabs.iter().zip(VOCAB_FILES) {
            writeln!(s, "# {name} sha256 {}", v.hash()).expect("writing to a String");
        }
        s
    }

    /// Loads a model saved by [`Seq2Seq::save`], checking the vocabulary hashes.
    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let meta = fs::read_to_string(&meta_path).map_err(|e| Error::file(&meta_path, e))?;
        let config = ModelConfig::parse(&meta)?;
        let mut loaded = Vec::new();
        for name in VOCAB_FILES {
            let v = Vocab::load(dir.join(name))?;
            let want = meta
                .lines()
                .find_map(|l| l.strip_prefix(&format!("# {name} sha256 ")))
                .ok_or_else(|| Error::Checkpoint(format!("metadata lacks the {name} hash")))?;
            if v.hash() != want.trim() {
                return Err(Error::Checkpoint(format!("{name} does not match the metadata hash")));
            }
            loaded.push(v);
        }
        let roles = loaded.pop().expect("three vocabularies");
        let frames = loaded.pop().expect("three vocabularies");
        let tokens = loaded.pop().expect("three vocabularies");
        let mut model = Self::new(
            config,
            Vocabularies {
                tokens,
                frames,
                roles,
            },
        )?;
        checkpoint::load_into(&mut model.params, &dir.join(CHECKPOINT_FILE))?;
        Ok(model)
    }
}
