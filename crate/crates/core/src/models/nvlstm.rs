use super::batch::{activity_masks, run_cell, Layout};
use super::{check_batch, greedy_loop, valid_rows, BatchLoss, EncodedPair, EncodedSentence, LatentInference, ModelConfig, RawDecode, StepOut};
use crate::error::Result;
use crate::nn::{Embedding, Linear, LstmCell, LstmState};
use crate::semantics::Vocabularies;
use crate::tensor::{ParamStore, SemaRng, Tape, Tensor, Var};

/// `½ Σ (μ² + σ² − 1 − ln σ²)` over every entry, as a one-element value.
pub fn kl_divergence(tape: &mut Tape<'_>, mu: Var, sigma: Var) -> Result<Var> {
    let n = tape.value(mu).numel() as f64;
    let m2 = tape.mul(mu, mu)?;
    let s2 = tape.mul(sigma, sigma)?;
    let ln = tape.log(s2);
    let a = tape.add(m2, s2)?;
    let a = tape.sub(a, ln)?;
    let total = tape.sum(a);
    let half = tape.scale(total, 0.5);
    Ok(tape.add_scalar(half, -0.5 * n))
}

/// Latent code of a batch, `batch × latent_dim` each.
#[derive(Clone, Copy, Debug)]
pub struct LatentSample {
    pub z: Var,
    pub mu: Option<Var>,
    pub sigma: Option<Var>,
    /// Summed over the batch; `None` when drawn from the prior.
    pub kl: Option<Var>,
}

/// Variational encoder–decoder of nested LSTMs: the source conditions an
/// encoder of the target, whose final state parameterizes `z`, and the
/// decoder reads the source again before generating with `z` appended to
/// every input.
#[derive(Clone, Debug)]
pub struct NvLstmNet {
    pub hidden: usize,
    pub latent: usize,
    pub dropout: f64,
    pub inference: LatentInference,
    pub tokens: Embedding,
    pub source_encoder: LstmCell,
    pub target_encoder: LstmCell,
    pub mu: Linear,
    pub sigma: Linear,
    pub source_decoder: LstmCell,
    pub target_decoder: LstmCell,
    pub output: Linear,
}

impl NvLstmNet {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, vocabs: &Vocabularies, rng: &mut SemaRng) -> Self {
        let (h, z) = (cfg.hidden_dim, cfg.latent_dim);
        Self {
            hidden: h,
            latent: z,
            dropout: cfg.dropout,
            inference: cfg.latent_inference,
            tokens: Embedding::new(store, "emb/token", vocabs.tokens.len(), h, cfg.embed_std, rng),
            source_encoder: LstmCell::new(store, "enc/src", h, h, rng),
            target_encoder: LstmCell::new(store, "enc/tgt", h, h, rng),
            mu: Linear::new(store, "latent/mu", h, z, true, rng),
            sigma: Linear::new(store, "latent/sigma", h, z, true, rng),
            source_decoder: LstmCell::new(store, "dec/src", h, h, rng),
            target_decoder: LstmCell::new(store, "dec/tgt", h + z, h, rng),
            output: Linear::new(store, "out", h, vocabs.tokens.len(), true, rng),
        }
    }

    fn read(
        &self,
        tape: &mut Tape<'_>,
        cell: &LstmCell,
        seqs: &[&[usize]],
        init: Option<LstmState>,
    ) -> Result<LstmState> {
        let lens: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
        let steps = lens.iter().copied().max().unwrap_or(0);
        let batch = lens.len();
        let w = self.tokens.forward(tape, &Layout::time_major(seqs, steps))?;
        let w = tape.dropout(w, self.dropout)?;
        let active = activity_masks(tape, &lens, self.hidden);
        let init = match init {
            Some(s) => s,
            None => LstmState::zeros(tape, batch, self.hidden),
        };
        Ok(run_cell(tape, cell, w, batch, &active, init, None)?.1)
    }

    /// Posterior sample given targets, otherwise a draw from the prior (or
    /// its mean, per the configured inference mode).
    pub fn latent(
        &self,
        tape: &mut Tape<'_>,
        srcs: &[&[usize]],
        tgts: Option<&[&[usize]]>,
    ) -> Result<LatentSample> {
        let batch = srcs.len();
        let Some(tgts) = tgts else {
            let z = match self.inference {
                LatentInference::Sample => Tensor::randn(&[batch, self.latent], 1.0, tape.rng()),
                LatentInference::Mean => Tensor::zeros(&[batch, self.latent]),
            };
            return Ok(LatentSample {
                z: tape.constant(z),
                mu: None,
                sigma: None,
                kl: None,
            });
        };
        let s1 = self.read(tape, &self.source_encoder, srcs, None)?;
        let s2 = self.read(tape, &self.target_encoder, tgts, Some(s1))?;
        let mu = self.mu.forward(tape, s2.h)?;
        let sigma = self.sigma.forward(tape, s2.h)?;
        let sigma = tape.softplus(sigma);
        let eps = Tensor::randn(&[batch, self.latent], 1.0, tape.rng());
        let eps = tape.constant(eps);
        let noise = tape.mul(sigma, eps)?;
        let z = tape.add(mu, noise)?;
        let kl = kl_divergence(tape, mu, sigma)?;
        Ok(LatentSample {
            z,
            mu: Some(mu),
            sigma: Some(sigma),
            kl: Some(kl),
        })
    }

    pub fn loss(&self, tape: &mut Tape<'_>, batch: &[EncodedPair]) -> Result<BatchLoss> {
        check_batch(batch)?;
        let n = batch.len();
        let srcs: Vec<&[usize]> = batch.iter().map(|p| p.src.tokens.as_slice()).collect();
        let tgts: Vec<&[usize]> = batch.iter().map(|p| p.tgt.as_slice()).collect();
        let sample = self.latent(tape, &srcs, Some(&tgts))?;
        let d1 = self.read(tape, &self.source_decoder, &srcs, None)?;
        let inputs: Vec<Vec<usize>> = batch.iter().map(EncodedPair::decoder_input).collect();
        let refs: Vec<&[usize]> = inputs.iter().map(Vec::as_slice).collect();
        let lens: Vec<usize> = inputs.iter().map(Vec::len).collect();
        let steps = lens.iter().copied().max().unwrap_or(0);
        let w = self.tokens.forward(tape, &Layout::time_major(&refs, steps))?;
        let w = tape.dropout(w, self.dropout)?;
        let mut repeat = Tensor::zeros(&[steps * n, n]);
        for r in 0..steps * n {
            repeat.data_mut()[r * n + r % n] = 1.0;
        }
        let repeat = tape.constant(repeat);
        let zs = tape.matmul(repeat, sample.z)?;
        let xs = tape.concat(&[w, zs], 1)?;
        let (outs, _) = run_cell(tape, &self.target_decoder, xs, n, &[], d1, None)?;
        let hs = tape.concat(&outs, 0)?;
        let hs = tape.dropout(hs, self.dropout)?;
        let rows = tape.embedding(hs, &valid_rows(&lens))?;
        let logits = self.output.forward(tape, rows)?;
        let targets: Vec<usize> = batch.iter().flat_map(EncodedPair::decoder_output).collect();
        Ok(BatchLoss {
            ce_sum: tape.cross_entropy_sum(logits, &targets)?,
            tokens: targets.len(),
            kl_sum: sample.kl,
        })
    }

    pub fn decode(&self, tape: &mut Tape<'_>, srcs: &[EncodedSentence], max_out: usize) -> Result<Vec<RawDecode>> {
        check_batch(srcs)?;
        let layout = Layout::new(srcs.iter().map(EncodedSentence::len).collect());
        let toks: Vec<&[usize]> = srcs.iter().map(|s| s.tokens.as_slice()).collect();
        let z = self.latent(tape, &toks, None)?.z;
        let mut state = self.read(tape, &self.source_decoder, &toks, None)?;
        greedy_loop(tape, &layout, max_out, |tape, prev, _| {
            let w = self.tokens.forward(tape, prev)?;
            let x = tape.concat(&[w, z], 1)?;
            state = self.target_decoder.step(tape, x, state)?;
            Ok(StepOut {
                logits: self.output.forward(tape, state.h)?,
                attention: Vec::new(),
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kl_of(mu: &[f64], sigma: &[f64]) -> f64 {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store, 0);
        let m = tape.constant(Tensor::matrix(1, mu.len(), mu.to_vec()).unwrap());
        let s = tape.constant(Tensor::matrix(1, sigma.len(), sigma.to_vec()).unwrap());
        let kl = kl_divergence(&mut tape, m, s).unwrap();
        tape.value(kl).data()[0]
    }

    #[test]
    fn standard_normal_has_zero_kl() {
        assert!(kl_of(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]).abs() < 1e-15);
    }

    #[test]
    fn kl_closed_form() {
        assert!((kl_of(&[1.0, 0.0], &[1.0, 1.0]) - 0.5).abs() < 1e-15);
        // independent closed form per coordinate: ½(μ² + σ² − 1) − ln σ
        let (mu, s) = ([0.3, -1.2], [0.5, 2.0]);
        let want: f64 = mu
            .iter()
            .zip(&s)
            .map(|(m, s): (&f64, &f64)| 0.5 * (m * m + s * s - 1.0) - s.ln())
            .sum();
        assert!((kl_of(&mu, &s) - want).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn kl_is_non_negative(
            mu in proptest::collection::vec(-5.0f64..5.0, 1..6),
            raw in proptest::collection::vec(0.01f64..5.0, 6),
        ) {
            let sigma = &raw[..mu.len()];
            proptest::prop_assert!(kl_of(&mu, sigma) >= -1e-12);
        }
    }
}
