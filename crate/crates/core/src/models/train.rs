use super::{DecayMode, EncodedPair, Network, Seq2Seq};
use crate::error::{Error, Result};
use crate::semantics::ParaphrasePair;
use crate::tensor::{ParamStore, Tape, Tensor, Var};

/// Adam with bias correction. Moments are created on a parameter's first
/// gradient; parameters without a gradient in a step are left untouched.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(&mut self, params: &mut ParamStore, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powf(self.t as f64);
        let c2 = 1.0 - self.beta2.powf(self.t as f64);
        if self.m.len() < params.len() {
            self.m.resize(params.len(), None);
            self.v.resize(params.len(), None);
        }
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let p = params.get_mut(id);
            let Some(g) = &p.grad else { continue };
            let i = id.index();
            let m = self.m[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
            for (((w, &g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Losses of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    /// Mean cross-entropy per target token.
    pub ce: f64,
    /// Mean KL per pair (0 for families without a latent).
    pub kl: f64,
    /// The optimized objective, `ce + kl_scale · kl`.
    pub loss: f64,
    pub grad_norm: f64,
}

/// Scalar training objective of a batch: mean token cross-entropy plus
/// `kl_scale` times the mean per-pair KL. Returns `(objective, ce, kl)`.
pub fn objective(
    tape: &mut Tape<'_>,
    net: &Network,
    batch: &[EncodedPair],
    kl_scale: f64,
) -> Result<(Var, Var, Option<Var>)> {
    let bl = net.loss(tape, batch)?;
    let ce = tape.scale(bl.ce_sum, 1.0 / bl.tokens as f64);
    match bl.kl_sum {
        Some(k) => {
            let mean = tape.scale(k, 1.0 / batch.len() as f64);
            let weighted = tape.scale(mean, kl_scale);
            Ok((tape.add(ce, weighted)?, ce, Some(mean)))
        }
        None => Ok((ce, ce, None)),
    }
}

/// Owns a model and its optimizer state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Seq2Seq,
    adam: Adam,
    step: u64,
    epoch: u64,
}

impl Trainer {
    pub fn new(model: Seq2Seq) -> Self {
        Self {
            model,
            adam: Adam::new(),
            step: 0,
            epoch: 0,
        }
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Linear warmup to the base rate, then `lr_decay` per finished epoch in
    /// schedule mode.
    pub fn learning_rate(&self) -> f64 {
        let c = &self.model.config;
        let warm = if c.warmup_steps == 0 {
            1.0
        } else {
            ((self.step + 1) as f64 / c.warmup_steps as f64).min(1.0)
        };
        let decay = match c.decay_mode {
            DecayMode::Schedule => c.lr_decay.powf(self.epoch as f64),
            DecayMode::L2 => 1.0,
        };
        c.learning_rate * warm * decay
    }

    /// KL weight, ramped linearly from 0 over the first `kl_anneal` fraction of `total_steps`.
    pub fn kl_scale(&self) -> f64 {
        let c = &self.model.config;
        let ramp = c.kl_anneal * c.total_steps as f64;
        if ramp < 1.0 {
            c.kl_weight
        } else {
            c.kl_weight * ((self.step + 1) as f64 / ramp).min(1.0)
        }
    }

    pub fn end_epoch(&mut self) {
        self.epoch += 1;
    }

    pub fn train_step(&mut self, batch: &[ParaphrasePair]) -> Result<LossReport> {
        let encoded = batch
            .iter()
            .map(|p| self.model.encode_pair(p))
            .collect::<Result<Vec<_>>>()?;
        self.train_step_encoded(&encoded)
    }

    /// One teacher-forced forward/backward pass over the batch and one Adam step.
    pub fn train_step_encoded(&mut self, batch: &[EncodedPair]) -> Result<LossReport> {
        if batch.is_empty() {
            return Err(Error::contract("empty training batch"));
        }
        let cfg = &self.model.config;
        let seed = cfg.seed ^ (self.step + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let kl_scale = self.kl_scale();
        let (grads, ce, kl, loss) = {
            let mut tape = Tape::new(&self.model.params, seed).train(true);
            let (total, ce, kl) = objective(&mut tape, &self.model.net, batch, kl_scale)?;
            let kl = kl.map_or(0.0, |k| tape.value(k).data()[0]);
            let (ce_v, loss) = (tape.value(ce).data()[0], tape.value(total).data()[0]);
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    step: self.step,
                    loss,
                });
            }
            (tape.backward(total)?, ce_v, kl, loss)
        };
        let params = &mut self.model.params;
        params.zero_grads();
        params.accumulate(&grads);
        let l2 = match cfg.decay_mode {
            DecayMode::L2 => 1.0 - cfg.lr_decay,
            DecayMode::Schedule => 0.0,
        };
        let ids: Vec<_> = params.ids().collect();
        let mut sq = 0.0;
        for &id in &ids {
            let p = params.get_mut(id);
            if let Some(g) = &mut p.grad {
                if l2 > 0.0 {
                    for (g, w) in g.data_mut().iter_mut().zip(p.value.data()) {
                        *g += l2 * w;
                    }
                }
                sq += g.data().iter().map(|x| x * x).sum::<f64>();
            }
        }
        let norm = sq.sqrt();
        if !norm.is_finite() {
            return Err(Error::Divergence {
                step: self.step,
                loss: norm,
            });
        }
        if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
            let f = cfg.grad_clip / norm;
            for &id in &ids {
                if let Some(g) = &mut params.get_mut(id).grad {
                    g.data_mut().iter_mut().for_each(|x| *x *= f);
                }
            }
        }
        let lr = self.learning_rate();
        self.adam.step(&mut self.model.params, lr);
        if !self.model.params.iter().all(|(_, p)| p.value.all_finite()) {
            return Err(Error::Divergence {
                step: self.step,
                loss: f64::INFINITY,
            });
        }
        self.step += 1;
        Ok(LossReport {
            ce,
            kl,
            loss,
            grad_norm: norm,
        })
    }
}
