//! Client-side work for one round.

use rand::seq::SliceRandom;

use super::config::BitDepth;
use super::data::Dataset;
use super::model::{loss_and_grad, DropoutLayer, DropoutPlan, ModelParams};
use super::optim::Optimizer;
use super::seed::{rng_for, SimRng};
use crate::codec::{compute_innovation, quantize, Payload, ReferenceGradient};
use crate::dropout::DropoutConfig;
use crate::error::{Error, Result};
use crate::gate::{l2_norm, Decision, GateState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalSettings {
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: Option<(DropoutConfig, DropoutLayer)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalGradient {
    /// Mean cross-entropy gradient over the local pass.
    pub gradient: Vec<f64>,
    pub loss: f64,
    /// `dropped columns x batch rows x 32`, summed over batches.
    pub feature_bits_saved: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Upload {
    pub client: usize,
    pub bytes: Vec<u8>,
    pub bits: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientRound {
    pub upload: Option<Upload>,
    pub decision: Decision,
    pub gradient: Vec<f64>,
    pub loss: f64,
    pub norm: f64,
    pub feature_bits_saved: u64,
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub shard: Dataset,
    pub reference: ReferenceGradient,
    pub gate: Option<GateState>,
    pub optimizer: Optimizer,
    shuffle_rng: SimRng,
    dropout_rng: SimRng,
    pub(crate) qsgd_rng: SimRng,
}

impl ClientState {
    pub fn new(id: usize, shard: Dataset, dims: usize, gate: Option<GateState>, optimizer: Optimizer, seed: u64) -> Result<Self> {
        if shard.is_empty() {
            return Err(Error::Data(format!("client {id} has an empty shard")));
        }
        Ok(Self {
            id,
            shard,
            reference: ReferenceGradient::zeros(dims),
            gate,
            optimizer,
            shuffle_rng: rng_for(seed, &format!("client/{id}/shuffle")),
            dropout_rng: rng_for(seed, &format!("client/{id}/dropout")),
            qsgd_rng: rng_for(seed, &format!("client/{id}/qsgd")),
        })
    }

    pub fn dataset_size(&self) -> usize {
        self.shard.len()
    }

    fn batches(&mut self, batch_size: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.shard.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        order.chunks(batch_size).map(<[usize]>::to_vec).collect()
    }

    fn batch_data(&self, batch: &[usize]) -> (Vec<f64>, Vec<usize>) {
        let mut x = Vec::with_capacity(batch.len() * self.shard.features());
        let mut y = Vec::with_capacity(batch.len());
        for &i in batch {
            x.extend_from_slice(self.shard.row(i));
            y.push(self.shard.label(i));
        }
        (x, y)
    }

    fn batch_grad(
        &mut self,
        w: &ModelParams,
        batch: &[usize],
        dropout: Option<(DropoutConfig, DropoutLayer)>,
        grad: &mut [f64],
        round: usize,
    ) -> Result<(f64, u64)> {
        let (x, y) = self.batch_data(batch);
        let plan = dropout.as_ref().map(|(config, layer)| DropoutPlan {
            config,
            layer: *layer,
            rng: &mut self.dropout_rng,
        });
        let out = loss_and_grad(w, &x, &y, plan, grad).map_err(|e| match e {
            Error::Data(_) => Error::Diverged {
                client: self.id,
                round,
            },
            other => other,
        })?;
        Ok((out.loss_sum, out.dropped_columns as u64 * batch.len() as u64 * 32))
    }

    /// Mean gradient over `epochs` shuffled minibatch passes at fixed `w`.
    pub fn local_gradient(&mut self, w: &ModelParams, settings: &LocalSettings, round: usize) -> Result<LocalGradient> {
        let mut grad = vec![0.0; w.dims()];
        let mut loss = 0.0;
        let mut saved = 0;
        for _ in 0..settings.epochs {
            for batch in self.batches(settings.batch_size) {
                let (l, s) = self.batch_grad(w, &batch, settings.dropout, &mut grad, round)?;
                loss += l;
                saved += s;
            }
        }
        let count = (self.shard.len() * settings.epochs) as f64;
        grad.iter_mut().for_each(|g| *g /= count);
        Ok(LocalGradient {
            gradient: grad,
            loss: loss / count,
            feature_bits_saved: saved,
        })
    }

    /// Local optimizer steps starting from `global`; the proximal term
    /// `mu/2 ||w - global||^2` is added when `mu > 0`. Returns the trained
    /// weights and the mean pre-step batch loss.
    pub fn local_train(&mut self, global: &ModelParams, settings: &LocalSettings, mu: f64, round: usize) -> Result<(ModelParams, f64)> {
        let mut w = global.clone();
        let mut grad = vec![0.0; w.dims()];
        let mut loss = 0.0;
        for _ in 0..settings.epochs {
            for batch in self.batches(settings.batch_size) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let (l, _) = self.batch_grad(&w, &batch, settings.dropout, &mut grad, round)?;
                loss += l;
                let inv = 1.0 / batch.len() as f64;
                grad.iter_mut().for_each(|g| *g *= inv);
                if mu > 0.0 {
                    add_proximal_grad(&mut grad, w.values(), global.values(), mu);
                }
                self.optimizer.step(w.values_mut(), &grad);
            }
        }
        if w.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                client: self.id,
                round,
            });
        }
        Ok((w, loss / (self.shard.len() * settings.epochs) as f64))
    }

    /// Gradient, innovation, encoding and the send/skip decision. The
    /// reference only moves when the message is sent.
    pub fn client_round(&mut self, w: &ModelParams, settings: &LocalSettings, bits: BitDepth, round: usize) -> Result<ClientRound> {
        let local = self.local_gradient(w, settings, round)?;
        let payload = match bits {
            BitDepth::Full => Payload::Full(local.gradient.iter().map(|&g| g as f32).collect()),
            BitDepth::Bits(b) => Payload::Quantized(quantize(&compute_innovation(&local.gradient, &self.reference)?, b)?),
        };
        let norm = l2_norm(&payload.reconstructed_innovation(&self.reference)?);
        let decision = match self.gate {
            None => Decision::Send { forced: false },
            Some(gate) => {
                let (decision, next) = gate.should_send(norm);
                self.gate = Some(next);
                decision
            }
        };
        let upload = if decision.is_send() {
            self.reference = payload.apply(&self.reference)?;
            Some(Upload {
                client: self.id,
                bits: payload.encoded_bits(),
                bytes: payload.encode(),
            })
        } else {
            None
        };
        Ok(ClientRound {
            upload,
            decision,
            gradient: local.gradient,
            loss: local.loss,
            norm,
            feature_bits_saved: local.feature_bits_saved,
        })
    }
}

/// Adds `mu (w - global)`, the gradient of `mu/2 ||w - global||^2`.
pub fn add_proximal_grad(grad: &mut [f64], w: &[f64], global: &[f64], mu: f64) {
    for ((g, a), b) in grad.iter_mut().zip(w).zip(global) {
        *g += mu * (a - b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::model::MlpShape;
    use crate::runtime::optim::OptimizerConfig;
    use rand::SeedableRng;

    fn client(gate: Option<GateState>) -> (ClientState, ModelParams) {
        let x: Vec<f64> = (0..40).map(|i| ((i * 37) % 11) as f64 / 5.0 - 1.0).collect();
        let y: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let shard = Dataset::new(2, 2, x, y).unwrap();
        let shape = MlpShape::new(2, 4, 2).unwrap();
        let w = ModelParams::init(shape, &mut SimRng::seed_from_u64(1));
        let c = ClientState::new(0, shard, shape.num_params(), gate, OptimizerConfig::default().build(shape.num_params()), 5).unwrap();
        (c, w)
    }

    fn settings() -> LocalSettings {
        LocalSettings {
            batch_size: 8,
            epochs: 1,
            dropout: None,
        }
    }

    #[test]
    fn zero_model_loss_is_ln2() {
        let (mut c, w) = client(None);
        let zero = ModelParams::zeros(w.shape());
        let g = c.local_gradient(&zero, &settings(), 1).unwrap();
        assert!((g.loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn duplicating_samples_keeps_the_mean_gradient() {
        let (mut c, w) = client(None);
        let g1 = c.local_gradient(&w, &settings(), 1).unwrap();
        let idx: Vec<usize> = (0..c.shard.len()).chain(0..c.shard.len()).collect();
        c.shard = c.shard.subset(&idx);
        let g2 = c.local_gradient(&w, &settings(), 1).unwrap();
        for (a, b) in g1.gradient.iter().zip(&g2.gradient) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn first_round_innovation_is_the_gradient() {
        let (mut c, w) = client(None);
        let mut probe = c.clone();
        let g = probe.local_gradient(&w, &settings(), 1).unwrap();
        let r = c.client_round(&w, &settings(), BitDepth::Full, 1).unwrap();
        let expected: Vec<f64> = g.gradient.iter().map(|&v| v as f32 as f64).collect();
        assert_eq!(c.reference.values(), expected.as_slice());
        assert_eq!(r.upload.unwrap().bits, 32 * w.dims() as u64 + 8);
    }

    #[test]
    fn unchanged_gradient_skips_then_forces() {
        let tau = 3;
        let (mut c, w) = client(Some(GateState::new(1e-9, tau).unwrap()));
        // full batch, so the gradient is identical each round
        let s = LocalSettings {
            batch_size: 64,
            ..settings()
        };
        let r = c.client_round(&w, &s, BitDepth::Full, 1).unwrap();
        assert_eq!(r.decision, Decision::Send { forced: false });
        for round in 2..=tau as usize {
            let r = c.client_round(&w, &s, BitDepth::Full, round).unwrap();
            assert_eq!(r.decision, Decision::Skip, "round {round}");
            assert!(r.upload.is_none());
        }
        let r = c.client_round(&w, &s, BitDepth::Full, tau as usize + 1).unwrap();
        assert_eq!(r.decision, Decision::Send { forced: true });
    }

    #[test]
    fn skipped_round_leaves_reference() {
        let (mut c, w) = client(Some(GateState::new(1e9, 5).unwrap()));
        let before = c.reference.clone();
        let r = c.client_round(&w, &settings(), BitDepth::Bits(4), 1).unwrap();
        assert_eq!(r.decision, Decision::Skip);
        assert!(c.reference.bitwise_eq(&before));
    }

    #[test]
    fn proximal_gradient_matches_finite_differences() {
        let w = [0.3, -1.2, 2.0];
        let g0 = [1.0, 0.5, -0.25];
        let mu = 0.7;
        let f = |v: &[f64]| 0.5 * mu * v.iter().zip(&g0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let mut grad = vec![0.0; 3];
        add_proximal_grad(&mut grad, &w, &g0, mu);
        for i in 0..3 {
            let h = 1e-5;
            let mut p = w;
            p[i] += h;
            let mut m = w;
            m[i] -= h;
            assert!(((f(&p) - f(&m)) / (2.0 * h) - grad[i]).abs() < 1e-6);
        }
        let mut at_global = vec![0.0; 3];
        add_proximal_grad(&mut at_global, &g0, &g0, mu);
        assert_eq!(at_global, vec![0.0; 3]);
    }
}
