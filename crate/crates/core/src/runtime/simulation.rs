//! The round loop for every scheme.

use rand::seq::index::sample;

use super::client::{ClientState, LocalSettings};
use super::config::{BitDepth, CommEps, Scheme, SimConfig};
use super::data::Dataset;
use super::metrics::RoundMetrics;
use super::model::{evaluate, DropoutLayer, MlpShape, ModelParams};
use super::partition::partition;
use super::qsgd;
use super::seed::{rng_for, SimRng};
use super::server::{apply_update, finish_aggregate, server_aggregate, ServerState};
use crate::controller::{error_sensitivity, global_gradient, percentile, ClientGradientReport, Controller};
use crate::error::{Error, Result};
use crate::gate::GateState;

/// Round whose innovation norms set an `"auto:pNN"` gate threshold. Round 1
/// encodes whole gradients against a zero reference, so round 2 is the first
/// with genuine innovations; both send unconditionally.
pub const CALIBRATION_ROUND: usize = 2;

#[derive(Debug, Clone)]
pub struct Simulation {
    config: SimConfig,
    train: Dataset,
    test: Dataset,
    server: ServerState,
    clients: Vec<ClientState>,
    controller: Option<Controller>,
    participation_rng: SimRng,
    bits_cum: u64,
}

impl Simulation {
    pub fn new(config: &SimConfig, train: &Dataset, test: &Dataset, seed: u64) -> Result<Self> {
        config.validate()?;
        if train.features() != test.features() || train.classes() != test.classes() {
            return Err(Error::Data("train and test sets disagree on shape".into()));
        }
        if test.is_empty() {
            return Err(Error::Data("test set is empty".into()));
        }
        let shards = partition(train.labels(), train.classes(), &config.partition, seed)?;
        let inputs = train.features();
        let shape = MlpShape::new(inputs, config.model.hidden_for(inputs), train.classes())?;
        if let Some(target) = config.dropout.d_target {
            let width = match config.dropout.layer {
                DropoutLayer::Input => shape.inputs,
                DropoutLayer::Hidden => shape.hidden,
            };
            if config.dropout.enabled && target >= width {
                return Err(Error::config("dropout.d_target", format!("must be below the block width {width}")));
            }
        }
        let params = ModelParams::init(shape, &mut rng_for(seed, "model/init"));
        let dims = params.dims();
        let proposed = config.scheme == Scheme::Proposed;
        let gate = if proposed && config.gate.enabled {
            let eps = match config.gate.comm_eps {
                CommEps::Fixed(e) => e,
                // rounds up to the calibration round send unconditionally
                CommEps::Percentile(_) => 0.0,
            };
            Some(GateState::new(eps, config.gate.tau)?)
        } else {
            None
        };
        let controller = if proposed && config.controller.enabled {
            let c = &config.controller;
            Some(Controller::new(c.threshold(), c.overrides(), c.b_base)?)
        } else {
            None
        };
        let clients = shards
            .iter()
            .enumerate()
            .map(|(id, idx)| {
                ClientState::new(id, train.subset(idx), dims, gate, config.training.optimizer.build(dims), seed)
            })
            .collect::<Result<Vec<_>>>()?;
        let server = ServerState::new(params, clients.len(), gate, config.training.eta, config.training.aggregate);
        Ok(Self {
            config: config.clone(),
            train: train.clone(),
            test: test.clone(),
            server,
            clients,
            controller,
            participation_rng: rng_for(seed, "participation"),
            bits_cum: 0,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.server.params
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn controller(&self) -> Option<&Controller> {
        self.controller.as_ref()
    }

    pub fn round(&self) -> usize {
        self.server.round
    }

    pub fn dims(&self) -> usize {
        self.server.params.dims()
    }

    /// Encoding used by the next proposed-scheme round.
    pub fn current_bits(&self) -> BitDepth {
        match &self.controller {
            Some(c) => BitDepth::Bits(c.bits()),
            None => self.config.codec.bits,
        }
    }

    fn bits_column(&self) -> u8 {
        match self.config.scheme {
            Scheme::Proposed => self.current_bits().tag(),
            Scheme::Qsgd => (32 - self.config.qsgd.levels.leading_zeros() + 1) as u8,
            Scheme::Fedavg | Scheme::Fedprox | Scheme::FedsgdRef => 32,
        }
    }

    /// Row 0: the initial model before any communication.
    pub fn initial_metrics(&self) -> RoundMetrics {
        let train = evaluate(&self.server.params, &self.train);
        let test = evaluate(&self.server.params, &self.test);
        RoundMetrics {
            round: 0,
            train_loss: train.loss,
            test_loss: test.loss,
            test_acc: test.accuracy,
            q_t: self.controller.as_ref().map(|_| self.config.controller.q_init),
            b_t: Some(self.bits_column()),
            ..Default::default()
        }
    }

    pub fn run(&mut self) -> Result<Vec<RoundMetrics>> {
        let mut out = Vec::with_capacity(self.config.rounds + 1);
        out.push(self.initial_metrics());
        for _ in 0..self.config.rounds {
            out.push(self.step()?);
        }
        Ok(out)
    }

    fn participants(&mut self) -> Vec<usize> {
        let m = self.clients.len();
        if self.config.training.participation >= 1.0 {
            return (0..m).collect();
        }
        let k = ((self.config.training.participation * m as f64).round() as usize).clamp(1, m);
        let mut chosen = sample(&mut self.participation_rng, m, k).into_vec();
        chosen.sort_unstable();
        chosen
    }

    fn local_settings(&self, with_dropout: bool) -> LocalSettings {
        let t = &self.config.training;
        LocalSettings {
            batch_size: t.batch_size,
            epochs: t.local_epochs,
            dropout: (with_dropout && self.config.dropout.enabled)
                .then(|| (self.config.dropout.config(), self.config.dropout.layer)),
        }
    }

    fn sensitivity(&self, reports: &[ClientGradientReport]) -> Result<f64> {
        let global = global_gradient(reports, self.config.controller.weighting)?;
        error_sensitivity(reports, &global)
    }

    /// Runs one round and returns its metrics row.
    pub fn step(&mut self) -> Result<RoundMetrics> {
        let round = self.server.round + 1;
        let participants = self.participants();
        let mut row = match self.config.scheme {
            Scheme::Proposed => self.proposed_round(round, &participants)?,
            Scheme::Fedavg => self.weight_round(round, &participants, 0.0)?,
            Scheme::Fedprox => self.weight_round(round, &participants, self.config.fedprox.mu)?,
            Scheme::Qsgd | Scheme::FedsgdRef => self.gradient_round(round, &participants)?,
        };
        if self.server.params.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("model diverged in round {round}")));
        }
        let test = evaluate(&self.server.params, &self.test);
        self.bits_cum += row.bits_round;
        row.round = round;
        row.test_loss = test.loss;
        row.test_acc = test.accuracy;
        row.bits_cum = self.bits_cum;
        row.b_t = Some(self.bits_column());
        Ok(row)
    }

    fn weighted_loss(losses: &[(usize, f64)]) -> f64 {
        let n: usize = losses.iter().map(|(n, _)| n).sum();
        losses.iter().map(|&(k, l)| k as f64 * l).sum::<f64>() / n as f64
    }

    fn proposed_round(&mut self, round: usize, participants: &[usize]) -> Result<RoundMetrics> {
        let bits = self.current_bits();
        let settings = self.local_settings(true);
        let w = self.server.params.clone();
        let mut outs = Vec::with_capacity(participants.len());
        for &m in participants {
            outs.push(self.clients[m].client_round(&w, &settings, bits, round)?);
        }
        let reports: Vec<ClientGradientReport> = participants
            .iter()
            .zip(&outs)
            .map(|(&m, o)| ClientGradientReport {
                gradient: o.gradient.clone(),
                dataset_size: self.clients[m].dataset_size(),
            })
            .collect();
        let e_t = self.sensitivity(&reports)?;
        let step = match &mut self.controller {
            Some(c) => Some(c.observe(e_t)?),
            None => None,
        };

        let uploads: Vec<_> = outs.iter().filter_map(|o| o.upload.clone()).collect();
        let reception = self.server.receive(participants, &uploads)?;
        if let (CALIBRATION_ROUND, true, CommEps::Percentile(p)) = (round, self.config.gate.enabled, self.config.gate.comm_eps) {
            let norms: Vec<f64> = reception.norms.iter().map(|&(_, n)| n).collect();
            let eps = if norms.is_empty() { 0.0 } else { percentile(&norms, p) };
            self.server.set_comm_eps(eps);
            for c in &mut self.clients {
                if let Some(g) = &mut c.gate {
                    g.comm_eps = eps;
                }
            }
        }
        self.server.step()?;

        let sent = uploads.len();
        let skipped = participants.len() - sent;
        let reports_bits = if self.config.metrics.count_reports {
            participants.len() as u64 * 32 * self.dims() as u64
        } else {
            0
        };
        let losses: Vec<(usize, f64)> = participants
            .iter()
            .zip(&outs)
            .map(|(&m, o)| (self.clients[m].dataset_size(), o.loss))
            .collect();
        Ok(RoundMetrics {
            train_loss: Self::weighted_loss(&losses),
            e_t: Some(e_t),
            ebar_t: step.map(|s| s.ebar_t),
            q_t: step.map(|s| s.level_q),
            frozen: step.is_some_and(|s| s.frozen),
            rebased: step.is_some_and(|s| s.rebased),
            sent,
            skipped,
            forced: reception.forced,
            bits_round: uploads.iter().map(|u| u.bits).sum::<u64>() + skipped as u64 + reports_bits,
            feature_bits_saved: outs.iter().map(|o| o.feature_bits_saved).sum(),
            ..Default::default()
        })
    }

    /// FedAvg (`mu = 0`) and FedProx: local training, 32-bit weights up,
    /// sample-weighted average.
    fn weight_round(&mut self, round: usize, participants: &[usize], mu: f64) -> Result<RoundMetrics> {
        let settings = self.local_settings(false);
        let global = self.server.params.clone();
        let dims = global.dims();
        let mut trained = Vec::with_capacity(participants.len());
        let mut losses = Vec::with_capacity(participants.len());
        for &m in participants {
            let (w, loss) = self.clients[m].local_train(&global, &settings, mu, round)?;
            let n = self.clients[m].dataset_size();
            trained.push((n, w));
            losses.push((n, loss));
        }
        let total: usize = trained.iter().map(|(n, _)| n).sum();
        let mut avg = vec![0.0; dims];
        for (n, w) in &trained {
            let weight = *n as f64 / total as f64;
            for (a, v) in avg.iter_mut().zip(w.values()) {
                *a += weight * (*v as f32 as f64);
            }
        }
        self.server.params = ModelParams::from_values(global.shape(), avg)
            .map_err(|_| Error::Data(format!("model diverged in round {round}")))?;
        self.server.round += 1;
        Ok(RoundMetrics {
            train_loss: Self::weighted_loss(&losses),
            sent: participants.len(),
            bits_round: participants.len() as u64 * 32 * dims as u64,
            ..Default::default()
        })
    }

    /// QSGD and the plain FedSGD reference: one full gradient per client,
    /// no innovation, no gate.
    fn gradient_round(&mut self, round: usize, participants: &[usize]) -> Result<RoundMetrics> {
        let settings = self.local_settings(false);
        let w = self.server.params.clone();
        let dims = w.dims();
        let levels = self.config.qsgd.levels;
        let mut sent_vectors = Vec::with_capacity(participants.len());
        let mut reports = Vec::with_capacity(participants.len());
        let mut losses = Vec::with_capacity(participants.len());
        let mut bits = 0;
        for &m in participants {
            let client = &mut self.clients[m];
            let local = client.local_gradient(&w, &settings, round)?;
            let wire = match self.config.scheme {
                Scheme::Qsgd => {
                    let msg = qsgd::quantize(&local.gradient, levels, &mut client.qsgd_rng)?;
                    bits += qsgd::message_bits(dims, levels);
                    qsgd::dequantize(&msg)
                }
                _ => {
                    bits += 32 * dims as u64;
                    local.gradient.iter().map(|&g| g as f32 as f64).collect()
                }
            };
            sent_vectors.push(wire);
            losses.push((client.dataset_size(), local.loss));
            reports.push(ClientGradientReport {
                gradient: local.gradient,
                dataset_size: client.dataset_size(),
            });
        }
        let e_t = self.sensitivity(&reports)?;
        let total = server_aggregate(&sent_vectors, dims)?;
        let g = finish_aggregate(total, self.config.training.aggregate, participants.len());
        apply_update(self.server.params.values_mut(), &g, self.config.training.eta)?;
        self.server.round += 1;
        Ok(RoundMetrics {
            train_loss: Self::weighted_loss(&losses),
            e_t: Some(e_t),
            sent: participants.len(),
            bits_round: bits,
            ..Default::default()
        })
    }
}
