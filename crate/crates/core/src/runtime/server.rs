//! Server-side state: per-client reference mirrors, gate mirrors, and the
//! model step.

use std::collections::BTreeSet;

use super::client::Upload;
use super::config::Aggregate;
use super::model::ModelParams;
use crate::codec::{Payload, ReferenceGradient};
use crate::error::{Error, Result};
use crate::gate::{filter_active, l2_norm, GateState, Inbound};

/// `sum` of the reconstructed innovations, in the given order. Empty input
/// gives the zero vector.
pub fn server_aggregate(innovations: &[Vec<f64>], dims: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; dims];
    for v in innovations {
        if v.len() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                actual: v.len(),
            });
        }
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    Ok(out)
}

/// Divides by `count` in mean mode.
pub fn finish_aggregate(mut total: Vec<f64>, mode: Aggregate, count: usize) -> Vec<f64> {
    if mode == Aggregate::Mean && count > 0 {
        let n = count as f64;
        total.iter_mut().for_each(|v| *v /= n);
    }
    total
}

/// `w <- w - eta * g`.
pub fn apply_update(w: &mut [f64], g: &[f64], eta: f64) -> Result<()> {
    if w.len() != g.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            actual: g.len(),
        });
    }
    for (wi, gi) in w.iter_mut().zip(g) {
        *wi -= eta * gi;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reception {
    pub admitted: BTreeSet<usize>,
    /// Admitted low-norm messages the server's gate mirror says were due.
    pub forced: usize,
    /// Sum of the admitted reconstructed innovations.
    pub innovation_sum: Vec<f64>,
    /// `(client, norm)` for every message received.
    pub norms: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct ServerState {
    pub params: ModelParams,
    pub mirrors: Vec<ReferenceGradient>,
    pub gates: Vec<Option<GateState>>,
    pub eta: f64,
    pub aggregate: Aggregate,
    pub round: usize,
}

impl ServerState {
    pub fn new(params: ModelParams, clients: usize, gate: Option<GateState>, eta: f64, aggregate: Aggregate) -> Self {
        let dims = params.dims();
        Self {
            params,
            mirrors: vec![ReferenceGradient::zeros(dims); clients],
            gates: vec![gate; clients],
            eta,
            aggregate,
            round: 0,
        }
    }

    /// Decodes this round's uploads, admits them through the gate filter and
    /// advances the mirrors of admitted senders. `participants` must be
    /// ascending; uploads from anyone else are rejected.
    pub fn receive(&mut self, participants: &[usize], uploads: &[Upload]) -> Result<Reception> {
        let dims = self.params.dims();
        let mut inbound = Vec::with_capacity(uploads.len());
        let mut decoded = Vec::with_capacity(uploads.len());
        for up in uploads {
            if participants.binary_search(&up.client).is_err() {
                return Err(Error::Malformed(format!("upload from non-participant {}", up.client)));
            }
            let payload = Payload::decode(&up.bytes, dims)?;
            let innovation = payload.reconstructed_innovation(&self.mirrors[up.client])?;
            let norm = l2_norm(&innovation);
            let forced = self.gates[up.client].is_some_and(|g| g.must_send() && norm < g.comm_eps);
            inbound.push(Inbound {
                client: up.client,
                norm,
                forced,
            });
            decoded.push((up.client, payload, innovation));
        }
        let eps = self.gates.iter().flatten().map(|g| g.comm_eps).next().unwrap_or(0.0);
        let admitted = filter_active(&inbound, eps)?;
        let mut innovations = Vec::with_capacity(admitted.len());
        for (client, payload, innovation) in decoded {
            if admitted.contains(&client) {
                self.mirrors[client] = payload.apply(&self.mirrors[client])?;
                innovations.push(innovation);
            }
        }
        let sent: BTreeSet<usize> = uploads.iter().map(|u| u.client).collect();
        for &m in participants {
            if let Some(g) = &mut self.gates[m] {
                *g = g.observe(sent.contains(&m));
            }
        }
        Ok(Reception {
            forced: inbound.iter().filter(|i| i.forced && admitted.contains(&i.client)).count(),
            admitted,
            innovation_sum: server_aggregate(&innovations, dims)?,
            norms: inbound.iter().map(|i| (i.client, i.norm)).collect(),
        })
    }

    /// Sum (or mean) of every client's current reference, ascending client
    /// order. Clients that stayed silent contribute their last reference.
    pub fn reference_aggregate(&self) -> Vec<f64> {
        let mut total = vec![0.0; self.params.dims()];
        for m in &self.mirrors {
            for (t, v) in total.iter_mut().zip(m.values()) {
                *t += v;
            }
        }
        finish_aggregate(total, self.aggregate, self.mirrors.len())
    }

    pub fn step(&mut self) -> Result<()> {
        let g = self.reference_aggregate();
        apply_update(self.params.values_mut(), &g, self.eta)?;
        self.round += 1;
        Ok(())
    }

    pub fn set_comm_eps(&mut self, eps: f64) {
        for g in self.gates.iter_mut().flatten() {
            g.comm_eps = eps;
        }
    }
}
