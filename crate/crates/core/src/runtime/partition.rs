//! Splitting a labelled dataset across clients.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::seed::rng_for;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    Stratified,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionSpec {
    pub mode: PartitionMode,
    /// Dirichlet concentration; ignored in stratified mode.
    pub alpha: f64,
    pub num_clients: usize,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        Self {
            mode: PartitionMode::Stratified,
            alpha: 0.5,
            num_clients: 10,
        }
    }
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::config("partition.num_clients", "must be >= 1"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("partition.alpha", "must be a finite number > 0"));
        }
        Ok(())
    }
}

/// Returns one sorted index list per client.
pub fn partition(labels: &[usize], classes: usize, spec: &PartitionSpec, seed: u64) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    if spec.num_clients > labels.len() {
        return Err(Error::TooManyClients {
            clients: spec.num_clients,
            samples: labels.len(),
        });
    }
    let mut shards = match spec.mode {
        PartitionMode::Stratified => stratified(labels, classes, spec.num_clients, seed),
        PartitionMode::Dirichlet => dirichlet(labels, classes, spec.num_clients, spec.alpha, seed),
    };
    for shard in &mut shards {
        shard.sort_unstable();
    }
    Ok(shards)
}

fn by_class(labels: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); classes];
    for (i, &label) in labels.iter().enumerate() {
        out[label].push(i);
    }
    out
}

/// Shuffles each class and deals its samples round-robin. The dealing
/// position carries over from one class to the next, so shard sizes differ by
/// at most one and every class is split within one sample of evenly.
fn stratified(labels: &[usize], classes: usize, clients: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = rng_for(seed, "partition/stratified");
    let mut shards = vec![Vec::new(); clients];
    let mut next = 0;
    for mut members in by_class(labels, classes) {
        members.shuffle(&mut rng);
        for idx in members {
            shards[next].push(idx);
            next = (next + 1) % clients;
        }
    }
    shards
}

fn dirichlet(labels: &[usize], classes: usize, clients: usize, alpha: f64, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = rng_for(seed, "partition/dirichlet");
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated");
    let mut shards = vec![Vec::new(); clients];
    for mut members in by_class(labels, classes) {
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let draws: Vec<f64> = (0..clients).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        let props: Vec<f64> = if total > 0.0 {
            draws.iter().map(|g| g / total).collect()
        } else {
            // every draw underflowed; put the class on one client
            let pick = rng.random_range(0..clients);
            (0..clients).map(|m| if m == pick { 1.0 } else { 0.0 }).collect()
        };
        let counts = largest_remainder(members.len(), &props);
        let mut start = 0;
        for (m, count) in counts.into_iter().enumerate() {
            shards[m].extend_from_slice(&members[start..start + count]);
            start += count;
        }
    }
    repair_empty(&mut shards);
    shards
}

/// Integer counts summing to `total`, proportional to `props`. Leftover units
/// go to the largest fractional parts, lower index first on ties.
pub fn largest_remainder(total: usize, props: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = props.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &m in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[m] += 1;
    }
    counts
}

/// Moves one sample from the largest shard into each empty one.
fn repair_empty(shards: &mut [Vec<usize>]) {
    while let Some(empty) = shards.iter().position(Vec::is_empty) {
        let donor = (0..shards.len())
            .max_by(|&a, &b| shards[a].len().cmp(&shards[b].len()).then(b.cmp(&a)))
            .expect("at least one shard");
        let moved = shards[donor].pop().expect("donor is the largest shard");
        shards[empty].push(moved);
    }
}
