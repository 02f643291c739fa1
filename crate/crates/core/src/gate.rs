//! Send/skip gating of quantized innovations.
//!
//! A client transmits when the norm of its reconstructed innovation reaches
//! `comm_eps`, or when it has already been silent long enough that this
//! round would make `tau` rounds without communication. The skip counter
//! therefore never exceeds `tau - 1`, and `tau = 1` sends every round.

use std::collections::BTreeSet;

use crate::codec::{dequantize, QuantizedInnovation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateState {
    pub skip_counter: u32,
    pub comm_eps: f64,
    pub tau_max: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Send { forced: bool },
    Skip,
}

impl Decision {
    pub fn is_send(self) -> bool {
        matches!(self, Decision::Send { .. })
    }
}

impl GateState {
    pub fn new(comm_eps: f64, tau_max: u32) -> Result<Self> {
        if tau_max == 0 {
            return Err(Error::config("gate.tau", "must be >= 1"));
        }
        if !(comm_eps >= 0.0 && comm_eps.is_finite()) {
            return Err(Error::config("gate.comm_eps", "must be a finite number >= 0"));
        }
        Ok(Self {
            skip_counter: 0,
            comm_eps,
            tau_max,
        })
    }

    /// True when the skip budget is used up and this round must send.
    pub fn must_send(&self) -> bool {
        self.skip_counter + 1 >= self.tau_max
    }

    pub fn should_send(&self, norm: f64) -> (Decision, GateState) {
        let significant = norm >= self.comm_eps;
        if significant || self.must_send() {
            let next = GateState {
                skip_counter: 0,
                ..*self
            };
            (Decision::Send { forced: !significant }, next)
        } else {
            let next = GateState {
                skip_counter: self.skip_counter + 1,
                ..*self
            };
            (Decision::Skip, next)
        }
    }

    /// Advances the state after an observed decision (used by the server-side
    /// mirror, which only sees presence flags).
    pub fn observe(&self, sent: bool) -> GateState {
        GateState {
            skip_counter: if sent { 0 } else { self.skip_counter + 1 },
            ..*self
        }
    }
}

/// `||dequantize(qi)||_2`.
pub fn innovation_norm(qi: &QuantizedInnovation) -> f64 {
    l2_norm(&dequantize(qi))
}

pub fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// A message as the server sees it: the sender, the norm of the innovation
/// it reconstructs, and whether its own view of the sender's skip counter
/// says the send was mandatory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inbound {
    pub client: usize,
    pub norm: f64,
    pub forced: bool,
}

/// Clients admitted into aggregation: forced sends always, everything else
/// only if its norm reaches `comm_eps`.
pub fn filter_active(messages: &[Inbound], comm_eps: f64) -> Result<BTreeSet<usize>> {
    let mut active = BTreeSet::new();
    let mut seen = BTreeSet::new();
    for m in messages {
        if !seen.insert(m.client) {
            return Err(Error::DuplicateClient(m.client));
        }
        if m.forced || m.norm >= comm_eps {
            active.insert(m.client);
        }
    }
    Ok(active)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::quantize;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gate(skip_counter: u32) -> GateState {
        GateState {
            skip_counter,
            comm_eps: 0.5,
            tau_max: 3,
        }
    }

    #[test]
    fn should_send_examples() {
        let (d, s) = gate(1).should_send(0.2);
        assert_eq!(d, Decision::Skip);
        assert_eq!(s.skip_counter, 2);

        let (d, s) = gate(3).should_send(0.2);
        assert_eq!(d, Decision::Send { forced: true });
        assert_eq!(s.skip_counter, 0);

        let (d, s) = gate(0).should_send(0.7);
        assert_eq!(d, Decision::Send { forced: false });
        assert_eq!(s.skip_counter, 0);
    }

    #[test]
    fn innovation_norm_examples() {
        assert_eq!(innovation_norm(&quantize(&[0.0, 0.0], 4).unwrap()), 0.0);
        // both vectors sit exactly on their grids
        assert_eq!(innovation_norm(&quantize(&[3.0, 4.0], 3).unwrap()), 5.0);
        let n = innovation_norm(&quantize(&[0.5, 0.5], 2).unwrap());
        assert!((n - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn filter_active_examples() {
        assert!(filter_active(&[], 0.5).unwrap().is_empty());
        let forced = Inbound {
            client: 3,
            norm: 0.1,
            forced: true,
        };
        assert_eq!(filter_active(&[forced], 0.5).unwrap(), BTreeSet::from([3]));
        let msgs = [
            Inbound { client: 0, norm: 0.7, forced: false },
            Inbound { client: 1, norm: 0.9, forced: false },
        ];
        assert_eq!(filter_active(&msgs, 0.5).unwrap(), BTreeSet::from([0, 1]));
        let low = Inbound { client: 2, norm: 0.1, forced: false };
        assert!(filter_active(&[low], 0.5).unwrap().is_empty());
        assert_eq!(
            filter_active(&[msgs[0], msgs[0]], 0.5),
            Err(Error::DuplicateClient(0))
        );
    }

    #[test]
    fn tau_zero_is_rejected() {
        assert!(GateState::new(0.1, 0).is_err());
        assert!(GateState::new(-1.0, 2).is_err());
    }

    #[test]
    fn bounded_silence_over_random_rounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for tau in 1..=6 {
            let mut g = GateState::new(0.5, tau).unwrap();
            let mut silent = 0;
            for _ in 0..500 {
                let (d, next) = g.should_send(rng.random::<f64>() * 0.6);
                g = next;
                silent = if d.is_send() { 0 } else { silent + 1 };
                assert!(silent < tau);
                assert!(g.skip_counter <= tau);
            }
        }
    }

    #[test]
    fn tau_one_always_sends() {
        let mut g = GateState::new(1e9, 1).unwrap();
        for _ in 0..50 {
            let (d, next) = g.should_send(0.0);
            assert!(d.is_send());
            g = next;
        }
    }

    #[test]
    fn observed_mirror_tracks_client() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut client = GateState::new(0.3, 4).unwrap();
        let mut mirror = client;
        for _ in 0..200 {
            let forced_view = mirror.must_send();
            let (d, next) = client.should_send(rng.random::<f64>() * 0.4);
            if let Decision::Send { forced } = d {
                assert!(!forced || forced_view);
            }
            client = next;
            mirror = mirror.observe(d.is_send());
            assert_eq!(client, mirror);
        }
    }

    proptest! {
        #[test]
        fn raising_eps_never_sends_more(norms in prop::collection::vec(0.0f64..1.0, 1..200), lo in 0.0f64..1.0, extra in 0.0f64..1.0, tau in 1u32..8) {
            let count = |eps: f64| {
                let mut g = GateState::new(eps, tau).unwrap();
                norms.iter().filter(|&&n| {
                    let (d, next) = g.should_send(n);
                    g = next;
                    d.is_send()
                }).count()
            };
            prop_assert!(count(lo + extra) <= count(lo));
        }

        #[test]
        fn zero_eps_always_sends(norms in prop::collection::vec(0.0f64..1.0, 1..50), tau in 1u32..8) {
            let mut g = GateState::new(0.0, tau).unwrap();
            for n in norms {
                let (d, next) = g.should_send(n);
                prop_assert_eq!(d, Decision::Send { forced: false });
                g = next;
            }
        }

        #[test]
        fn decision_is_pure(norm in 0.0f64..2.0, counter in 0u32..10, eps in 0.0f64..2.0, tau in 1u32..10) {
            let g = GateState { skip_counter: counter, comm_eps: eps, tau_max: tau };
            prop_assert_eq!(g.should_send(norm), g.should_send(norm));
        }
    }
}
