//! Communication-efficient federated learning primitives and a round-level
//! simulator.
//!
//! The crate is split along the uplink pipeline of a client:
//!
//! * [`dropout`] ranks feature columns of a batch by their spread and drops
//!   low-importance columns with inverted-dropout rescaling.
//! * [`codec`] encodes the change of a client's gradient against a reference
//!   shared with the server into `b+1`-bit integer indices plus a range header.
//! * [`controller`] tracks the error sensitivity of the federation and adapts
//!   the quantization level (and thus the bit depth) from round to round.
//! * [`gate`] decides whether a quantized innovation is worth sending, with a
//!   bounded number of consecutive skips.
//! * [`runtime`] wires everything into a deterministic simulation with a
//!   small MLP, IID/Dirichlet partitioners and FedAvg/QSGD/FedProx baselines.

pub mod codec;
pub mod controller;
pub mod dropout;
pub mod error;
pub mod gate;
pub mod runtime;

pub use error::{Error, Result};
