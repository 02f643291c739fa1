//! Per-round metrics.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub e_t: Option<f64>,
    pub ebar_t: Option<f64>,
    pub q_t: Option<f64>,
    /// Bit depth in effect after this round (used to encode the next one).
    pub b_t: Option<u8>,
    pub frozen: bool,
    pub rebased: bool,
    pub sent: usize,
    pub skipped: usize,
    pub forced: usize,
    pub bits_round: u64,
    pub bits_cum: u64,
    /// Input bits zeroed by feature dropout (accounted, not transmitted).
    pub feature_bits_saved: u64,
}
