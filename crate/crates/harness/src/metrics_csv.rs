//! Per-round metrics CSV.
//!
//! Column order is fixed. Optional values are written as empty fields,
//! booleans as `0`/`1`, and floats with Rust's shortest round-trip format.

use std::path::Path;

use flc_core::runtime::RoundMetrics;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const COLUMNS: [&str; 15] = [
    "round",
    "train_loss",
    "test_loss",
    "test_acc",
    "E_t",
    "Ebar_t",
    "q_t",
    "b_t",
    "frozen",
    "rebased",
    "sent",
    "skipped",
    "forced",
    "bits_round",
    "bits_cum",
];

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    #[serde(rename = "E_t")]
    pub e_t: Option<f64>,
    #[serde(rename = "Ebar_t")]
    pub ebar_t: Option<f64>,
    pub q_t: Option<f64>,
    pub b_t: Option<u8>,
    pub frozen: u8,
    pub rebased: u8,
    pub sent: usize,
    pub skipped: usize,
    pub forced: usize,
    pub bits_round: u64,
    pub bits_cum: u64,
}

impl From<&RoundMetrics> for MetricsRow {
    fn from(m: &RoundMetrics) -> Self {
        Self {
            round: m.round,
            train_loss: m.train_loss,
            test_loss: m.test_loss,
            test_acc: m.test_acc,
            e_t: m.e_t,
            ebar_t: m.ebar_t,
            q_t: m.q_t,
            b_t: m.b_t,
            frozen: m.frozen as u8,
            rebased: m.rebased as u8,
            sent: m.sent,
            skipped: m.skipped,
            forced: m.forced,
            bits_round: m.bits_round,
            bits_cum: m.bits_cum,
        }
    }
}

pub fn to_csv_string(rows: &[RoundMetrics]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(COLUMNS).expect("in-memory write");
    for r in rows {
        w.serialize(MetricsRow::from(r)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let csv_err = |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(String::from).collect();
    if header != COLUMNS {
        return Err(HarnessError::Compare(format!(
            "{}: unexpected columns {header:?}",
            path.display()
        )));
    }
    reader.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err)
}

/// Expected `bits_round` for each row from its counts and the bit depth in
/// force (the previous row's `b_t`): `d (b + 1) + 40` per quantized message,
/// `32 d + 8` per 32-bit passthrough message, and one bit per skip.
pub fn recount_proposed_bits(rows: &[MetricsRow], dims: usize) -> Vec<Option<u64>> {
    let d = dims as u64;
    rows.iter()
        .enumerate()
        .map(|(i, row)| {
            if i == 0 {
                return Some(0);
            }
            let b = rows[i - 1].b_t? as u64;
            let message = if b == 32 { 32 * d + 8 } else { d * (b + 1) + 40 };
            Some(row.sent as u64 * message + row.skipped as u64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_layout() {
        let rows = vec![
            RoundMetrics {
                round: 0,
                train_loss: 1.5,
                test_loss: 1.25,
                test_acc: 0.5,
                b_t: Some(8),
                q_t: Some(16.0),
                ..Default::default()
            },
            RoundMetrics {
                round: 1,
                train_loss: 0.75,
                test_loss: 0.625,
                test_acc: 0.875,
                e_t: Some(0.1),
                ebar_t: Some(0.1),
                q_t: Some(16.0),
                b_t: Some(8),
                frozen: false,
                rebased: true,
                sent: 9,
                skipped: 1,
                forced: 2,
                bits_round: 1234,
                bits_cum: 1234,
                feature_bits_saved: 99,
            },
        ];
        let expected = "round,train_loss,test_loss,test_acc,E_t,Ebar_t,q_t,b_t,frozen,rebased,sent,skipped,forced,bits_round,bits_cum\n\
            0,1.5,1.25,0.5,,,16.0,8,0,0,0,0,0,0,0\n\
            1,0.75,0.625,0.875,0.1,0.1,16.0,8,0,1,9,1,2,1234,1234\n";
        assert_eq!(to_csv_string(&rows), expected);
    }

    #[test]
    fn recount_uses_the_previous_bit_depth() {
        let row = |b_t: u8, sent, skipped| MetricsRow {
            round: 0,
            train_loss: 0.0,
            test_loss: 0.0,
            test_acc: 0.0,
            e_t: None,
            ebar_t: None,
            q_t: None,
            b_t: Some(b_t),
            frozen: 0,
            rebased: 0,
            sent,
            skipped,
            forced: 0,
            bits_round: 0,
            bits_cum: 0,
        };
        let rows = vec![row(8, 0, 0), row(4, 3, 1), row(32, 2, 2), row(32, 1, 0)];
        assert_eq!(
            recount_proposed_bits(&rows, 10),
            vec![Some(0), Some(3 * 130 + 1), Some(2 * 90 + 2), Some(328)]
        );
    }
}
