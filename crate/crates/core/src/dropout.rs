//! Importance-based feature elimination.
//!
//! Each column of a `B x D` batch is scored by its population standard
//! deviation across the batch, normalised so the scores sum to `D`, and
//! turned into a drop probability. Retained columns are rescaled by
//! `1 / (1 - p)` so the batch is unchanged in expectation. Dropped columns
//! are zeroed in place; the matrix shape never changes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major `rows x cols` block of activations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(Error::FeatureShape {
                rows,
                cols,
                len: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature {
                row: pos / cols,
                column: pos % cols,
                value: values[pos],
            });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// Per-column mean and population standard deviation (divisor `B`).
pub fn column_stats(features: &FeatureMatrix) -> ColumnStats {
    let (rows, cols) = (features.rows, features.cols);
    let mut means = vec![0.0; cols];
    for row in features.values.chunks_exact(cols) {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    let inv_rows = 1.0 / rows as f64;
    for m in &mut means {
        *m *= inv_rows;
    }
    let mut stds = vec![0.0; cols];
    for row in features.values.chunks_exact(cols) {
        for ((s, v), m) in stds.iter_mut().zip(row).zip(&means) {
            let d = v - m;
            *s += d * d;
        }
    }
    for s in &mut stds {
        *s = (*s * inv_rows).sqrt();
    }
    ColumnStats { means, stds }
}

/// Normalised importance `q_i = sigma_i * D / sum_j sigma_j`.
///
/// When every column has the same spread (including the all-zero batch) the
/// scores are exactly `1`: a batch without ranking signal drops nothing.
pub fn importance(stds: &[f64]) -> Vec<f64> {
    let dims = stds.len();
    if stds.iter().all(|&s| s == stds[0]) {
        return vec![1.0; dims];
    }
    let total: f64 = stds.iter().sum();
    stds.iter().map(|s| s * dims as f64 / total).collect()
}

/// How the bias term is chosen when the importance scores are uneven.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CBias {
    /// Use the smallest admissible bias for the batch at hand.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutConfig {
    pub c_bias: CBias,
    /// Target number of retained columns; `None` means `ceil(D / 2)`.
    pub d_target: Option<usize>,
}

impl Default for DropoutConfig {
    fn default() -> Self {
        Self {
            c_bias: CBias::Auto,
            d_target: None,
        }
    }
}

impl DropoutConfig {
    pub fn target_for(&self, dims: usize) -> usize {
        self.d_target.unwrap_or(dims.div_ceil(2))
    }
}

/// Lower bound on the bias: `(sigma_max * D - sum sigma) / (D - d_target)`.
pub fn min_c_bias(stds: &[f64], d_target: usize) -> Result<f64> {
    let dims = stds.len();
    if d_target == 0 || d_target >= dims {
        return Err(Error::InvalidTargetDim { d_target, dims });
    }
    let max = stds.iter().cloned().fold(0.0, f64::max);
    let total: f64 = stds.iter().sum();
    Ok(((max * dims as f64 - total) / (dims - d_target) as f64).max(0.0))
}

/// Drop probabilities for each column, clamped to `[0, 1]`.
///
/// Above-average columns get a negative raw probability in the biased branch
/// whatever the bias; clamping keeps them always.
pub fn dropout_probs(stds: &[f64], cfg: &DropoutConfig) -> Result<Vec<f64>> {
    let dims = stds.len();
    let q = importance(stds);
    let max_q = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max_q <= 1.0 {
        return Ok(q.iter().map(|qi| (1.0 - qi).clamp(0.0, 1.0)).collect());
    }
    let minimum = min_c_bias(stds, cfg.target_for(dims))?;
    let c_bias = match cfg.c_bias {
        CBias::Auto => minimum,
        CBias::Fixed(c) if c >= minimum => c,
        CBias::Fixed(c) => return Err(Error::CBiasTooSmall { given: c, minimum }),
    };
    let shifted_total: f64 = stds.iter().map(|s| s + c_bias).sum();
    Ok(stds
        .iter()
        .map(|s| (1.0 - (s + c_bias) * dims as f64 / shifted_total).clamp(0.0, 1.0))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub indicators: Vec<bool>,
    pub probs: Vec<f64>,
}

impl DropoutMask {
    /// Column multipliers: `1 / (1 - p)` for kept columns, `0` for dropped ones.
    pub fn scales(&self) -> Result<Vec<f64>> {
        self.indicators
            .iter()
            .zip(&self.probs)
            .enumerate()
            .map(|(column, (&keep, &prob))| {
                if !keep {
                    Ok(0.0)
                } else if prob >= 1.0 {
                    Err(Error::KeptWithCertainDrop { column, prob })
                } else {
                    Ok(1.0 / (1.0 - prob))
                }
            })
            .collect()
    }

    pub fn dropped(&self) -> usize {
        self.indicators.iter().filter(|k| !**k).count()
    }
}

/// Keeps column `i` with probability `1 - probs[i]`, independently.
pub fn sample_mask<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> DropoutMask {
    let indicators = probs.iter().map(|&p| rng.random::<f64>() >= p).collect();
    DropoutMask {
        indicators,
        probs: probs.to_vec(),
    }
}

/// Expected number of retained columns, `D - sum p_i`.
pub fn expected_retained(probs: &[f64]) -> f64 {
    probs.len() as f64 - probs.iter().sum::<f64>()
}

pub fn apply_dropout(features: &FeatureMatrix, mask: &DropoutMask) -> Result<FeatureMatrix> {
    if mask.indicators.len() != features.cols || mask.probs.len() != features.cols {
        return Err(Error::DimensionMismatch {
            expected: features.cols,
            actual: mask.indicators.len(),
        });
    }
    let scales = mask.scales()?;
    let mut values = features.values.clone();
    for row in values.chunks_exact_mut(features.cols) {
        for (v, s) in row.iter_mut().zip(&scales) {
            *v *= s;
        }
    }
    Ok(FeatureMatrix {
        rows: features.rows,
        cols: features.cols,
        values,
    })
}

/// Stats, probabilities and a sampled mask for one batch in a single call.
pub fn plan_mask<R: Rng + ?Sized>(
    features: &FeatureMatrix,
    cfg: &DropoutConfig,
    rng: &mut R,
) -> Result<DropoutMask> {
    if features.cols < 2 {
        return Ok(DropoutMask {
            indicators: vec![true; features.cols],
            probs: vec![0.0; features.cols],
        });
    }
    let stats = column_stats(features);
    let probs = dropout_probs(&stats.stds, cfg)?;
    Ok(sample_mask(&probs, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn matrix(rows: usize, cols: usize, values: &[f64]) -> FeatureMatrix {
        FeatureMatrix::new(rows, cols, values.to_vec()).unwrap()
    }

    #[test]
    fn column_stats_examples() {
        // columns: [1,1], [0,2], [-3,3]
        let f = matrix(2, 3, &[1.0, 0.0, -3.0, 1.0, 2.0, 3.0]);
        let stats = column_stats(&f);
        assert_eq!(stats.means, vec![1.0, 1.0, 0.0]);
        assert_eq!(stats.stds, vec![0.0, 1.0, 3.0]);
    }

    #[test]
    fn non_finite_input_names_the_column() {
        let err = FeatureMatrix::new(2, 2, vec![0.0, 1.0, f64::NAN, 2.0]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteFeature { row: 1, column: 0, .. }));
        assert!(err.to_string().contains("column 0"));
    }

    #[test]
    fn importance_examples() {
        assert_eq!(importance(&[1.0, 1.0]), vec![1.0, 1.0]);
        assert_eq!(importance(&[0.0, 1.0]), vec![0.0, 2.0]);
        assert_eq!(importance(&[0.0, 0.0]), vec![1.0, 1.0]);
    }

    #[test]
    fn dropout_probs_examples() {
        let cfg = |c| DropoutConfig {
            c_bias: CBias::Fixed(c),
            d_target: Some(1),
        };
        assert_eq!(dropout_probs(&[1.0, 1.0], &cfg(0.0)).unwrap(), vec![0.0, 0.0]);

        let p = dropout_probs(&[0.0, 1.0], &cfg(1.0)).unwrap();
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(p[1], 0.0);

        let p = dropout_probs(&[0.0, 1.0], &cfg(9.0)).unwrap();
        assert!((p[0] - 1.0 / 19.0).abs() < 1e-15);
        assert_eq!(p[1], 0.0);
    }

    #[test]
    fn undersized_bias_reports_the_minimum() {
        let cfg = DropoutConfig {
            c_bias: CBias::Fixed(0.5),
            d_target: Some(1),
        };
        match dropout_probs(&[0.0, 1.0], &cfg) {
            Err(Error::CBiasTooSmall { minimum, .. }) => assert_eq!(minimum, 1.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn auto_bias_uses_the_minimum() {
        let auto = dropout_probs(&[0.0, 1.0], &DropoutConfig {
            c_bias: CBias::Auto,
            d_target: Some(1),
        })
        .unwrap();
        let fixed = dropout_probs(&[0.0, 1.0], &DropoutConfig {
            c_bias: CBias::Fixed(1.0),
            d_target: Some(1),
        })
        .unwrap();
        assert_eq!(auto, fixed);
    }

    #[test]
    fn sample_mask_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            assert_eq!(sample_mask(&[0.0, 0.0], &mut rng).indicators, vec![true, true]);
            assert_eq!(sample_mask(&[1.0, 0.0], &mut rng).indicators, vec![false, true]);
        }
    }

    #[test]
    fn sample_mask_keep_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        let mut kept = [0usize; 2];
        for _ in 0..draws {
            let mask = sample_mask(&[0.5, 0.5], &mut rng);
            for (k, &i) in kept.iter_mut().zip(&mask.indicators) {
                *k += i as usize;
            }
        }
        for k in kept {
            assert!((k as f64 / draws as f64 - 0.5).abs() <= 0.01, "{k}");
        }
    }

    #[test]
    fn sample_mask_is_seeded() {
        let probs = [0.3, 0.6, 0.1, 0.9];
        let a = sample_mask(&probs, &mut ChaCha8Rng::seed_from_u64(3));
        let b = sample_mask(&probs, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn expected_retained_examples() {
        assert_eq!(expected_retained(&[0.0, 0.0]), 2.0);
        assert!((expected_retained(&[1.0 / 3.0, 0.0]) - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(expected_retained(&[1.0, 1.0, 1.0]), 0.0);
    }

    #[test]
    fn apply_dropout_scales_and_zeroes() {
        let f = matrix(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mask = DropoutMask {
            indicators: vec![true, true, false],
            probs: vec![0.0, 1.0 / 3.0, 0.5],
        };
        let out = apply_dropout(&f, &mask).unwrap();
        assert_eq!(out.get(0, 0), 1.0);
        assert_eq!(out.get(1, 0), 4.0);
        assert!((out.get(0, 1) - 3.0).abs() < 1e-12);
        assert!((out.get(1, 1) - 7.5).abs() < 1e-12);
        assert_eq!(out.get(0, 2), 0.0);
        assert_eq!(out.get(1, 2), 0.0);
    }

    #[test]
    fn kept_column_with_certain_drop_is_rejected() {
        let f = matrix(1, 2, &[1.0, 2.0]);
        let mask = DropoutMask {
            indicators: vec![true, true],
            probs: vec![1.0, 0.0],
        };
        assert!(matches!(
            apply_dropout(&f, &mask),
            Err(Error::KeptWithCertainDrop { column: 0, .. })
        ));
    }

    #[test]
    fn equal_positive_spread_never_drops() {
        let probs = dropout_probs(&[0.1; 7], &DropoutConfig::default()).unwrap();
        assert!(probs.iter().all(|&p| p == 0.0));
    }

    fn stds_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..10.0, 2..40)
    }

    proptest! {
        #[test]
        fn importance_sums_to_dims(stds in stds_strategy()) {
            let q = importance(&stds);
            let sum: f64 = q.iter().sum();
            prop_assert!((sum - stds.len() as f64).abs() <= 1e-9 * stds.len() as f64);
        }

        #[test]
        fn probs_are_clamped(stds in stds_strategy(), extra in 0.0f64..5.0, target_frac in 0.01f64..0.99) {
            let dims = stds.len();
            let d_target = ((dims as f64 * target_frac) as usize).clamp(1, dims - 1);
            let minimum = min_c_bias(&stds, d_target).unwrap();
            let cfg = DropoutConfig { c_bias: CBias::Fixed(minimum + extra), d_target: Some(d_target) };
            let probs = dropout_probs(&stds, &cfg).unwrap();
            prop_assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
        }

        #[test]
        fn above_average_features_are_kept(stds in stds_strategy(), extra in 0.0f64..5.0) {
            let cfg = DropoutConfig { c_bias: CBias::Fixed(min_c_bias(&stds, stds.len().div_ceil(2).min(stds.len() - 1)).unwrap() + extra), d_target: Some(stds.len().div_ceil(2).min(stds.len() - 1)) };
            let probs = dropout_probs(&stds, &cfg).unwrap();
            let mean = stds.iter().sum::<f64>() / stds.len() as f64;
            let above = stds.iter().filter(|&&s| s >= mean).count();
            for (s, p) in stds.iter().zip(&probs) {
                if *s > mean * (1.0 + 1e-12) {
                    prop_assert_eq!(*p, 0.0);
                }
            }
            prop_assert!(expected_retained(&probs) >= above as f64 - 1e-9);
        }

        #[test]
        fn equal_spread_gives_zero_probs(s in 1e-6f64..100.0, dims in 2usize..50) {
            let probs = dropout_probs(&vec![s; dims], &DropoutConfig::default()).unwrap();
            prop_assert!(probs.iter().all(|&p| p == 0.0));
        }
    }
}
