//! In-memory labelled datasets and the Gaussian-blob generator.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::seed::rng_for;
use crate::error::{Error, Result};

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: usize,
    classes: usize,
    x: Vec<f64>,
    y: Vec<usize>,
}

impl Dataset {
    pub fn new(features: usize, classes: usize, x: Vec<f64>, y: Vec<usize>) -> Result<Self> {
        if features == 0 || classes == 0 {
            return Err(Error::Data("datasets need at least one feature and one class".into()));
        }
        if x.len() != y.len() * features {
            return Err(Error::Data(format!(
                "{} feature values for {} samples of width {features}",
                x.len(),
                y.len()
            )));
        }
        if let Some(&bad) = y.iter().find(|&&label| label >= classes) {
            return Err(Error::Data(format!("label {bad} out of range for {classes} classes")));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite feature in sample {}", pos / features)));
        }
        Ok(Self {
            features,
            classes,
            x,
            y,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.features..(i + 1) * self.features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.y[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.y
    }

    pub fn features_flat(&self) -> &[f64] {
        &self.x
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(indices.len() * self.features);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
        }
        Dataset {
            features: self.features,
            classes: self.classes,
            x,
            y,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &label in &self.y {
            counts[label] += 1;
        }
        counts
    }
}

/// `classes` Gaussian blobs in `features` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub features: usize,
    pub samples: usize,
    pub test_samples: usize,
    /// Per-coordinate standard deviation of samples around their centre.
    pub spread: f64,
    /// Standard deviation of the blob centres around the origin.
    pub separation: f64,
    /// Dataset seed; `None` derives it from the run seed.
    pub seed: Option<u64>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            features: 20,
            samples: 2000,
            test_samples: 1000,
            spread: 2.0,
            separation: 1.0,
            seed: None,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("dataset.classes", "must be >= 2"));
        }
        if self.features == 0 {
            return Err(Error::config("dataset.features", "must be >= 1"));
        }
        if self.samples == 0 {
            return Err(Error::config("dataset.samples", "must be >= 1"));
        }
        if self.test_samples == 0 {
            return Err(Error::config("dataset.test_samples", "must be >= 1"));
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            return Err(Error::config("dataset.spread", "must be > 0"));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::config("dataset.separation", "must be > 0"));
        }
        Ok(())
    }

    /// Generates `(train, test)`; labels cycle through the classes so both
    /// splits are balanced.
    pub fn generate(&self, run_seed: u64) -> Result<(Dataset, Dataset)> {
        self.validate()?;
        let seed = self.seed.unwrap_or(run_seed);
        let mut rng = rng_for(seed, "synthetic/centres");
        let centres: Vec<f64> = (0..self.classes * self.features)
            .map(|_| self.separation * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let draw = |count: usize, stream: &str| {
            let mut rng = rng_for(seed, stream);
            let mut x = Vec::with_capacity(count * self.features);
            let mut y = Vec::with_capacity(count);
            for i in 0..count {
                let label = i % self.classes;
                let centre = &centres[label * self.features..(label + 1) * self.features];
                x.extend(
                    centre
                        .iter()
                        .map(|c| c + self.spread * rng.sample::<f64, _>(StandardNormal)),
                );
                y.push(label);
            }
            Dataset::new(self.features, self.classes, x, y)
        };
        Ok((draw(self.samples, "synthetic/train")?, draw(self.test_samples, "synthetic/test")?))
    }
}
