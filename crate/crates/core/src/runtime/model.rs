//! One-hidden-layer perceptron: input -> hidden (ReLU) -> softmax
//! cross-entropy, with hand-written backpropagation.
//!
//! Parameters are flattened as `W1 (hidden x inputs) | b1 | W2 (outputs x
//! hidden) | b2`, row-major.

use std::borrow::Cow;
use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use crate::dropout::{apply_dropout, plan_mask, DropoutConfig, FeatureMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
}

impl MlpShape {
    pub fn new(inputs: usize, hidden: usize, outputs: usize) -> Result<Self> {
        if inputs == 0 || hidden == 0 || outputs == 0 {
            return Err(Error::config("model", "layer sizes must be >= 1"));
        }
        Ok(Self {
            inputs,
            hidden,
            outputs,
        })
    }

    pub fn num_params(&self) -> usize {
        self.hidden * self.inputs + self.hidden + self.outputs * self.hidden + self.outputs
    }

    pub fn w1(&self) -> Range<usize> {
        0..self.hidden * self.inputs
    }

    pub fn b1(&self) -> Range<usize> {
        let start = self.hidden * self.inputs;
        start..start + self.hidden
    }

    pub fn w2(&self) -> Range<usize> {
        let start = self.b1().end;
        start..start + self.outputs * self.hidden
    }

    pub fn b2(&self) -> Range<usize> {
        let start = self.w2().end;
        start..start + self.outputs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    shape: MlpShape,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(shape: MlpShape) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.num_params()],
        }
    }

    /// He-normal first layer, `N(0, 1/hidden)` second layer, zero biases.
    pub fn init<R: Rng + ?Sized>(shape: MlpShape, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        let s1 = (2.0 / shape.inputs as f64).sqrt();
        let s2 = (1.0 / shape.hidden as f64).sqrt();
        for v in &mut p.values[shape.w1()] {
            *v = s1 * rng.sample::<f64, _>(StandardNormal);
        }
        for v in &mut p.values[shape.w2()] {
            *v = s2 * rng.sample::<f64, _>(StandardNormal);
        }
        p
    }

    pub fn from_values(shape: MlpShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.num_params() {
            return Err(Error::DimensionMismatch {
                expected: shape.num_params(),
                actual: values.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { index, value });
        }
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> MlpShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dims(&self) -> usize {
        self.values.len()
    }
}

/// Which activation block feature dropout acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutLayer {
    #[default]
    Input,
    Hidden,
}

pub struct DropoutPlan<'a, R: ?Sized> {
    pub config: &'a DropoutConfig,
    pub layer: DropoutLayer,
    pub rng: &'a mut R,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchOutcome {
    pub loss_sum: f64,
    /// Columns zeroed by feature dropout in this batch.
    pub dropped_columns: usize,
    /// Width of the block dropout acted on.
    pub block_width: usize,
}

fn nonzeros(row: &[f64]) -> Option<Vec<usize>> {
    let nz: Vec<usize> = (0..row.len()).filter(|&i| row[i] != 0.0).collect();
    (nz.len() * 2 < row.len()).then_some(nz)
}

fn log_softmax_into(logits: &[f64], out: &mut [f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    for (o, l) in out.iter_mut().zip(logits) {
        *o = l - lse;
    }
    lse
}

/// Summed cross-entropy over the batch; adds the summed gradient into `grad`.
pub fn loss_and_grad<R: Rng + ?Sized>(
    params: &ModelParams,
    x: &[f64],
    y: &[usize],
    dropout: Option<DropoutPlan<'_, R>>,
    grad: &mut [f64],
) -> Result<BatchOutcome> {
    let s = params.shape;
    let (d, h, o) = (s.inputs, s.hidden, s.outputs);
    let batch = y.len();
    if x.len() != batch * d {
        return Err(Error::DimensionMismatch {
            expected: batch * d,
            actual: x.len(),
        });
    }
    if grad.len() != s.num_params() {
        return Err(Error::DimensionMismatch {
            expected: s.num_params(),
            actual: grad.len(),
        });
    }
    if batch == 0 {
        return Ok(BatchOutcome::default());
    }
    let w = &params.values;
    let (w1, b1, w2, b2) = (&w[s.w1()], &w[s.b1()], &w[s.w2()], &w[s.b2()]);
    let mut outcome = BatchOutcome::default();

    let mut dropout = dropout;
    let xin: Cow<[f64]> = match &mut dropout {
        Some(plan) if plan.layer == DropoutLayer::Input => {
            let block = FeatureMatrix::new(batch, d, x.to_vec())?;
            let mask = plan_mask(&block, plan.config, &mut *plan.rng)?;
            outcome.dropped_columns = mask.dropped();
            outcome.block_width = d;
            Cow::Owned(apply_dropout(&block, &mask)?.into_values())
        }
        _ => Cow::Borrowed(x),
    };
    let sparse: Vec<Option<Vec<usize>>> = xin.chunks_exact(d).map(nonzeros).collect();

    let mut z = vec![0.0; batch * h];
    for (n, row) in xin.chunks_exact(d).enumerate() {
        let zn = &mut z[n * h..(n + 1) * h];
        for j in 0..h {
            let wj = &w1[j * d..(j + 1) * d];
            let dot = match &sparse[n] {
                Some(nz) => nz.iter().map(|&i| wj[i] * row[i]).sum::<f64>(),
                None => wj.iter().zip(row).map(|(a, b)| a * b).sum::<f64>(),
            };
            zn[j] = b1[j] + dot;
        }
    }
    let mut a: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
    let mut hidden_scale: Option<Vec<f64>> = None;
    if let Some(plan) = dropout.as_mut().filter(|p| p.layer == DropoutLayer::Hidden) {
        let block = FeatureMatrix::new(batch, h, a)?;
        let mask = plan_mask(&block, plan.config, &mut *plan.rng)?;
        outcome.dropped_columns = mask.dropped();
        outcome.block_width = h;
        hidden_scale = Some(mask.scales()?);
        a = apply_dropout(&block, &mask)?.into_values();
    }

    let (gw1, rest) = grad.split_at_mut(s.b1().start);
    let (gb1, rest) = rest.split_at_mut(h);
    let (gw2, gb2) = rest.split_at_mut(o * h);
    let mut logits = vec![0.0; o];
    let mut logp = vec![0.0; o];
    let mut dz = vec![0.0; h];
    for n in 0..batch {
        let an = &a[n * h..(n + 1) * h];
        for k in 0..o {
            logits[k] = b2[k] + w2[k * h..(k + 1) * h].iter().zip(an).map(|(p, q)| p * q).sum::<f64>();
        }
        log_softmax_into(&logits, &mut logp);
        let label = y[n];
        outcome.loss_sum -= logp[label];
        dz.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..o {
            let dl = logp[k].exp() - if k == label { 1.0 } else { 0.0 };
            gb2[k] += dl;
            let w2k = &w2[k * h..(k + 1) * h];
            let gw2k = &mut gw2[k * h..(k + 1) * h];
            for j in 0..h {
                gw2k[j] += dl * an[j];
                dz[j] += w2k[j] * dl;
            }
        }
        let zn = &z[n * h..(n + 1) * h];
        let row = &xin[n * d..(n + 1) * d];
        for j in 0..h {
            if zn[j] <= 0.0 {
                continue;
            }
            let dzj = dz[j] * hidden_scale.as_ref().map_or(1.0, |sc| sc[j]);
            if dzj == 0.0 {
                continue;
            }
            gb1[j] += dzj;
            let g = &mut gw1[j * d..(j + 1) * d];
            match &sparse[n] {
                Some(nz) => nz.iter().for_each(|&i| g[i] += dzj * row[i]),
                None => g.iter_mut().zip(row).for_each(|(gi, xi)| *gi += dzj * xi),
            }
        }
    }
    if !outcome.loss_sum.is_finite() {
        return Err(Error::Data(format!("non-finite loss {}", outcome.loss_sum)));
    }
    Ok(outcome)
}

/// Summed cross-entropy without gradients or dropout.
pub fn loss_sum(params: &ModelParams, x: &[f64], y: &[usize]) -> f64 {
    let d = params.shape.inputs;
    x.chunks_exact(d)
        .zip(y)
        .map(|(row, &label)| {
            let l = logits(params, row);
            let mut logp = vec![0.0; l.len()];
            log_softmax_into(&l, &mut logp);
            -logp[label]
        })
        .sum()
}

pub fn logits(params: &ModelParams, row: &[f64]) -> Vec<f64> {
    let s = params.shape;
    let w = &params.values;
    let (w1, b1, w2, b2) = (&w[s.w1()], &w[s.b1()], &w[s.w2()], &w[s.b2()]);
    let hidden: Vec<f64> = (0..s.hidden)
        .map(|j| {
            let z = b1[j]
                + w1[j * s.inputs..(j + 1) * s.inputs]
                    .iter()
                    .zip(row)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            z.max(0.0)
        })
        .collect();
    (0..s.outputs)
        .map(|k| {
            b2[k]
                + w2[k * s.hidden..(k + 1) * s.hidden]
                    .iter()
                    .zip(&hidden)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
        })
        .collect()
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

pub fn evaluate(params: &ModelParams, data: &Dataset) -> Evaluation {
    if data.is_empty() {
        return Evaluation {
            accuracy: 0.0,
            loss: 0.0,
        };
    }
    let mut correct = 0usize;
    let mut loss = 0.0;
    let mut logp = vec![0.0; params.shape.outputs];
    for i in 0..data.len() {
        let l = logits(params, data.row(i));
        log_softmax_into(&l, &mut logp);
        loss -= logp[data.label(i)];
        if argmax(&l) == data.label(i) {
            correct += 1;
        }
    }
    Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        loss: loss / data.len() as f64,
    }
}
