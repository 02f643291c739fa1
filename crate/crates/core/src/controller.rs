//! Error-sensitivity-driven quantization level.
//!
//! Every round the server measures how far the client gradients spread around
//! their (weighted) mean, `E_t`. A spread above `E_thresh` asks for a finer
//! level (`q / gamma`), a spread below asks for a coarser one (`q * gamma`),
//! and anything within `band_eps` of the threshold keeps the level. The level
//! is frozen once the moving average of `E_t` stays at or below the threshold
//! for `W` consecutive checks, and every `T` updates a large variance of the
//! recent `E_t` values re-baselines the controller.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_Q_INIT: f64 = 16.0;
pub const MIN_BITS: u8 = 1;
pub const MAX_BITS: u8 = 12;

#[derive(Debug, Clone)]
pub struct ClientGradientReport {
    pub gradient: Vec<f64>,
    pub dataset_size: usize,
}

/// Client weighting in the global gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `(1/|S|) sum_i (1/|D_i|) grad_i`.
    #[default]
    AsWritten,
    /// `(1/|S|) sum_i grad_i`.
    Uniform,
}

fn check_reports(reports: &[ClientGradientReport]) -> Result<usize> {
    let dims = reports.first().ok_or(Error::EmptyReports)?.gradient.len();
    for r in reports {
        if r.gradient.len() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                actual: r.gradient.len(),
            });
        }
    }
    Ok(dims)
}

pub fn global_gradient(reports: &[ClientGradientReport], weighting: Weighting) -> Result<Vec<f64>> {
    let dims = check_reports(reports)?;
    let mut out = vec![0.0; dims];
    for r in reports {
        let w = match weighting {
            Weighting::AsWritten => 1.0 / r.dataset_size.max(1) as f64,
            Weighting::Uniform => 1.0,
        };
        for (o, g) in out.iter_mut().zip(&r.gradient) {
            *o += w * g;
        }
    }
    let inv = 1.0 / reports.len() as f64;
    out.iter_mut().for_each(|o| *o *= inv);
    Ok(out)
}

/// `E_t = (1/|S|) sum_i ||grad_i - G_t||^2`.
pub fn error_sensitivity(reports: &[ClientGradientReport], global: &[f64]) -> Result<f64> {
    let dims = check_reports(reports)?;
    if global.len() != dims {
        return Err(Error::DimensionMismatch {
            expected: dims,
            actual: global.len(),
        });
    }
    let total: f64 = reports
        .iter()
        .map(|r| {
            r.gradient
                .iter()
                .zip(global)
                .map(|(g, m)| (g - m) * (g - m))
                .sum::<f64>()
        })
        .sum();
    Ok(total / reports.len() as f64)
}

/// Bit depth for a level: `round(b_base - log2(q / 16))`, clamped to `[1, 12]`.
pub fn level_to_bits(level_q: f64, b_base: u8) -> u8 {
    let bits = (b_base as f64 - (level_q / DEFAULT_Q_INIT).log2()).round();
    bits.clamp(MIN_BITS as f64, MAX_BITS as f64) as u8
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityParams {
    pub e_thresh: f64,
    pub gamma: f64,
    pub band_eps: f64,
    pub window_w: usize,
    pub rebase_t: usize,
    pub v_thresh: f64,
    pub q_init: f64,
    pub q_min: f64,
    pub q_max: f64,
}

impl SensitivityParams {
    /// Defaults derived from a threshold: `band = 0.05 E`, `V = (0.5 E)^2`.
    pub fn from_threshold(e_thresh: f64) -> Self {
        Self {
            e_thresh,
            gamma: 2.0,
            band_eps: 0.05 * e_thresh,
            window_w: 5,
            rebase_t: 20,
            v_thresh: (0.5 * e_thresh).powi(2),
            q_init: DEFAULT_Q_INIT,
            q_min: 1.0,
            q_max: 256.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, reason: &str| Err(Error::config(key, reason));
        if !(self.e_thresh.is_finite() && self.e_thresh > 0.0) {
            return fail("controller.e_thresh", "must be a positive number");
        }
        if !(self.gamma > 1.0 && self.gamma.is_finite()) {
            return fail("controller.gamma", "must be > 1");
        }
        if !(self.band_eps >= 0.0 && self.band_eps.is_finite()) {
            return fail("controller.band_eps", "must be >= 0");
        }
        if self.window_w == 0 {
            return fail("controller.window", "must be >= 1");
        }
        if self.rebase_t == 0 {
            return fail("controller.rebase_period", "must be >= 1");
        }
        if !(self.v_thresh > 0.0 && self.v_thresh.is_finite()) {
            return fail("controller.v_thresh", "must be > 0");
        }
        if !(self.q_min > 0.0 && self.q_min <= self.q_max && self.q_max.is_finite()) {
            return fail("controller.q_min", "need 0 < q_min <= q_max");
        }
        if !(self.q_min..=self.q_max).contains(&self.q_init) {
            return fail("controller.q_init", "must lie within [q_min, q_max]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityState {
    pub params: SensitivityParams,
    pub level_q: f64,
    pub q_init: f64,
    pub frozen: bool,
    /// Consecutive checks with the moving average at or below the threshold.
    pub calm_checks: usize,
    pub history: VecDeque<f64>,
    pub updates: usize,
}

impl SensitivityState {
    pub fn new(params: SensitivityParams) -> Self {
        Self {
            level_q: params.q_init,
            q_init: params.q_init,
            params,
            frozen: false,
            calm_checks: 0,
            history: VecDeque::new(),
            updates: 0,
        }
    }

    fn history_cap(&self) -> usize {
        self.params.window_w.max(self.params.rebase_t)
    }

    fn record(&mut self, e_t: f64) {
        if self.history.len() == self.history_cap() {
            self.history.pop_front();
        }
        self.history.push_back(e_t);
        self.updates += 1;
    }

    fn tail_mean(&self, n: usize) -> Option<f64> {
        (self.history.len() >= n)
            .then(|| self.history.iter().rev().take(n).sum::<f64>() / n as f64)
    }

    /// Moving average over the last `W` values (fewer while warming up).
    pub fn moving_average(&self) -> Option<f64> {
        let n = self.history.len().min(self.params.window_w);
        (n > 0).then(|| self.history.iter().rev().take(n).sum::<f64>() / n as f64)
    }

    pub fn bits(&self, b_base: u8) -> u8 {
        level_to_bits(self.level_q, b_base)
    }
}

/// Applies the three-way level rule and records `e_t`.
pub fn update_level(mut state: SensitivityState, e_t: f64) -> SensitivityState {
    let p = &state.params;
    if !state.frozen {
        let next = if (e_t - p.e_thresh).abs() < p.band_eps {
            state.level_q
        } else if e_t > p.e_thresh {
            state.level_q / p.gamma
        } else {
            state.level_q * p.gamma
        };
        state.level_q = next.clamp(p.q_min, p.q_max);
    }
    state.record(e_t);
    state
}

pub fn check_freeze(mut state: SensitivityState) -> SensitivityState {
    let Some(avg) = state.tail_mean(state.params.window_w) else {
        return state;
    };
    if avg <= state.params.e_thresh {
        state.calm_checks += 1;
        if state.calm_checks >= state.params.window_w {
            state.frozen = true;
        }
    } else {
        state.calm_checks = 0;
        state.frozen = false;
    }
    state
}

/// Population variance of the last `T` values of `E_t`; `None` while the
/// history is shorter than `T`.
pub fn recent_variance(state: &SensitivityState) -> Option<f64> {
    let t = state.params.rebase_t;
    let mean = state.tail_mean(t)?;
    Some(
        state
            .history
            .iter()
            .rev()
            .take(t)
            .map(|e| (e - mean) * (e - mean))
            .sum::<f64>()
            / t as f64,
    )
}

/// Resets the baseline to the current level when the recent variance of
/// `E_t` exceeds `V_thresh`. Returns whether it fired.
pub fn rebaseline(mut state: SensitivityState) -> (SensitivityState, bool) {
    match recent_variance(&state) {
        Some(v) if v > state.params.v_thresh => {
            state.q_init = state.level_q;
            state.frozen = false;
            state.calm_checks = 0;
            (state, true)
        }
        _ => (state, false),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerStep {
    pub e_t: f64,
    pub ebar_t: f64,
    pub level_q: f64,
    pub bits_b: u8,
    pub frozen: bool,
    pub rebased: bool,
}

/// Threshold for the sensitivity controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// Median of the first `rounds` observations.
    Auto { rounds: usize },
    Fixed(f64),
}

/// Optional overrides on top of [`SensitivityParams::from_threshold`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ParamOverrides {
    pub gamma: Option<f64>,
    pub band_eps: Option<f64>,
    pub window_w: Option<usize>,
    pub rebase_t: Option<usize>,
    pub v_thresh: Option<f64>,
    pub q_init: Option<f64>,
    pub q_min: Option<f64>,
    pub q_max: Option<f64>,
}

impl ParamOverrides {
    pub fn resolve(&self, e_thresh: f64) -> SensitivityParams {
        let d = SensitivityParams::from_threshold(e_thresh);
        SensitivityParams {
            e_thresh,
            gamma: self.gamma.unwrap_or(d.gamma),
            band_eps: self.band_eps.unwrap_or(d.band_eps),
            window_w: self.window_w.unwrap_or(d.window_w),
            rebase_t: self.rebase_t.unwrap_or(d.rebase_t),
            v_thresh: self.v_thresh.unwrap_or(d.v_thresh),
            q_init: self.q_init.unwrap_or(d.q_init),
            q_min: self.q_min.unwrap_or(d.q_min),
            q_max: self.q_max.unwrap_or(d.q_max),
        }
    }
}

/// Round-level driver: calibrates the threshold, then runs the
/// update / freeze / rebaseline sequence once per observation.
#[derive(Debug, Clone)]
pub struct Controller {
    overrides: ParamOverrides,
    b_base: u8,
    phase: Phase,
}

#[derive(Debug, Clone)]
enum Phase {
    Calibrating { rounds: usize, seen: Vec<f64> },
    Active(SensitivityState),
}

impl Controller {
    pub fn new(threshold: Threshold, overrides: ParamOverrides, b_base: u8) -> Result<Self> {
        if !(2..=12).contains(&b_base) {
            return Err(Error::config("controller.b_base", "must lie in [2, 12]"));
        }
        let phase = match threshold {
            Threshold::Fixed(e) => {
                let params = overrides.resolve(e);
                params.validate()?;
                Phase::Active(SensitivityState::new(params))
            }
            Threshold::Auto { rounds } => {
                if rounds == 0 {
                    return Err(Error::config("controller.calibration_rounds", "must be >= 1"));
                }
                // Validate the non-threshold overrides with a placeholder.
                overrides.resolve(1.0).validate()?;
                Phase::Calibrating {
                    rounds,
                    seen: Vec::new(),
                }
            }
        };
        Ok(Self {
            overrides,
            b_base,
            phase,
        })
    }

    pub fn state(&self) -> Option<&SensitivityState> {
        match &self.phase {
            Phase::Active(s) => Some(s),
            Phase::Calibrating { .. } => None,
        }
    }

    fn idle_level(&self) -> f64 {
        self.overrides.q_init.unwrap_or(DEFAULT_Q_INIT)
    }

    /// Bit depth to use for the next encoding.
    pub fn bits(&self) -> u8 {
        match &self.phase {
            Phase::Active(s) => s.bits(self.b_base),
            Phase::Calibrating { .. } => level_to_bits(self.idle_level(), self.b_base),
        }
    }

    pub fn observe(&mut self, e_t: f64) -> Result<ControllerStep> {
        let b_base = self.b_base;
        let window = self.overrides.window_w.unwrap_or(5);
        if let Phase::Calibrating { rounds, seen } = &mut self.phase {
            seen.push(e_t);
            if seen.len() < *rounds {
                let n = seen.len().min(window);
                let ebar_t = seen.iter().rev().take(n).sum::<f64>() / n as f64;
                let level_q = self.overrides.q_init.unwrap_or(DEFAULT_Q_INIT);
                return Ok(ControllerStep {
                    e_t,
                    ebar_t,
                    level_q,
                    bits_b: level_to_bits(level_q, b_base),
                    frozen: false,
                    rebased: false,
                });
            }
            let threshold = median(seen).max(f64::MIN_POSITIVE);
            let params = self.overrides.resolve(threshold);
            params.validate()?;
            let mut state = SensitivityState::new(params);
            // Calibration rounds count as history but do not move the level.
            for &e in seen.iter() {
                state.record(e);
            }
            state.updates = 0;
            let step = ControllerStep {
                e_t,
                ebar_t: state.moving_average().unwrap_or(e_t),
                level_q: state.level_q,
                bits_b: state.bits(b_base),
                frozen: false,
                rebased: false,
            };
            self.phase = Phase::Active(state);
            return Ok(step);
        }
        let Phase::Active(state) = &mut self.phase else {
            unreachable!()
        };
        let mut next = check_freeze(update_level(state.clone(), e_t));
        let mut rebased = false;
        if next.updates.is_multiple_of(next.params.rebase_t) {
            (next, rebased) = rebaseline(next);
        }
        *state = next;
        Ok(ControllerStep {
            e_t,
            ebar_t: state.moving_average().unwrap_or(e_t),
            level_q: state.level_q,
            bits_b: state.bits(b_base),
            frozen: state.frozen,
            rebased,
        })
    }
}

/// Median (mean of the two middle values for even lengths).
pub fn median(values: &[f64]) -> f64 {
    percentile(values, 50.0)
}

/// Linear-interpolation percentile of a non-empty slice.
pub fn percentile(values: &[f64], pct: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = (pct / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}
