//! Run-level settings shared by the simulation and the harness.

use serde::{Deserialize, Serialize};

use super::model::DropoutLayer;
use super::optim::OptimizerConfig;
use super::partition::PartitionSpec;
use crate::codec::{FULL_PRECISION_TAG, MAX_BITS};
use crate::controller::{ParamOverrides, Threshold, Weighting};
use crate::dropout::{CBias, DropoutConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    Proposed,
    Fedavg,
    Qsgd,
    Fedprox,
    FedsgdRef,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::Fedavg => "fedavg",
            Scheme::Qsgd => "qsgd",
            Scheme::Fedprox => "fedprox",
            Scheme::FedsgdRef => "fedsgd-ref",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    #[default]
    Sum,
    Mean,
}

/// JSON shape for fields that take either a number or a keyword.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NumberOrKeyword {
    Number(f64),
    Keyword(String),
}

/// Codec bit depth: `1..=16` or `"full"` (32-bit passthrough).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "NumberOrKeyword", into = "NumberOrKeyword")]
pub enum BitDepth {
    Bits(u8),
    Full,
}

impl BitDepth {
    pub fn tag(self) -> u8 {
        match self {
            BitDepth::Bits(b) => b,
            BitDepth::Full => FULL_PRECISION_TAG,
        }
    }
}

impl TryFrom<NumberOrKeyword> for BitDepth {
    type Error = String;

    fn try_from(raw: NumberOrKeyword) -> std::result::Result<Self, String> {
        match raw {
            NumberOrKeyword::Number(n) if n == FULL_PRECISION_TAG as f64 => Ok(BitDepth::Full),
            NumberOrKeyword::Number(n) if n.fract() == 0.0 && n >= 1.0 && n <= MAX_BITS as f64 => {
                Ok(BitDepth::Bits(n as u8))
            }
            NumberOrKeyword::Keyword(k) if k == "full" => Ok(BitDepth::Full),
            other => Err(format!("expected an integer in [1, {MAX_BITS}] or \"full\", got {other:?}")),
        }
    }
}

impl From<BitDepth> for NumberOrKeyword {
    fn from(b: BitDepth) -> Self {
        match b {
            BitDepth::Bits(b) => NumberOrKeyword::Number(b as f64),
            BitDepth::Full => NumberOrKeyword::Keyword("full".into()),
        }
    }
}

/// Sensitivity threshold: a positive number or `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NumberOrKeyword", into = "NumberOrKeyword")]
pub enum EThresh {
    Auto,
    Fixed(f64),
}

impl TryFrom<NumberOrKeyword> for EThresh {
    type Error = String;

    fn try_from(raw: NumberOrKeyword) -> std::result::Result<Self, String> {
        match raw {
            NumberOrKeyword::Number(n) if n > 0.0 && n.is_finite() => Ok(EThresh::Fixed(n)),
            NumberOrKeyword::Keyword(k) if k == "auto" => Ok(EThresh::Auto),
            other => Err(format!("expected a number > 0 or \"auto\", got {other:?}")),
        }
    }
}

impl From<EThresh> for NumberOrKeyword {
    fn from(e: EThresh) -> Self {
        match e {
            EThresh::Auto => NumberOrKeyword::Keyword("auto".into()),
            EThresh::Fixed(v) => NumberOrKeyword::Number(v),
        }
    }
}

/// Gate threshold: a number `>= 0`, or `"auto:pNN"` for the NN-th percentile
/// of the innovation norms received in the calibration round (round 2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NumberOrKeyword", into = "NumberOrKeyword")]
pub enum CommEps {
    Fixed(f64),
    Percentile(f64),
}

impl TryFrom<NumberOrKeyword> for CommEps {
    type Error = String;

    fn try_from(raw: NumberOrKeyword) -> std::result::Result<Self, String> {
        match raw {
            NumberOrKeyword::Number(n) if n >= 0.0 && n.is_finite() => Ok(CommEps::Fixed(n)),
            NumberOrKeyword::Keyword(k) => k
                .strip_prefix("auto:p")
                .and_then(|p| p.parse::<f64>().ok())
                .filter(|p| (0.0..=100.0).contains(p))
                .map(CommEps::Percentile)
                .ok_or_else(|| format!("expected \"auto:pNN\" with NN in [0, 100], got {k:?}")),
            other => Err(format!("expected a number >= 0 or \"auto:pNN\", got {other:?}")),
        }
    }
}

impl From<CommEps> for NumberOrKeyword {
    fn from(e: CommEps) -> Self {
        match e {
            CommEps::Fixed(v) => NumberOrKeyword::Number(v),
            CommEps::Percentile(p) => NumberOrKeyword::Keyword(format!("auto:p{p}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSettings {
    /// Hidden width; `None` picks 64 for inputs wider than 100, else 32.
    pub hidden: Option<usize>,
}

impl ModelSettings {
    pub fn hidden_for(&self, inputs: usize) -> usize {
        self.hidden.unwrap_or(if inputs > 100 { 64 } else { 32 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSettings {
    /// Server learning rate for gradient-transport schemes.
    pub eta: f64,
    pub aggregate: Aggregate,
    pub local_epochs: usize,
    pub batch_size: usize,
    /// Local optimizer for weight-transport schemes (FedAvg, FedProx).
    pub optimizer: OptimizerConfig,
    /// Fraction of clients sampled each round.
    pub participation: f64,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        Self {
            eta: 0.1,
            aggregate: Aggregate::Sum,
            local_epochs: 1,
            batch_size: 32,
            optimizer: OptimizerConfig::default(),
            participation: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DropoutSettings {
    pub enabled: bool,
    pub c_bias_auto: bool,
    /// Used when `c_bias_auto` is false.
    pub c_bias: Option<f64>,
    pub d_target: Option<usize>,
    pub layer: DropoutLayer,
}

impl Default for DropoutSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            c_bias_auto: true,
            c_bias: None,
            d_target: None,
            layer: DropoutLayer::Input,
        }
    }
}

impl DropoutSettings {
    pub fn config(&self) -> DropoutConfig {
        DropoutConfig {
            c_bias: match (self.c_bias_auto, self.c_bias) {
                (false, Some(c)) => CBias::Fixed(c),
                _ => CBias::Auto,
            },
            d_target: self.d_target,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSettings {
    pub enabled: bool,
    pub weighting: Weighting,
    pub e_thresh: EThresh,
    pub calibration_rounds: usize,
    pub gamma: f64,
    /// `None` derives `0.05 * e_thresh`.
    pub band_eps: Option<f64>,
    pub window: usize,
    pub rebase_period: usize,
    /// `None` derives `(0.5 * e_thresh)^2`.
    pub v_thresh: Option<f64>,
    pub q_init: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub b_base: u8,
}

impl Default for ControllerSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            weighting: Weighting::AsWritten,
            e_thresh: EThresh::Auto,
            calibration_rounds: 5,
            gamma: 2.0,
            band_eps: None,
            window: 5,
            rebase_period: 20,
            v_thresh: None,
            q_init: 16.0,
            q_min: 1.0,
            q_max: 256.0,
            b_base: 8,
        }
    }
}

impl ControllerSettings {
    pub fn threshold(&self) -> Threshold {
        match self.e_thresh {
            EThresh::Auto => Threshold::Auto {
                rounds: self.calibration_rounds,
            },
            EThresh::Fixed(e) => Threshold::Fixed(e),
        }
    }

    pub fn overrides(&self) -> ParamOverrides {
        ParamOverrides {
            gamma: Some(self.gamma),
            band_eps: self.band_eps,
            window_w: Some(self.window),
            rebase_t: Some(self.rebase_period),
            v_thresh: self.v_thresh,
            q_init: Some(self.q_init),
            q_min: Some(self.q_min),
            q_max: Some(self.q_max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecSettings {
    /// Bit depth when the controller is disabled.
    pub bits: BitDepth,
}

impl Default for CodecSettings {
    fn default() -> Self {
        Self {
            bits: BitDepth::Bits(8),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateSettings {
    pub enabled: bool,
    pub comm_eps: CommEps,
    pub tau: u32,
}

impl Default for GateSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            comm_eps: CommEps::Percentile(50.0),
            tau: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QsgdSettings {
    pub levels: u32,
}

impl Default for QsgdSettings {
    fn default() -> Self {
        Self { levels: 15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FedproxSettings {
    pub mu: f64,
}

impl Default for FedproxSettings {
    fn default() -> Self {
        Self { mu: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSettings {
    /// Charge the full-precision gradient reports to the uplink total.
    pub count_reports: bool,
}

/// Everything the round loop needs besides the data and the seed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub scheme: Scheme,
    pub rounds: usize,
    pub partition: PartitionSpec,
    pub model: ModelSettings,
    pub training: TrainingSettings,
    pub dropout: DropoutSettings,
    pub controller: ControllerSettings,
    pub codec: CodecSettings,
    pub gate: GateSettings,
    pub qsgd: QsgdSettings,
    pub fedprox: FedproxSettings,
    pub metrics: MetricsSettings,
}

impl SimConfig {
    /// Proposed scheme with dropout, controller and gate all off and a 32-bit
    /// passthrough codec.
    pub fn mechanisms_disabled(mut self) -> Self {
        self.scheme = Scheme::Proposed;
        self.dropout.enabled = false;
        self.controller.enabled = false;
        self.gate.enabled = false;
        self.codec.bits = BitDepth::Full;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.partition.validate()?;
        let t = &self.training;
        if !(t.eta > 0.0 && t.eta.is_finite()) {
            return Err(Error::config("training.eta", "must be > 0"));
        }
        if t.local_epochs == 0 {
            return Err(Error::config("training.local_epochs", "must be >= 1"));
        }
        if t.batch_size == 0 {
            return Err(Error::config("training.batch_size", "must be >= 1"));
        }
        if !(t.participation > 0.0 && t.participation <= 1.0) {
            return Err(Error::config("training.participation", "must lie in (0, 1]"));
        }
        t.optimizer.validate("training.optimizer")?;
        if self.model.hidden == Some(0) {
            return Err(Error::config("model.hidden", "must be >= 1"));
        }
        let dr = &self.dropout;
        if !dr.c_bias_auto {
            match dr.c_bias {
                Some(c) if c >= 0.0 && c.is_finite() => {}
                Some(_) => return Err(Error::config("dropout.c_bias", "must be >= 0")),
                None => return Err(Error::config("dropout.c_bias", "required when dropout.c_bias_auto is false")),
            }
        }
        if dr.d_target == Some(0) {
            return Err(Error::config("dropout.d_target", "must be >= 1"));
        }
        let c = &self.controller;
        if c.enabled {
            if c.calibration_rounds == 0 {
                return Err(Error::config("controller.calibration_rounds", "must be >= 1"));
            }
            if !(2..=12).contains(&c.b_base) {
                return Err(Error::config("controller.b_base", "must lie in [2, 12]"));
            }
            let e = match c.e_thresh {
                EThresh::Fixed(e) => e,
                EThresh::Auto => 1.0,
            };
            c.overrides().resolve(e).validate()?;
        }
        if self.gate.tau == 0 {
            return Err(Error::config("gate.tau", "must be >= 1 (tau = 1 sends every round)"));
        }
        if self.qsgd.levels == 0 {
            return Err(Error::config("qsgd.levels", "must be >= 1"));
        }
        if !(self.fedprox.mu >= 0.0 && self.fedprox.mu.is_finite()) {
            return Err(Error::config("fedprox.mu", "must be >= 0"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyword_fields_round_trip() {
        let g: GateSettings = serde_json::from_str(r#"{"comm_eps":"auto:p25","tau":3}"#).unwrap();
        assert_eq!(g.comm_eps, CommEps::Percentile(25.0));
        let back: GateSettings = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        assert_eq!(back, g);

        let c: CodecSettings = serde_json::from_str(r#"{"bits":"full"}"#).unwrap();
        assert_eq!(c.bits, BitDepth::Full);
        let c: CodecSettings = serde_json::from_str(r#"{"bits":32}"#).unwrap();
        assert_eq!(c.bits, BitDepth::Full);
        let c: CodecSettings = serde_json::from_str(r#"{"bits":4}"#).unwrap();
        assert_eq!(c.bits, BitDepth::Bits(4));
        assert!(serde_json::from_str::<CodecSettings>(r#"{"bits":0}"#).is_err());
        assert!(serde_json::from_str::<CodecSettings>(r#"{"bits":4.5}"#).is_err());
        assert!(serde_json::from_str::<GateSettings>(r#"{"comm_eps":"auto:p120"}"#).is_err());
        assert!(serde_json::from_str::<ControllerSettings>(r#"{"e_thresh":-1}"#).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<GateSettings>(r#"{"tau":2,"eps":0.1}"#).is_err());
        assert!(serde_json::from_str::<SimConfig>(r#"{"gate":{"taux":2}}"#).is_err());
    }

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = SimConfig::default();
        c.validate().unwrap();
        let back: SimConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn validation_names_the_key() {
        let mut c = SimConfig::default();
        c.gate.tau = 0;
        assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "gate.tau"));
        let mut c = SimConfig::default();
        c.controller.gamma = 1.0;
        assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "controller.gamma"));
        let mut c = SimConfig::default();
        c.controller.window = 0;
        assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "controller.window"));
    }
}
