//! Experiment configuration files.

use std::path::{Path, PathBuf};

use flc_core::runtime::config::{
    CodecSettings, ControllerSettings, DropoutSettings, FedproxSettings, GateSettings, MetricsSettings,
    ModelSettings, QsgdSettings, Scheme, SimConfig, TrainingSettings,
};
use flc_core::runtime::data::{Dataset, SyntheticSpec};
use flc_core::runtime::mnist;
use flc_core::runtime::partition::PartitionSpec;
use flc_core::Error;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MnistSpec {
    /// Directory holding the IDX files; `None` uses `$FLC_DATA_DIR/mnist`
    /// or `data/mnist`.
    pub path: Option<PathBuf>,
    pub train_subset: Option<usize>,
    pub test_subset: Option<usize>,
}

impl Default for MnistSpec {
    fn default() -> Self {
        Self {
            path: None,
            train_subset: Some(1000),
            test_subset: Some(1000),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic(SyntheticSpec),
    Mnist(MnistSpec),
}

impl DatasetSpec {
    pub fn load(&self, run_seed: u64) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetSpec::Synthetic(spec) => Ok(spec.generate(run_seed)?),
            DatasetSpec::Mnist(spec) => {
                let dir = mnist::resolve_dir(spec.path.as_deref());
                let train = mnist::load_split(&dir, "train", spec.train_subset)?;
                let test = mnist::load_split(&dir, "t10k", spec.test_subset)?;
                Ok((train, test))
            }
        }
    }

    fn input_width(&self) -> usize {
        match self {
            DatasetSpec::Synthetic(s) => s.features,
            DatasetSpec::Mnist(_) => 784,
        }
    }
}

fn default_rounds() -> usize {
    50
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub partition: PartitionSpec,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default)]
    pub training: TrainingSettings,
    #[serde(default)]
    pub dropout: DropoutSettings,
    #[serde(default)]
    pub controller: ControllerSettings,
    #[serde(default)]
    pub codec: CodecSettings,
    #[serde(default)]
    pub gate: GateSettings,
    #[serde(default)]
    pub qsgd: QsgdSettings,
    #[serde(default)]
    pub fedprox: FedproxSettings,
    #[serde(default)]
    pub metrics: MetricsSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetSpec, sim: SimConfig) -> Self {
        Self {
            name: None,
            dataset,
            scheme: sim.scheme,
            rounds: sim.rounds,
            seeds: default_seeds(),
            partition: sim.partition,
            model: sim.model,
            training: sim.training,
            dropout: sim.dropout,
            controller: sim.controller,
            codec: sim.codec,
            gate: sim.gate,
            qsgd: sim.qsgd,
            fedprox: sim.fedprox,
            metrics: sim.metrics,
            output: None,
        }
    }

    pub fn sim(&self) -> SimConfig {
        SimConfig {
            scheme: self.scheme,
            rounds: self.rounds,
            partition: self.partition.clone(),
            model: self.model.clone(),
            training: self.training.clone(),
            dropout: self.dropout.clone(),
            controller: self.controller.clone(),
            codec: self.codec.clone(),
            gate: self.gate.clone(),
            qsgd: self.qsgd.clone(),
            fedprox: self.fedprox.clone(),
            metrics: self.metrics.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.dataset {
            DatasetSpec::Synthetic(s) => s.validate()?,
            DatasetSpec::Mnist(m) => {
                if m.train_subset == Some(0) {
                    return Err(Error::config("dataset.train_subset", "must be >= 1").into());
                }
                if m.test_subset == Some(0) {
                    return Err(Error::config("dataset.test_subset", "must be >= 1").into());
                }
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "needs at least one seed").into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::config("seeds", "contains duplicates").into());
        }
        self.sim().validate()?;
        Ok(())
    }

    /// Fills in every value that depends on other fields so the config is
    /// self-contained.
    pub fn resolved(mut self) -> Self {
        if self.model.hidden.is_none() {
            self.model.hidden = Some(self.model.hidden_for(self.dataset.input_width()));
        }
        if let DatasetSpec::Mnist(m) = &mut self.dataset {
            if m.path.is_none() {
                m.path = Some(mnist::resolve_dir(None));
            }
        }
        self
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seeds: vec![seed],
            ..self.clone()
        }
    }
}

/// Parses and validates a config; errors name the offending key.
pub fn parse_config(text: &str, origin: &Path) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        HarnessError::Parse {
            path: origin.to_path_buf(),
            key: if key == "." { "<root>".into() } else { key },
            message: e.into_inner().to_string(),
        }
    })?;
    config.validate()?;
    Ok(config.resolved())
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_config(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        parse_config(text, Path::new("test.json"))
    }

    #[test]
    fn minimal_config_is_fully_defaulted() {
        let c = parse(r#"{"scheme":"fedavg","dataset":{"kind":"synthetic"}}"#).unwrap();
        assert_eq!(c.scheme, Scheme::Fedavg);
        assert_eq!(c.model.hidden, Some(32));
        assert_eq!(c.rounds, 50);
        assert_eq!(c.partition.num_clients, 10);
        let text = serde_json::to_string_pretty(&c).unwrap();
        for key in ["\"controller\"", "\"gate\"", "\"dropout\"", "\"tau\"", "\"b_base\""] {
            assert!(text.contains(key), "{key} missing");
        }
    }

    #[test]
    fn round_trip_is_identical() {
        let c = parse(r#"{"dataset":{"kind":"mnist"},"gate":{"comm_eps":"auto:p40"}}"#).unwrap();
        let again = parse(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn errors_name_the_key() {
        let err = parse(r#"{"dataset":{"kind":"synthetic"},"gate":{"tau":0}}"#).unwrap_err();
        assert!(err.to_string().contains("gate.tau"), "{err}");
        let err = parse(r#"{"dataset":{"kind":"synthetic"},"gate":{"tua":2}}"#).unwrap_err();
        assert!(err.to_string().contains("gate"), "{err}");
        assert!(err.to_string().contains("tua"), "{err}");
        let err = parse(r#"{"dataset":{"kind":"synthetic"},"training":{"eta":"fast"}}"#).unwrap_err();
        assert!(err.to_string().contains("training.eta"), "{err}");
        let err = parse(r#"{"scheme":"fedavg"}"#).unwrap_err();
        assert!(err.to_string().contains("dataset"), "{err}");
        let err = parse(r#"{"dataset":{"kind":"synthetic","classes":1}}"#).unwrap_err();
        assert!(err.to_string().contains("dataset.classes"), "{err}");
        let err = parse(r#"{"dataset":{"kind":"synthetic","colour":1}}"#).unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
    }
}
