//! Writing generated datasets to disk.

use std::fs;
use std::path::{Path, PathBuf};

use flc_core::runtime::data::{Dataset, SyntheticSpec};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataSpec {
    pub dataset: SyntheticSpec,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_seed() -> u64 {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("data/synthetic")
}

pub fn load_spec(path: &Path) -> Result<GenDataSpec> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| HarnessError::Parse {
        path: path.to_path_buf(),
        key: e.path().to_string(),
        message: e.into_inner().to_string(),
    })
}

fn write_split(path: &Path, data: &Dataset) -> Result<()> {
    let csv_err = |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<String> = (0..data.features()).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..data.len() {
        let mut record: Vec<String> = data.row(i).iter().map(|v| v.to_string()).collect();
        record.push(data.label(i).to_string());
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Writes `train.csv` and `test.csv` (features then label) into `out`.
pub fn generate(spec: &GenDataSpec, out: &Path) -> Result<(PathBuf, PathBuf)> {
    let (train, test) = spec.dataset.generate(spec.seed)?;
    fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let paths = (out.join("train.csv"), out.join("test.csv"));
    write_split(&paths.0, &train)?;
    write_split(&paths.1, &test)?;
    Ok(paths)
}
