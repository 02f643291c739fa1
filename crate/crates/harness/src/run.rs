//! Running configs and writing their outputs.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use flc_core::runtime::{RoundMetrics, Simulation};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{load_config, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::metrics_csv::{read_csv, to_csv_string, MetricsRow};

pub const ARTIFACT: &str = concat!("flc ", env!("CARGO_PKG_VERSION"));
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const THREADS_ENV: &str = "FLC_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub artifact: String,
    pub seed: u64,
    pub started: String,
    pub finished: String,
    /// Metrics file, relative to the manifest.
    pub metrics: String,
    /// Number of model parameters.
    pub dims: usize,
    /// Resolved config restricted to this seed.
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub dims: usize,
    pub metrics: Vec<RoundMetrics>,
}

/// Runs one seed in memory.
pub fn simulate(config: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let (train, test) = config.dataset.load(seed)?;
    let mut sim = Simulation::new(&config.sim(), &train, &test, seed)?;
    let metrics = sim.run()?;
    Ok(SeedRun {
        seed,
        dims: sim.dims(),
        metrics,
    })
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn write_seed(out: &Path, manifest: &RunManifest, csv: &str) -> Result<PathBuf> {
    let target = seed_dir(out, manifest.seed);
    let tmp = out.join(format!(".seed-{}.tmp-{}", manifest.seed, std::process::id()));
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e| HarnessError::io(p, e)
    };
    let write = || -> Result<()> {
        fs::create_dir_all(&tmp).map_err(io(&tmp))?;
        fs::write(tmp.join(METRICS_FILE), csv).map_err(io(&tmp))?;
        let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
        fs::write(tmp.join(MANIFEST_FILE), json + "\n").map_err(io(&tmp))?;
        if target.exists() {
            fs::remove_dir_all(&target).map_err(io(&target))?;
        }
        fs::rename(&tmp, &target).map_err(io(&target))
    };
    write().inspect_err(|_| {
        let _ = fs::remove_dir_all(&tmp);
    })?;
    Ok(target)
}

fn thread_pool() -> rayon::ThreadPool {
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
}

/// Runs every seed (in parallel, `FLC_THREADS` workers) and writes
/// `<out>/seed-<n>/{metrics.csv, manifest.json}`. A failing seed leaves no
/// partial directory behind.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    thread_pool().install(|| {
        config
            .seeds
            .par_iter()
            .map(|&seed| {
                let started = now();
                let run = simulate(config, seed)?;
                let manifest = RunManifest {
                    artifact: ARTIFACT.into(),
                    seed,
                    started,
                    finished: now(),
                    metrics: METRICS_FILE.into(),
                    dims: run.dims,
                    config: config.with_seed(seed),
                };
                write_seed(out, &manifest, &to_csv_string(&run.metrics))
            })
            .collect()
    })
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
        path: path.to_path_buf(),
        key: "<manifest>".into(),
        message: e.to_string(),
    })?;
    manifest.config.validate()?;
    Ok(manifest)
}

/// Config file or manifest: a manifest reruns exactly its recorded config.
pub fn load_config_or_manifest(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
        path: path.to_path_buf(),
        key: "<root>".into(),
        message: e.to_string(),
    })?;
    if value.get("artifact").is_some() && value.get("config").is_some() {
        Ok(read_manifest(path)?.config)
    } else {
        load_config(path)
    }
}

#[derive(Debug, Clone)]
pub struct LoadedSeed {
    pub manifest: RunManifest,
    pub rows: Vec<MetricsRow>,
}

/// Loads every `seed-*` directory under a run directory (or the directory
/// itself if it holds a manifest), ordered by seed.
pub fn load_run(dir: &Path) -> Result<Vec<LoadedSeed>> {
    let mut seed_dirs = Vec::new();
    if dir.join(MANIFEST_FILE).exists() {
        seed_dirs.push(dir.to_path_buf());
    } else {
        for entry in fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))? {
            let path = entry.map_err(|e| HarnessError::io(dir, e))?.path();
            if path.join(MANIFEST_FILE).exists() {
                seed_dirs.push(path);
            }
        }
    }
    let mut out = seed_dirs
        .iter()
        .map(|d| {
            let manifest = read_manifest(&d.join(MANIFEST_FILE))?;
            let rows = read_csv(&d.join(&manifest.metrics))?;
            Ok(LoadedSeed { manifest, rows })
        })
        .collect::<Result<Vec<_>>>()?;
    if out.is_empty() {
        return Err(HarnessError::Compare(format!("{}: no runs found", dir.display())));
    }
    out.sort_by_key(|s| s.manifest.seed);
    Ok(out)
}
