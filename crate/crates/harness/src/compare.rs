//! Side-by-side comparison of finished runs.

use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{HarnessError, Result};
use crate::run::{load_run, LoadedSeed};
use crate::svg::{line_chart, Series};

/// Mean and min/max band of one metric across seeds, per round.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Band {
    fn from_seeds(seeds: &[LoadedSeed], rounds: usize, metric: impl Fn(&LoadedSeed, usize) -> f64) -> Self {
        let mut band = Band {
            mean: Vec::with_capacity(rounds),
            min: Vec::with_capacity(rounds),
            max: Vec::with_capacity(rounds),
        };
        for r in 0..rounds {
            let values: Vec<f64> = seeds.iter().map(|s| metric(s, r)).collect();
            band.mean.push(values.iter().sum::<f64>() / values.len() as f64);
            band.min.push(values.iter().cloned().fold(f64::INFINITY, f64::min));
            band.max.push(values.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        }
        band
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub label: String,
    pub dir: PathBuf,
    pub scheme: String,
    pub seeds: Vec<u64>,
    pub accuracy: Band,
    pub loss: Band,
    pub bits_cum: Band,
}

impl RunSummary {
    pub fn rounds(&self) -> usize {
        self.accuracy.mean.len()
    }

    pub fn final_accuracy(&self) -> f64 {
        *self.accuracy.mean.last().unwrap_or(&0.0)
    }

    pub fn final_bits(&self) -> f64 {
        *self.bits_cum.mean.last().unwrap_or(&0.0)
    }
}

/// First round whose mean accuracy reaches `target`.
pub fn rounds_to_target(accuracy: &[f64], target: f64) -> Option<usize> {
    accuracy.iter().position(|&a| a >= target)
}

pub fn summarize(dir: &Path) -> Result<RunSummary> {
    let seeds = load_run(dir)?;
    let rounds = seeds.iter().map(|s| s.rows.len()).min().unwrap_or(0);
    let first = &seeds[0].manifest.config;
    Ok(RunSummary {
        label: first.name.clone().unwrap_or_else(|| first.scheme.name().to_string()),
        dir: dir.to_path_buf(),
        scheme: first.scheme.name().to_string(),
        seeds: seeds.iter().map(|s| s.manifest.seed).collect(),
        accuracy: Band::from_seeds(&seeds, rounds, |s, r| s.rows[r].test_acc),
        loss: Band::from_seeds(&seeds, rounds, |s, r| s.rows[r].test_loss),
        bits_cum: Band::from_seeds(&seeds, rounds, |s, r| s.rows[r].bits_cum as f64),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub runs: Vec<RunSummary>,
    pub target_acc: Option<f64>,
}

/// Loads and aligns the runs; all of them must share the dataset and the
/// partition rule.
pub fn compare(dirs: &[PathBuf], target_acc: Option<f64>) -> Result<Comparison> {
    if dirs.len() < 2 {
        return Err(HarnessError::Compare("need at least two run directories".into()));
    }
    let mut reference = None;
    let mut runs = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let seeds = load_run(dir)?;
        let cfg = &seeds[0].manifest.config;
        // client counts may differ (client sweeps); the split rule may not
        let key = (cfg.dataset.clone(), cfg.partition.mode, cfg.partition.alpha.to_bits());
        match &reference {
            None => reference = Some(key),
            Some(r) if *r != key => {
                return Err(HarnessError::Compare(format!(
                    "{} uses a different dataset or partition than {}",
                    dir.display(),
                    dirs[0].display()
                )))
            }
            Some(_) => {}
        }
        runs.push(summarize(dir)?);
    }
    for i in 0..runs.len() {
        if runs[..i].iter().any(|r| r.label == runs[i].label) {
            runs[i].label = format!("{}#{}", runs[i].label, i + 1);
        }
    }
    Ok(Comparison { runs, target_acc })
}

fn fmt_opt(v: Option<usize>) -> String {
    v.map(|r| r.to_string()).unwrap_or_default()
}

impl Comparison {
    fn rounds(&self) -> usize {
        self.runs.iter().map(RunSummary::rounds).min().unwrap_or(0)
    }

    /// Per-round table; difference columns are against the first run.
    pub fn table_csv(&self) -> String {
        let mut s = String::from("round");
        for r in &self.runs {
            for col in ["acc_mean", "acc_min", "acc_max", "loss_mean", "bits_cum", "acc_diff", "loss_diff"] {
                let _ = write!(s, ",{}:{col}", r.label);
            }
        }
        s.push('\n');
        let base = &self.runs[0];
        for t in 0..self.rounds() {
            let _ = write!(s, "{t}");
            for r in &self.runs {
                let _ = write!(
                    s,
                    ",{},{},{},{},{},{},{}",
                    r.accuracy.mean[t],
                    r.accuracy.min[t],
                    r.accuracy.max[t],
                    r.loss.mean[t],
                    r.bits_cum.mean[t],
                    r.accuracy.mean[t] - base.accuracy.mean[t],
                    r.loss.mean[t] - base.loss.mean[t],
                );
            }
            s.push('\n');
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from(
            "run,scheme,seeds,rounds,final_acc_mean,final_acc_min,final_acc_max,final_loss_mean,bits_cum_mean,bits_ratio,rounds_to_target\n",
        );
        let base_bits = self.runs[0].final_bits();
        for r in &self.runs {
            let last = r.rounds().saturating_sub(1);
            let ratio = if base_bits > 0.0 { r.final_bits() / base_bits } else { 0.0 };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.label,
                r.scheme,
                r.seeds.len(),
                last,
                r.final_accuracy(),
                r.accuracy.min[last],
                r.accuracy.max[last],
                r.loss.mean[last],
                r.final_bits(),
                ratio,
                fmt_opt(self.target_acc.and_then(|t| rounds_to_target(&r.accuracy.mean, t))),
            );
        }
        s
    }

    pub fn charts(&self) -> Vec<(&'static str, String)> {
        let series = |pick: fn(&RunSummary) -> &Band| -> Vec<Series> {
            self.runs
                .iter()
                .map(|r| {
                    let b = pick(r);
                    Series {
                        label: r.label.clone(),
                        x: (0..b.mean.len()).map(|t| t as f64).collect(),
                        mean: b.mean.clone(),
                        band: Some((b.min.clone(), b.max.clone())),
                    }
                })
                .collect()
        };
        vec![
            ("accuracy.svg", line_chart("Test accuracy", "round", "accuracy", &series(|r| &r.accuracy))),
            ("loss.svg", line_chart("Test loss", "round", "cross-entropy", &series(|r| &r.loss))),
            ("bits.svg", line_chart("Cumulative uplink", "round", "bits", &series(|r| &r.bits_cum))),
        ]
    }

    /// Writes `comparison.csv`, `summary.csv` and the charts into `out`.
    pub fn write(&self, out: &Path) -> Result<()> {
        fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
        let mut files = vec![
            ("comparison.csv", self.table_csv()),
            ("summary.csv", self.summary_csv()),
        ];
        files.extend(self.charts());
        for (name, body) in files {
            let path = out.join(name);
            fs::write(&path, body).map_err(|e| HarnessError::io(path, e))?;
        }
        Ok(())
    }
}
