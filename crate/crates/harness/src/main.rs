use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flc_harness::compare::compare;
use flc_harness::run::{load_config_or_manifest, run_experiment};
use flc_harness::{gendata, load_config, Result};

#[derive(Parser)]
#[command(name = "flc", version, about = "Federated learning communication experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config (or re-run a manifest) for each of its seeds.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's `output` or runs/<name>.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run this single seed instead of the config's list.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare finished runs: aligned table, summary and SVG charts.
    Compare {
        #[arg(required = true, num_args = 2..)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        target_acc: Option<f64>,
        #[arg(long, default_value = "compare")]
        out: PathBuf,
    },
    /// Check a config and print it with every default filled in.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a synthetic dataset to CSV.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out, seed } => {
            let mut cfg = load_config_or_manifest(&config)?;
            if let Some(seed) = seed {
                cfg = cfg.with_seed(seed);
            }
            let out = out.or_else(|| cfg.output.clone()).unwrap_or_else(|| {
                let name = cfg.name.clone().unwrap_or_else(|| cfg.scheme.name().to_string());
                PathBuf::from("runs").join(name)
            });
            for dir in run_experiment(&cfg, &out)? {
                println!("{}", dir.display());
            }
        }
        Command::Compare { dirs, target_acc, out } => {
            let cmp = compare(&dirs, target_acc)?;
            cmp.write(&out)?;
            print!("{}", cmp.summary_csv());
        }
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
        }
        Command::GenData { spec, out } => {
            let spec = gendata::load_spec(&spec)?;
            let out = out.unwrap_or_else(|| spec.out.clone());
            let (train, test) = gendata::generate(&spec, &out)?;
            println!("{}\n{}", train.display(), test.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
