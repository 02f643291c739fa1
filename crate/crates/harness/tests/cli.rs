//! End-to-end checks through the `flc` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flc_harness::metrics_csv::{read_csv, COLUMNS};

fn flc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flc"))
        .args(args)
        .current_dir(cwd)
        .env("FLC_THREADS", "2")
        .output()
        .expect("flc runs")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "flc failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

const SMALL: &str = r#"{
  "dataset": {"kind": "synthetic", "samples": 400, "test_samples": 200},
  "scheme": "proposed",
  "rounds": 12,
  "seeds": [1, 2],
  "partition": {"mode": "dirichlet", "alpha": 0.5, "num_clients": 5},
  "training": {"eta": 0.05},
  "gate": {"comm_eps": "auto:p25"}
}"#;

#[test]
fn runs_are_byte_identical_across_invocations() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.json", SMALL);
    let cfg = cfg.to_str().unwrap();
    ok(flc(&["run", "--config", cfg, "--out", "a"], tmp.path()));
    ok(flc(&["run", "--config", cfg, "--out", "b"], tmp.path()));
    for seed in [1, 2] {
        let a = fs::read(tmp.path().join(format!("a/seed-{seed}/metrics.csv"))).unwrap();
        let b = fs::read(tmp.path().join(format!("b/seed-{seed}/metrics.csv"))).unwrap();
        assert_eq!(a, b, "seed {seed}");
    }
    let one = fs::read(tmp.path().join("a/seed-1/metrics.csv")).unwrap();
    let two = fs::read(tmp.path().join("a/seed-2/metrics.csv")).unwrap();
    assert_ne!(one, two);
}

#[test]
fn manifest_reruns_reproduce_the_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.json", SMALL);
    ok(flc(&["run", "--config", cfg.to_str().unwrap(), "--out", "first"], tmp.path()));
    ok(flc(
        &["run", "--config", "first/seed-2/manifest.json", "--out", "again"],
        tmp.path(),
    ));
    assert!(!tmp.path().join("again/seed-1").exists());
    assert_eq!(
        fs::read(tmp.path().join("first/seed-2/metrics.csv")).unwrap(),
        fs::read(tmp.path().join("again/seed-2/metrics.csv")).unwrap()
    );
}

#[test]
fn zero_rounds_write_only_the_initial_row() {
    let tmp = tempfile::tempdir().unwrap();
    let body = SMALL.replace("\"rounds\": 12", "\"rounds\": 0");
    let cfg = write_config(tmp.path(), "zero.json", &body);
    ok(flc(&["run", "--config", cfg.to_str().unwrap(), "--out", "z", "--seed", "4"], tmp.path()));
    let text = fs::read_to_string(tmp.path().join("z/seed-4/metrics.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], COLUMNS.join(","));
    assert!(lines[1].starts_with("0,"));
}

#[test]
fn reference_loop_matches_the_stripped_proposed_scheme() {
    let tmp = tempfile::tempdir().unwrap();
    let base = r#"{
  "dataset": {"kind": "synthetic", "samples": 400, "test_samples": 200},
  "rounds": 20,
  "partition": {"num_clients": 4},
  "training": {"eta": 0.05},
  SCHEME
}"#;
    let stripped = base.replace(
        "SCHEME",
        r#""scheme": "proposed", "dropout": {"enabled": false}, "controller": {"enabled": false},
  "codec": {"bits": 32}, "gate": {"comm_eps": 0}"#,
    );
    let reference = base.replace("SCHEME", r#""scheme": "fedsgd-ref""#);
    let a = write_config(tmp.path(), "a.json", &stripped);
    let b = write_config(tmp.path(), "b.json", &reference);
    ok(flc(&["run", "--config", a.to_str().unwrap(), "--out", "a"], tmp.path()));
    ok(flc(&["run", "--config", b.to_str().unwrap(), "--out", "b"], tmp.path()));
    let ra = read_csv(&tmp.path().join("a/seed-1/metrics.csv")).unwrap();
    let rb = read_csv(&tmp.path().join("b/seed-1/metrics.csv")).unwrap();
    assert_eq!(ra.len(), 21);
    for (x, y) in ra.iter().zip(&rb) {
        assert_eq!(x.test_acc.to_bits(), y.test_acc.to_bits(), "round {}", x.round);
        assert_eq!(x.test_loss.to_bits(), y.test_loss.to_bits(), "round {}", x.round);
    }
}

#[test]
fn comparing_a_run_with_itself_shows_no_difference() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.json", SMALL);
    ok(flc(&["run", "--config", cfg.to_str().unwrap(), "--out", "r"], tmp.path()));
    let summary = ok(flc(&["compare", "r", "r", "--target-acc", "0.5", "--out", "cmp"], tmp.path()));
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    let tail = |r: &str| r.split(',').skip(1).map(str::to_string).collect::<Vec<_>>();
    assert_eq!(tail(rows[0]), tail(rows[1]));

    let table = fs::read_to_string(tmp.path().join("cmp/comparison.csv")).unwrap();
    let header: Vec<&str> = table.lines().next().unwrap().split(',').collect();
    for line in table.lines().skip(1) {
        for (name, value) in header.iter().zip(line.split(',')) {
            if name.ends_with("_diff") {
                assert_eq!(value.parse::<f64>().unwrap(), 0.0, "{name}");
            }
        }
    }
    for chart in ["accuracy.svg", "loss.svg", "bits.svg"] {
        let svg = fs::read_to_string(tmp.path().join("cmp").join(chart)).unwrap();
        assert!(svg.starts_with("<svg"));
    }
}

#[test]
fn bad_configs_name_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        (SMALL.replace("\"rounds\": 12", "\"rounds\": 12, \"roundz\": 3"), "roundz"),
        (SMALL.replace("\"eta\": 0.05", "\"eta\": -1"), "training.eta"),
        (SMALL.replace("\"auto:p25\"", "\"auto:p250\""), "gate.comm_eps"),
        (SMALL.replace("\"num_clients\": 5", "\"num_clients\": 0"), "partition.num_clients"),
    ];
    for (i, (body, key)) in cases.iter().enumerate() {
        let cfg = write_config(tmp.path(), &format!("bad{i}.json"), body);
        let out = flc(&["validate", "--config", cfg.to_str().unwrap()], tmp.path());
        assert!(!out.status.success());
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(key), "{key} missing from: {err}");
    }
}

#[test]
fn validate_prints_the_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "min.json", r#"{"dataset": {"kind": "synthetic"}}"#);
    let printed = ok(flc(&["validate", "--config", cfg.to_str().unwrap()], tmp.path()));
    let value: serde_json::Value = serde_json::from_str(&printed).unwrap();
    assert_eq!(value["scheme"], "proposed");
    assert_eq!(value["gate"]["comm_eps"], "auto:p50");
    assert_eq!(value["rounds"], 50);
}

#[test]
fn gen_data_writes_train_and_test_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_config(
        tmp.path(),
        "gen.json",
        r#"{"dataset": {"samples": 40, "test_samples": 12, "features": 3, "classes": 2}, "seed": 3}"#,
    );
    ok(flc(&["gen-data", "--spec", spec.to_str().unwrap(), "--out", "data"], tmp.path()));
    let train = fs::read_to_string(tmp.path().join("data/train.csv")).unwrap();
    let test = fs::read_to_string(tmp.path().join("data/test.csv")).unwrap();
    assert_eq!(train.lines().count(), 41);
    assert_eq!(test.lines().count(), 13);
}

#[test]
fn every_shipped_config_validates() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    let mut stack = vec![root];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "json") && path.file_name().unwrap() != "gendata.json" {
                flc_harness::load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
                seen += 1;
            }
        }
    }
    assert!(seen >= 10);
}
