use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn xmod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xmod-align"))
        .args(args)
        .env_remove("XMOD_ALIGN_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = xmod(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Small dataset shared by the benchmark-style tests.
fn small_dataset(dir: &TempDir) -> std::path::PathBuf {
    let data = dir.path().join("data");
    ok(&["gen-synth", "--out", p(&data), "--classes", "8", "--per-class", "12", "--dim", "16", "--seed", "5"]);
    data
}

const QUICK: &[&str] = &["--tasks", "6", "--epochs", "40", "--m", "5"];

fn benchmark(data: &Path, out: &Path, extra: &[&str]) -> String {
    let mut args = vec!["benchmark", "--data", p(data), "--out", p(out)];
    args.extend_from_slice(QUICK);
    args.extend_from_slice(extra);
    ok(&args);
    fs::read_to_string(out.join("tasks.jsonl")).unwrap()
}

#[test]
fn gen_synth_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["gen-synth", "--out", p(out), "--classes", "4", "--per-class", "3", "--seed", "9"]);
    }
    for name in ["manifest", "features.bin", "labels.bin", "text_features.bin"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    assert!(a.join("run_config.toml").exists());
}

#[test]
fn missing_output_is_a_usage_error() {
    assert_eq!(xmod(&["gen-synth"]).status.code(), Some(2));
    assert_eq!(xmod(&["benchmark", "--data", "x"]).status.code(), Some(2));
    assert_eq!(xmod(&["benchmark", "--no-such-flag"]).status.code(), Some(2));
}

#[test]
fn bad_datasets_exit_with_data_error() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let missing = dir.path().join("missing");
    assert_eq!(xmod(&["benchmark", "--data", p(&missing), "--out", p(&out)]).status.code(), Some(3));

    let data = small_dataset(&dir);
    let features = data.join("features.bin");
    let mut bytes = fs::read(&features).unwrap();
    bytes[40] ^= 0x01;
    fs::write(&features, bytes).unwrap();
    let res = xmod(&["benchmark", "--data", p(&data), "--out", p(&out)]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("checksum"));
}

#[test]
fn benchmark_writes_summary_and_reruns_from_its_config() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(&dir);
    let first = dir.path().join("first");
    let tasks = benchmark(&data, &first, &["--measure-gap"]);
    assert_eq!(tasks.lines().count(), 6);

    let summary = json(&first.join("summary.json"));
    assert_eq!(summary["task_count"], 6);
    let mean = summary["mean"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&mean));
    assert!(summary["mean_gap"].as_f64().unwrap() >= 0.0);

    let second = dir.path().join("second");
    let config = first.join("run_config.toml");
    ok(&["benchmark", "--config", p(&config), "--out", p(&second)]);
    assert_eq!(tasks, fs::read_to_string(second.join("tasks.jsonl")).unwrap());
}

#[test]
fn no_phase_matches_zero_weights() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(&dir);
    let off = benchmark(&data, &dir.path().join("off"), &["--phase", "no"]);
    let zero = benchmark(&data, &dir.path().join("zero"), &["--lambda", "0", "--beta", "0"]);
    assert_eq!(off, zero);
    let full = benchmark(&data, &dir.path().join("full"), &[]);
    assert_ne!(off, full);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(&dir);
    let serial = benchmark(&data, &dir.path().join("serial"), &[]);
    let parallel = benchmark(&data, &dir.path().join("parallel"), &["--parallel", "4"]);
    assert_eq!(serial, parallel);

    let out = dir.path().join("env");
    let mut args = vec!["benchmark", "--data", p(&data), "--out", p(&out)];
    args.extend_from_slice(QUICK);
    let res = Command::new(env!("CARGO_BIN_EXE_xmod-align"))
        .args(&args)
        .env("XMOD_ALIGN_THREADS", "3")
        .output()
        .unwrap();
    assert!(res.status.success());
    assert_eq!(serial, fs::read_to_string(out.join("tasks.jsonl")).unwrap());
    assert!(fs::read_to_string(out.join("run_config.toml")).unwrap().contains("threads = 3"));
}

#[test]
fn verify_theorem_holds_on_defaults() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("theorem");
    ok(&["verify-theorem", "--out", p(&out), "--instances", "10"]);
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["breaches"].as_array().unwrap().len(), 0);
    assert!(summary["ratios_measured"].as_u64().unwrap() > 0);
    assert_eq!(summary["ratios_measured"], summary["ratios_in_band"]);
    assert!(summary["same_class_checked"].as_u64().unwrap() > 0);
    let lines = fs::read_to_string(out.join("theorem.jsonl")).unwrap();
    assert_eq!(lines.lines().count() as u64, summary["pairs"].as_u64().unwrap());
}

#[test]
fn verify_theorem_with_zero_step_changes_nothing() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("theorem");
    ok(&["verify-theorem", "--out", p(&out), "--instances", "3", "--eta", "0"]);
    for line in fs::read_to_string(out.join("theorem.jsonl")).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["delta_cos_actual"].as_f64(), Some(0.0));
        assert_eq!(v["delta_cos_predicted"].as_f64(), Some(0.0));
    }
}

#[test]
fn gap_shift_separates_aligned_from_offset_sets() {
    let dir = TempDir::new().unwrap();
    let aligned = dir.path().join("aligned");
    ok(&[
        "gen-synth", "--out", p(&aligned), "--classes", "5", "--per-class", "4",
        "--sigma", "0", "--gap", "0", "--rotation", "0",
    ]);
    let out = dir.path().join("gap-aligned");
    let stdout = ok(&["gap-shift", "--data", p(&aligned), "--out", p(&out)]);
    assert!(stdout.contains("Acc / Gap: 100.00 / 0.000"), "{stdout}");
    let report = json(&out.join("gap_report.json"));
    assert_eq!(report["alpha_star"].as_f64(), Some(0.0));
    assert!(report["gap"].as_f64().unwrap().abs() < 1e-9);

    let offset = dir.path().join("offset");
    ok(&[
        "gen-synth", "--out", p(&offset), "--classes", "5", "--per-class", "4",
        "--sigma", "0.02", "--gap", "2", "--rotation", "0",
    ]);
    let out = dir.path().join("gap-offset");
    ok(&["gap-shift", "--data", p(&offset), "--out", p(&out)]);
    assert!(json(&out.join("gap_report.json"))["gap"].as_f64().unwrap() > 0.0);
    let acc = fs::read_to_string(out.join("gap_acc.dat")).unwrap();
    let zero_row = acc.lines().find(|l| l.split_whitespace().next() == Some("0"));
    assert!(zero_row.is_some(), "{acc}");
}

#[test]
fn probe_saves_snapshots_and_reports() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(&dir);
    let out = dir.path().join("probe");
    ok(&["probe", "--data", p(&data), "--out", p(&out), "--epochs", "40", "--m", "5", "--snapshot-every", "10"]);
    for name in ["probe.dat", "probe.jsonl", "trajectory.jsonl", "delta_cos.jsonl", "summary.json", "run_config.toml"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let snapshots: Vec<_> = fs::read_dir(out.join("snapshots")).unwrap().collect();
    assert_eq!(snapshots.len(), 4);
    assert_eq!(json(&out.join("summary.json"))["snapshots"], 4);
    assert_eq!(fs::read_to_string(out.join("trajectory.jsonl")).unwrap().lines().count(), 40);

    let res = xmod(&["probe", "--data", p(&data), "--out", p(&out), "--snapshot-every", "0"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn single_cell_sweep_matches_benchmark() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(&dir);
    benchmark(&data, &dir.path().join("bench"), &["--lambda", "0.5", "--beta", "1"]);
    let bench = json(&dir.path().join("bench/summary.json"));

    let out = dir.path().join("sweep");
    let mut args = vec!["sweep", "--data", p(&data), "--out", p(&out), "--lambdas", "0.5", "--betas", "1"];
    args.extend_from_slice(QUICK);
    ok(&args);
    let mut reader = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 1);
    let mean: f64 = rows[0][3].parse().unwrap();
    assert_eq!(mean, bench["mean"].as_f64().unwrap());
}
