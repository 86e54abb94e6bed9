use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn blockpotts(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blockpotts"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn default_simulate_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = blockpotts(dir.path(), &["simulate", "--sweeps", "50"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("simulate.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "chain,sweep,b_1_1,b_1_2,b_1_3,b_2_1,b_2_2,b_2_3"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 50);
    for row in rows {
        let counts: Vec<usize> = row.split(',').skip(2).map(|x| x.parse().unwrap()).collect();
        assert_eq!(counts[..3].iter().sum::<usize>(), 10);
        assert_eq!(counts[3..].iter().sum::<usize>(), 10);
    }
    let manifest = json(&dir.path().join("simulate.manifest.json"));
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["blocks"], serde_json::json!([10, 10]));
    assert!(manifest["rng_algorithm"]
        .as_str()
        .unwrap()
        .contains("ChaCha8"));
}

#[test]
fn same_seed_gives_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        "--seed", "17", "simulate", "--sweeps", "40", "--chains", "3", "--sizes", "4,6",
    ];
    assert_eq!(code(&blockpotts(a.path(), &args)), 0);
    assert_eq!(code(&blockpotts(b.path(), &args)), 0);
    let x = fs::read(a.path().join("simulate.csv")).unwrap();
    let y = fs::read(b.path().join("simulate.csv")).unwrap();
    assert_eq!(x, y);

    let c = tempfile::tempdir().unwrap();
    let other = [
        "--seed", "18", "simulate", "--sweeps", "40", "--chains", "3", "--sizes", "4,6",
    ];
    assert_eq!(code(&blockpotts(c.path(), &other)), 0);
    assert_ne!(x, fs::read(c.path().join("simulate.csv")).unwrap());
}

#[test]
fn thread_count_does_not_change_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["simulate", "--sweeps", "30", "--chains", "4"];
    let mut one = vec!["--threads", "1"];
    one.extend(args);
    let mut four = vec!["--threads", "4"];
    four.extend(args);
    assert_eq!(code(&blockpotts(a.path(), &one)), 0);
    assert_eq!(code(&blockpotts(b.path(), &four)), 0);
    assert_eq!(
        fs::read(a.path().join("simulate.csv")).unwrap(),
        fs::read(b.path().join("simulate.csv")).unwrap()
    );
}

#[test]
fn conflicting_block_count_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = blockpotts(dir.path(), &["simulate", "--s", "3", "--sizes", "5,5"]);
    assert_eq!(code(&out), 2);
    assert!(!dir.path().join("simulate.csv").exists());
}

#[test]
fn invalid_values_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["simulate", "--alpha", "2", "--beta", "1"],
        vec!["simulate", "--init", "uniform-color:4"],
        vec!["simulate", "--scan", "sideways"],
        vec!["simulate", "--gamma", "0.2,0.2"],
        vec!["concentration", "--block", "3"],
        vec!["phase-diagram", "--alpha", "0.3"],
    ] {
        assert_eq!(code(&blockpotts(dir.path(), &args)), 2, "{args:?}");
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&blockpotts(dir.path(), &["exact", "--bogus", "1"])), 2);
}

#[test]
fn exact_over_the_cap_reports_required_size() {
    let dir = tempfile::tempdir().unwrap();
    let out = blockpotts(dir.path(), &["exact", "--sizes", "30,30", "--cap", "100"]);
    assert_eq!(code(&out), 3);
    // C(32,2)^2 count matrices.
    assert!(String::from_utf8_lossy(&out.stderr).contains("246016"));
}

#[test]
fn exact_writes_normalized_csv_and_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = blockpotts(dir.path(), &["exact", "--sizes", "1,2"]);
    assert_eq!(code(&out), 0);
    let csv = fs::read_to_string(dir.path().join("exact.csv")).unwrap();
    let total: f64 = csv
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert_eq!(csv.lines().count(), 1 + 3 * 6);
    let header = json(&dir.path().join("exact.header.json"));
    assert_eq!(header["support_size"], 18);
}

#[test]
fn lsi_check_fails_outside_the_condition() {
    let dir = tempfile::tempdir().unwrap();
    let out = blockpotts(
        dir.path(),
        &["lsi-check", "--q", "3", "--beta", "0.2", "--alpha", "0.1"],
    );
    assert_eq!(code(&out), 5);
}

#[test]
fn lsi_check_passes_at_weak_coupling() {
    let dir = tempfile::tempdir().unwrap();
    let out = blockpotts(
        dir.path(),
        &[
            "lsi-check",
            "--beta",
            "0.05",
            "--alpha",
            "0.02",
            "--num-f",
            "10",
        ],
    );
    assert_eq!(code(&out), 0);
    let report = json(&dir.path().join("lsi_check.json"));
    assert_eq!(report["passed"], true);
}

#[test]
fn phase_diagram_changes_label_once() {
    let dir = tempfile::tempdir().unwrap();
    let out = blockpotts(
        dir.path(),
        &[
            "phase-diagram",
            "--g-min",
            "2.5",
            "--g-max",
            "3.1",
            "--g-step",
            "0.1",
        ],
    );
    assert_eq!(code(&out), 0);
    let csv = fs::read_to_string(dir.path().join("phase_diagram.csv")).unwrap();
    let phases: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(phases.len(), 7);
    let changes = phases.windows(2).filter(|w| w[0] != w[1]).count();
    assert_eq!(changes, 1, "{phases:?}");
    assert_eq!(phases[0], "SUBCRITICAL");
    assert_eq!(*phases.last().unwrap(), "SUPERCRITICAL");
}

#[test]
fn equilibria_manifest_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = blockpotts(
        dir.path(),
        &["--seed", "5", "equilibria", "--alpha", "2", "--beta", "4"],
    );
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(dir.path().join("equilibria.manifest.json")).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(value["seed"], 5);
    assert_eq!(value["params"]["beta"], 4.0);
    assert_eq!(serde_json::to_value(&value).unwrap(), value);

    let report: blockpotts::EquilibriumReport =
        serde_json::from_str(&fs::read_to_string(dir.path().join("equilibria.json")).unwrap())
            .unwrap();
    assert_eq!(report.phase, blockpotts::Phase::Supercritical);
    assert_eq!(report.maximizers.len(), 3);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    fs::write(
        &config,
        r#"{"sweeps": 20, "sizes": [3, 3], "seed": 9, "out": "from_file.csv"}"#,
    )
    .unwrap();
    let out = blockpotts(
        dir.path(),
        &[
            "--config",
            config.to_str().unwrap(),
            "simulate",
            "--sweeps",
            "7",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("from_file.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 7);
    let manifest = json(&dir.path().join("from_file.manifest.json"));
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["blocks"], serde_json::json!([3, 3]));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    fs::write(&config, r#"{"sweep": 20}"#).unwrap();
    let out = blockpotts(
        dir.path(),
        &["--config", config.to_str().unwrap(), "simulate"],
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn concentration_exact_rows_respect_the_bound() {
    let dir = tempfile::tempdir().unwrap();
    let out = blockpotts(
        dir.path(),
        &[
            "concentration",
            "--sizes",
            "4,4",
            "--exact",
            "--beta",
            "0.05",
            "--alpha",
            "0.02",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("concentration.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "t,tail,standard_error,bound,asymptotic_bound,flagged"
    );
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let tail: f64 = f[1].parse().unwrap();
        let bound: f64 = f[3].parse().unwrap();
        assert!(tail <= bound);
        assert_eq!(f[5], "false");
    }
}

#[test]
fn landscape_has_one_column_per_block() {
    let dir = tempfile::tempdir().unwrap();
    let out = blockpotts(
        dir.path(),
        &["landscape", "--s", "3", "--mesh", "4", "--beta", "2"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("landscape.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "r,mu_plus_1,mu_plus_2,mu_plus_3,G"
    );
    assert!(csv.lines().count() > 1);
}
