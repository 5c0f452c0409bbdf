//! End-to-end tests of the `edetect` binary.

use std::path::Path;
use std::process::{Command, Output};

use edetect::cli::read_path;
use edetect::simulate::DetectorConfig;

const BIN: &str = env!("CARGO_BIN_EXE_edetect");

const BERNOULLI: [&str; 8] = [
    "--family",
    "bernoulli",
    "--p0",
    "0.49",
    "--delta-lower",
    "0.02",
    "--delta-upper",
    "0.41",
];

fn edetect(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("EDETECT_LOG", "off").output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn generate(dir: &Path, seed: u64) -> String {
    let path = dir.join(format!("stream-{seed}.csv"));
    let p = path.to_str().unwrap();
    let mut args = vec!["generate"];
    args.extend(BERNOULLI);
    let seed = seed.to_string();
    args.extend([
        "--pre-mean",
        "0.3",
        "--post-mean",
        "0.7",
        "--changepoint",
        "100",
        "--length",
        "400",
        "--seed",
        &seed,
        "--output",
        p,
    ]);
    ok(&edetect(&args));
    p.to_string()
}

fn run(input: &str, output: &str, mode: &str) -> toml::Table {
    let mut args = vec!["run"];
    args.extend(BERNOULLI);
    args.extend([
        "--alpha", "0.01", "--mode", mode, "--input", input, "--column", "x", "--output", output,
    ]);
    ok(&edetect(&args)).parse().unwrap()
}

fn stop_step(report: &toml::Table, key: &str) -> Option<i64> {
    let t = report.get(key)?.as_table()?;
    (t.get("outcome")?.as_str()? == "stopped").then(|| t["step"].as_integer().unwrap())
}

#[test]
fn calibrate_reproduces_baseline_count() {
    let mut args = vec!["calibrate", "--alpha", "1e-3"];
    args.extend(BERNOULLI);
    let text = ok(&edetect(&args));
    let cfg: DetectorConfig = toml::from_str(&text).unwrap();
    let DetectorConfig::Mixture { calibration, .. } = cfg else {
        panic!("expected a finite mixture, got {cfg:?}");
    };
    assert_eq!(calibration.k_alpha, 69);
    assert_eq!(calibration.lambdas.len(), 70);
}

#[test]
fn persisted_calibration_gives_identical_run() {
    let dir = tempfile::tempdir().unwrap();
    let cal = dir.path().join("cal.toml");
    let mut args = vec!["calibrate", "--alpha", "0.01", "--output", cal.to_str().unwrap()];
    args.extend(BERNOULLI);
    ok(&edetect(&args));
    let input = generate(dir.path(), 3);
    let inline = dir.path().join("inline.csv");
    run(&input, inline.to_str().unwrap(), "both");
    let loaded = dir.path().join("loaded.csv");
    ok(&edetect(&[
        "run",
        "--calibration",
        cal.to_str().unwrap(),
        "--alpha",
        "0.01",
        "--input",
        &input,
        "--column",
        "x",
        "--output",
        loaded.to_str().unwrap(),
    ]));
    assert_eq!(std::fs::read(inline).unwrap(), std::fs::read(loaded).unwrap());
}

#[test]
fn sr_stops_no_later_than_cusum() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..5 {
        let input = generate(dir.path(), seed);
        let out = dir.path().join("path.csv");
        let report = run(&input, out.to_str().unwrap(), "both");
        let sr = stop_step(&report, "sr").unwrap_or(i64::MAX);
        let cs = stop_step(&report, "cusum").unwrap_or(i64::MAX);
        assert!(sr <= cs, "seed {seed}: SR {sr} after CUSUM {cs}");
    }
}

#[test]
fn path_file_agrees_with_reported_stop() {
    let dir = tempfile::tempdir().unwrap();
    let input = generate(dir.path(), 11);
    let out = dir.path().join("path.csv");
    let report = run(&input, out.to_str().unwrap(), "sr");
    let stop = stop_step(&report, "sr").expect("the shifted stream is detected") as usize;
    let rows = read_path(std::fs::File::open(&out).unwrap()).unwrap();
    assert_eq!(rows.len(), stop);
    let first_crossing = rows.iter().position(|r| r.log_m_sr >= r.threshold).unwrap() + 1;
    assert_eq!(first_crossing, stop);
    assert!(rows.iter().all(|r| r.stopped == (r.step >= stop)));
}

#[test]
fn runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = generate(dir.path(), 7);
    let again = std::fs::read(&a).unwrap();
    generate(dir.path(), 7);
    assert_eq!(std::fs::read(&a).unwrap(), again);
    let (pa, pb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    run(&a, pa.to_str().unwrap(), "both");
    run(&a, pb.to_str().unwrap(), "both");
    assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(
        &cfg,
        "family = \"bernoulli\"\np0 = 0.49\ndelta-lower = 0.02\ndelta-upper = 0.41\nalpha = 0.01\n",
    )
    .unwrap();
    let text = ok(&edetect(&[
        "calibrate",
        "--config",
        cfg.to_str().unwrap(),
        "--alpha",
        "1e-3",
    ]));
    let DetectorConfig::Mixture { calibration, .. } = toml::from_str(&text).unwrap() else {
        panic!("expected a finite mixture");
    };
    assert_eq!(calibration.alpha, 1e-3);
    assert_eq!(calibration.k_alpha, 69);
}

#[test]
fn exit_codes_follow_error_class() {
    assert_eq!(edetect(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(edetect(&["--help"]).status.code(), Some(0));

    let mut missing = vec!["calibrate"];
    missing.extend(&BERNOULLI[..4]);
    assert_eq!(edetect(&missing).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "x\n1\n0\n0.5\n").unwrap();
    let out_path = dir.path().join("out.csv");
    let mut args = vec!["run"];
    args.extend(BERNOULLI);
    args.extend([
        "--alpha",
        "0.01",
        "--input",
        bad.to_str().unwrap(),
        "--column",
        "x",
        "--output",
    ]);
    args.push(out_path.to_str().unwrap());
    let out = edetect(&args);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("index 3"));

    let mut args = vec!["run"];
    args.extend(BERNOULLI);
    args.extend(["--alpha", "0.01", "--input", "/nonexistent/stream.csv"]);
    assert_eq!(edetect(&args).status.code(), Some(6));
}

#[test]
fn simulate_reports_arl_above_one_over_alpha() {
    let mut args = vec!["simulate"];
    args.extend(BERNOULLI);
    args.extend([
        "--alpha",
        "0.05",
        "--replications",
        "400",
        "--horizon",
        "2000",
        "--seed",
        "1",
    ]);
    let report: toml::Table = ok(&edetect(&args)).parse().unwrap();
    let mean = report["sr"]["mean_stat"].as_float().unwrap();
    assert!(mean >= 20.0, "mean run length {mean}");
}
