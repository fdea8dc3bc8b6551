use std::process::Command;

use proptest::prelude::*;
use redei_cli::{list_experiments, run_experiment, ExperimentConfig, Format, Metric, Report};

fn redei() -> Command {
    Command::new(env!("CARGO_BIN_EXE_redei"))
}

#[test]
fn registry_contains_the_core_experiments_in_stable_order() {
    let names: Vec<&str> = list_experiments().iter().map(|e| e.name).collect();
    for want in [
        "redei-distribution",
        "matrix-gap",
        "additive-suite",
        "divisor-trends",
        "measure-normalization",
        "pairing-kernels",
    ] {
        assert!(names.contains(&want), "{want} missing from {names:?}");
    }
    let again: Vec<&str> = list_experiments().iter().map(|e| e.name).collect();
    assert_eq!(names, again);
    assert!(list_experiments().iter().all(|e| !e.anchor.is_empty()));
}

#[test]
fn list_output_is_stable_and_anchored() {
    let run = || String::from_utf8(redei().arg("list").output().unwrap().stdout).unwrap();
    let first = run();
    assert_eq!(first, run());
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines.len(), list_experiments().len());
    for (line, e) in lines.iter().zip(list_experiments()) {
        assert!(line.starts_with(e.name) && line.ends_with(e.anchor), "{line}");
    }
}

#[test]
fn unknown_experiment_exits_nonzero() {
    let out = redei().args(["run", "--experiment", "unknown"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown experiment"));
}

#[test]
fn malformed_flags_exit_nonzero() {
    for args in [
        vec!["run", "--experiment", "measure-normalization", "--tolerance", "mass"],
        vec!["run", "--experiment", "measure-normalization", "--tolerance", "mass=-1"],
        vec!["run", "--experiment", "measure-normalization", "--l", "4"],
        vec!["run", "--experiment", "measure-normalization", "--format", "xml"],
    ] {
        let out = redei().args(&args).output().unwrap();
        assert_ne!(out.status.code(), Some(0), "{args:?}");
    }
}

#[test]
fn json_report_written_atomically_and_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("norm.json");
    let out = redei()
        .args(["run", "--experiment", "measure-normalization", "--no-timing", "--out"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Report = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(report.runtime_ms, 0);
    assert_eq!(report.config.name, "measure-normalization");
    assert!(report.all_pass() && report.results.iter().all(Metric::is_consistent));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn failing_metric_gives_exit_one() {
    // The prefix sum is 1 - 1e-15 in floating point, so a zero tolerance fails.
    let out =
        redei().args(["run", "--experiment", "measure-normalization", "--tolerance", "prefix=0"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("FAIL rank_prefix_sum"));
}

#[test]
fn csv_table_and_aliases() {
    let out = redei().args(["run", "--experiment", "measure-normalization", "--format", "csv"]).output().unwrap();
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("j,rank_prefix_prob,limit_rank_defect_prob\n"));
    assert_eq!(csv.lines().count(), 6);
    let out = redei().args(["divisor-stats", "--N", "100000", "--format", "csv"]).output().unwrap();
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("N,r,l,D_1,factor,frac_not_spaced,C_0,frac_not_regular,range\n"));
    assert!(csv.lines().skip(1).all(|l| l.starts_with("100000,")));
}

#[test]
fn seed_changes_sampled_metrics_only() {
    let run = |seed| {
        let mut cfg = ExperimentConfig::new("matrix-exactness");
        cfg.seed = seed;
        run_experiment(&cfg).unwrap()
    };
    let (a, b) = (run(1), run(2));
    assert_eq!(a.table, b.table);
    assert_ne!(a.canonical_json().unwrap(), b.canonical_json().unwrap());
    assert_eq!(a.canonical_json().unwrap(), run(1).canonical_json().unwrap());
}

#[test]
fn config_echo_resolves_defaults() {
    let rep = run_experiment(&ExperimentConfig::new("redei-structure")).unwrap();
    assert_eq!(rep.config.n, Some(100_000));
    assert_eq!(rep.config.l, 3);
    let mut cfg = ExperimentConfig::new("measure-normalization");
    cfg.format = Format::Csv;
    assert_eq!(run_experiment(&cfg).unwrap().config.tolerances["mass"], 1e-3);
}

#[test]
fn other_moduli_run() {
    let mut cfg = ExperimentConfig::new("redei-distribution");
    cfg.l = 5;
    cfg.n = Some(100_000);
    let rep = run_experiment(&cfg).unwrap();
    assert!(rep.metric("fields").unwrap().value > 0.0);
    cfg.name = "pairing-kernels".into();
    assert!(run_experiment(&cfg).unwrap().all_pass());
}

proptest! {
    #[test]
    fn pass_matches_the_comparison(value in -2.0f64..2.0, expected in -2.0f64..2.0, tol in 0.0f64..1.0, ok: bool) {
        let within = Metric::within("m", value, expected, tol);
        prop_assert_eq!(within.pass, (value - expected).abs() <= tol);
        prop_assert!(within.is_consistent());
        let at_most = Metric::at_most("m", value, expected, tol);
        prop_assert_eq!(at_most.pass, value <= expected + tol);
        prop_assert!(Metric::predicate("m", ok).is_consistent());
        prop_assert!(Metric::info("m", value).pass);
    }
}
