use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use balmarket::grid::{write_dataset, DatasetPaths};
use balmarket::report;
use balmarket::scenario::HourRecord;

fn data() -> PathBuf {
    balmarket::bundled_data_dir()
}

fn input_args(dir: &Path) -> Vec<String> {
    let p = |f: &str| dir.join(f).display().to_string();
    let mut args = vec!["--network".into(), p("network.json")];
    for d in 1..=3 {
        args.push("--feeders".into());
        args.push(p(&format!("feeder-{d}.json")));
    }
    args.extend(["--bids".into(), p("bids.json"), "--scenario".into(), p("scenario.json"), "--config".into(), p("config.json")]);
    args
}

fn balmarket(args: &[String]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_balmarket")).args(args).output().expect("binary runs")
}

fn simulate(dir: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["simulate".to_string()];
    args.extend(input_args(dir));
    args.extend(["--out".into(), out.display().to_string()]);
    args.extend(extra.iter().map(|s| s.to_string()));
    balmarket(&args)
}

fn clear_hour(dir: &Path, hour: &str) -> Output {
    let mut args = vec!["clear-hour".to_string()];
    args.extend(input_args(dir));
    args.extend(["--hour".into(), hour.into()]);
    balmarket(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn bundled_simulation_writes_artifacts() {
    let out = tempfile::tempdir().unwrap();
    let o = simulate(&data(), out.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let records = report::parse_results(&std::fs::read_to_string(out.path().join(report::RESULTS_FILE)).unwrap()).unwrap();
    assert_eq!(records.len(), 24);
    let dispatch = std::fs::read_to_string(out.path().join(report::DISPATCH_CSV)).unwrap();
    let participants = 4;
    assert_eq!(dispatch.lines().count(), 1 + 24 * participants);
    assert!(dispatch.starts_with("hour,participant,kind,mw,payment\n"));
    for f in [report::BIDS_CSV, report::RL_DISPATCH_CSV, report::SUMMARY_FILE] {
        assert!(out.path().join(f).is_file(), "{f}");
    }
}

#[test]
fn replay_writes_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(simulate(&data(), a.path(), &[]).status.code(), Some(0));
    assert_eq!(simulate(&data(), b.path(), &[]).status.code(), Some(0));
    for f in [report::RESULTS_FILE, report::BIDS_CSV, report::DISPATCH_CSV, report::RL_DISPATCH_CSV, report::SUMMARY_FILE] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn overrides_reach_the_run() {
    let out = tempfile::tempdir().unwrap();
    let o = simulate(&data(), out.path(), &["--settlement", "uniform", "--loss-price", "0", "--aggregation", "loss-adjusted"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let records = report::parse_results(&std::fs::read_to_string(out.path().join(report::RESULTS_FILE)).unwrap()).unwrap();
    let r = &records[5];
    assert_eq!(serde_json::to_value(r.settlement.mode).unwrap(), "uniform");
    // with a zero loss price the adjustment vanishes and DSO1 keeps its original bid prices
    let dso1 = r.stepped_bids.iter().find(|b| b.dso == 1).unwrap();
    assert_eq!(dso1.steps.iter().map(|s| s.price).collect::<Vec<_>>(), [10.0, 20.0]);
}

#[test]
fn missing_network_is_a_usage_error() {
    let out = tempfile::tempdir().unwrap();
    let mut args = vec!["simulate".to_string()];
    args.extend(input_args(&data()).into_iter().skip(2));
    args.extend(["--out".into(), out.path().display().to_string()]);
    let o = balmarket(&args);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--network"), "{}", stderr(&o));
}

#[test]
fn unknown_dso_prints_the_violation_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut sys = DatasetPaths::bundled().load().unwrap().into_inner();
    sys.bids[0].dso = 7;
    write_dataset(&sys, dir.path()).unwrap();
    std::fs::copy(data().join("scenario.json"), dir.path().join("scenario.json")).unwrap();
    let o = simulate(dir.path(), &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown-dso"), "{}", stderr(&o));
}

#[test]
fn unreadable_input_is_an_io_failure() {
    let dir = tempfile::tempdir().unwrap();
    for f in ["feeder-1.json", "feeder-2.json", "feeder-3.json", "bids.json", "scenario.json", "config.json"] {
        std::fs::copy(data().join(f), dir.path().join(f)).unwrap();
    }
    let o = simulate(dir.path(), &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("network.json"));
}

#[test]
fn clear_hour_three_is_idle() {
    let o = clear_hour(&data(), "3");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r: HourRecord = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r.hour, 3);
    assert!(r.is_idle());
    assert!(r.local_dispatches.is_empty());
    assert_eq!(r.clearing.objective, 0.0);
}

#[test]
fn clear_hour_shortfall_of_three() {
    // hour 18 of the bundled scenario: forecast 23, observed 20
    let o = clear_hour(&data(), "18");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r: HourRecord = serde_json::from_slice(&o.stdout).unwrap();
    assert!((r.total_imbalance() + 3.0).abs() < 1e-12);
    assert!((r.clearing.objective - 25.0).abs() < 1e-9);
    assert!((r.clearing.dso_accepted(1) - 2.0).abs() < 1e-9);
    assert!((r.clearing.dso_accepted(2) - 1.0).abs() < 1e-9);
}

#[test]
fn clear_hour_out_of_range() {
    let o = clear_hour(&data(), "24");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("24"));
}

#[test]
fn library_entry_point_matches_binary() {
    let mut args = vec!["balmarket".to_string(), "clear-hour".to_string()];
    args.extend(input_args(&data()));
    args.extend(["--hour".into(), "7".into()]);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = balmarket_cli::run(&args, &mut out, &mut err);
    assert_eq!(code, 0);
    assert_eq!(out, clear_hour(&data(), "7").stdout);
}
