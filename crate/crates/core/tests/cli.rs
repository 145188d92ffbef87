//! End-to-end runs of the command-line binary.

use std::path::Path;
use std::process::{Command, Output};

use flarereg::cli::{ClassifyReport, CompareReport, FitReport};
use flarereg::flare::{classify, default_flare_init, fit_flare};
use flarereg::simulation::{gen_flare_data, SimSetting};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flarereg")).args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> Vec<u8> {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn classify_from_report_reproduces_library_labels() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("fit.json");
    run_ok(&["fit", "--setting", "table1", "--n", "200", "--seed", "3", "--output", path_str(&report)]);
    let fit_report: FitReport = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(fit_report.users.len(), 1);

    let table = dir.path().join("labels.csv");
    let out = run_ok(&[
        "classify",
        "--setting",
        "table1",
        "--n",
        "200",
        "--seed",
        "3",
        "--cutoff",
        "0.8",
        "--from-report",
        path_str(&report),
        "--table",
        path_str(&table),
    ]);
    let classified: ClassifyReport = serde_json::from_slice(&out).unwrap();

    let (data, truth) = gen_flare_data(&SimSetting::table1(), 200, 3).unwrap();
    let fit = fit_flare(&data, &default_flare_init(&data).unwrap(), 1e-8, 1000).unwrap();
    let expected = classify(&fit, 0.8).unwrap();
    let user = &classified.users[0];
    assert_eq!(user.labels.labels, expected.labels);
    assert_eq!(
        user.confusion.as_ref().unwrap().true_exponential + user.confusion.as_ref().unwrap().false_gaussian,
        truth.iter().filter(|c| **c == flarereg::flare::Component::Exponential).count()
    );
    let rows = std::fs::read_to_string(&table).unwrap();
    assert_eq!(rows.lines().count(), 201);
    assert!(rows.starts_with("user_id,y,x,fitted,residual,z,label"));
}

#[test]
fn invalid_arguments_produce_error_record() {
    let out = run(&["fit", "--setting", "table1", "--cutoff", "1.5"]);
    assert_eq!(out.status.code(), Some(1));
    let record: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(record["error"]["kind"], "domain");
    assert!(record["error"]["message"].as_str().unwrap().contains("cutoff"));

    let out = run(&["fit", "--input", "/nonexistent/input.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let record: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(record["error"]["kind"], "ingest");
}

#[test]
fn transform_converts_and_truncates_aiming_records() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("aim.csv");
    std::fs::write(
        &input,
        "movement_time_ms,distance,target_width,target_height,user_id\n\
         1500,7,2,3,a\n\
         25000,7,2,3,a\n\
         800,0,4,9,b\n\
         bad,1,1,1,b\n",
    )
    .unwrap();
    let out =
        String::from_utf8(run_ok(&["transform", "--input", path_str(&input), "--truncate-seconds", "20"])).unwrap();
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "user_id,y,x1");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("a,1.5,2.1699250014423"));
    assert_eq!(lines[2], "b,0.8,0");
}

#[test]
fn compare_on_wild_records_covers_threshold_grid() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("wild.csv");
    let csv = run_ok(&["simulate", "--setting", "wild", "--users", "2", "--n", "150", "--seed", "4"]);
    std::fs::write(&input, csv).unwrap();
    let report: CompareReport = serde_json::from_slice(&run_ok(&["compare", "--input", path_str(&input)])).unwrap();
    assert_eq!(report.cells.len(), 8);
    let thresholds: Vec<f64> = report.cells[..4].iter().map(|c| c.threshold.unwrap()).collect();
    assert_eq!(thresholds, [10.0, 20.0, 30.0, 40.0]);
    for cell in &report.cells {
        if cell.error.is_none() {
            assert_eq!(cell.entries.len(), 4);
            assert!(cell.winner.is_some());
        }
    }
}

#[test]
fn simulate_emits_data_and_tables() {
    let data =
        String::from_utf8(run_ok(&["simulate", "--setting", "M1", "--n", "50", "--seed", "2", "--emit-data"])).unwrap();
    assert_eq!(data.lines().next().unwrap(), "user_id,y,x1,label");
    assert_eq!(data.lines().count(), 51);
    assert_eq!(
        data,
        String::from_utf8(run_ok(&["simulate", "--setting", "M1", "--n", "50", "--seed", "2", "--emit-data"])).unwrap()
    );

    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("mc.txt");
    let json = run_ok(&["simulate", "--setting", "m4", "--n", "60,120", "--reps", "5", "--table", path_str(&table)]);
    let value: serde_json::Value = serde_json::from_slice(&json).unwrap();
    assert_eq!(value["report"]["blocks"].as_array().unwrap().len(), 2);
    assert!(!std::fs::read_to_string(&table).unwrap().is_empty());
}
