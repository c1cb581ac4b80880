use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn equicomp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_equicomp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write_spectrum(dir: &Path) -> String {
    let path = dir.join("levels.csv");
    std::fs::write(&path, "value,multiplicity\n1/2,1\n1,2\n3/2,1\n").unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn fit_reads_csv_spectrum_with_quantum() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spectrum(dir.path());
    let v = json(&equicomp(&[
        "fit",
        "--spectrum",
        &spec,
        "--quantum",
        "1/2",
        "--n",
        "20",
        "--mean",
        "0.9",
    ]));
    for key in ["beta", "nu", "phi", "residual_N", "residual_E"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    let phi: f64 = v["phi"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .sum();
    assert!((phi - 20.0).abs() < 1e-8);
}

#[test]
fn json_spectrum_file_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    std::fs::write(
        &path,
        r#"{"quantum":"1","values":["1","2","3"],"multiplicities":[1,1,1]}"#,
    )
    .unwrap();
    let v = json(&equicomp(&[
        "count",
        "--spectrum",
        path.to_str().unwrap(),
        "--n",
        "2",
        "--mean",
        "2",
    ]));
    // {2,0,0} {1,1,0} {1,0,1} {0,2,0} fit under E = 4
    assert_eq!(v["count"], Value::String("4".into()));
}

#[test]
fn tail_report_fields() {
    let v = json(&equicomp(&[
        "tail", "--values", "1,2,3,4", "--n", "20", "--mean", "2", "--delta", "5",
    ]));
    assert_eq!(v["l"], 2);
    assert_eq!(v["tail_count"], Value::String("58".into()));
    assert_eq!(v["total_count"], Value::String("358".into()));
    assert!((v["fraction"].as_f64().unwrap() - 58.0 / 358.0).abs() < 1e-11);
}

#[test]
fn sample_csv_rows_are_occupancies() {
    let out = equicomp(&[
        "sample",
        "--values",
        "1:2,3:1",
        "--n",
        "6",
        "--mean",
        "3/2",
        "--samples",
        "20",
        "--seed",
        "3",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("N_1,N_2,energy"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 20);
    for r in rows {
        assert_eq!(r[0] + r[1], 6.0);
        assert!(r[2] <= 9.0);
    }
}

#[test]
fn partition_csv_columns() {
    let out = equicomp(&[
        "partition",
        "--values",
        "1,2,3",
        "--ladder",
        "10,20",
        "--format",
        "csv",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("N,lnZ_exact,lnZ_saddle,rel_err\n"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn bound_grid_has_25_cells() {
    let out = equicomp(&[
        "bound", "--values", "1:2,2:2", "--n", "30", "--mean", "4/3", "--format", "csv",
    ]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 26);
}

#[test]
fn experiments_write_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("conc.json");
    let out = equicomp(&[
        "concentration",
        "--values",
        "1,2,3,4",
        "--mean",
        "2",
        "--ladder",
        "10,20",
        "--mode",
        "both",
        "--samples",
        "200",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
    let out = equicomp(&[
        "lemma2", "--values", "1,2,3", "--mean", "9/5", "--ladder", "10,20",
    ]);
    assert_eq!(json(&out)["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn exit_codes() {
    let code = |args: &[&str]| equicomp(args).status.code().unwrap();
    assert_eq!(code(&["fit", "--values", "1,2", "--n", "4", "--mean", "3"]), 2);
    assert_eq!(code(&["fit", "--values", "1,2", "--mean", "1"]), 2);
    assert_eq!(code(&["fit", "--bogus"]), 2);
    assert_eq!(
        code(&[
            "count",
            "--values",
            "1,2",
            "--n",
            "100",
            "--mean",
            "1.5",
            "--max-entries",
            "10"
        ]),
        3
    );
    assert_eq!(
        code(&[
            "fit",
            "--spectrum",
            "/nonexistent/levels.csv",
            "--n",
            "4",
            "--mean",
            "1"
        ]),
        4
    );
    assert_eq!(code(&["fit", "--values", "1,2", "--n", "4", "--mean", "3/2"]), 0);
}

#[test]
fn thread_cap_does_not_change_output() {
    let args = [
        "concentration",
        "--values",
        "1,2,3",
        "--mean",
        "9/5",
        "--ladder",
        "10,20,30",
        "--mode",
        "mc",
        "--samples",
        "3000",
        "--seed",
        "9",
    ];
    let capped = Command::new(env!("CARGO_BIN_EXE_equicomp"))
        .args(args)
        .env("EQUICOMP_THREADS", "1")
        .output()
        .unwrap();
    let free = equicomp(&args);
    assert!(capped.status.success() && free.status.success());
    assert_eq!(capped.stdout, free.stdout);
}
