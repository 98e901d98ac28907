//! End-to-end tests of the command-line binary: artifact round trips,
//! exit codes and thread-count invariance.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cglasso"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("failed to spawn cglasso")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path_str(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

#[test]
fn simulate_fit_path_roc_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = path_str(dir.path());
    let out = run(&[
        "simulate", "--p", "8", "--n", "60", "--edge-prob", "0.2", "--H", "3",
        "--seed", "7", "--out", &d,
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(dir.path().join("dataset.csv").exists());
    assert!(dir.path().join("truth.json").exists());

    let data = path_str(&dir.path().join("dataset.csv"));
    let out = run(&["fit", "--input", &data, "--rho", "0.2", "--out", &d]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let fit: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("params.json")).unwrap())
            .unwrap();
    assert_eq!(fit["converged"], true);
    assert_eq!(fit["mu"].as_array().unwrap().len(), 8);

    let out = run(&[
        "path", "--input", &data, "--k", "6", "--rho-min", "0.05", "--out", &d,
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let path_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("path.json")).unwrap())
            .unwrap();
    assert_eq!(path_json["rhos"].as_array().unwrap().len(), 6);
    let selected = path_json["selected"].as_u64().unwrap();
    assert!(selected < 6);

    let truth = path_str(&dir.path().join("truth.json"));
    let pj = path_str(&dir.path().join("path.json"));
    let out = run(&["roc", "--truth", &truth, "--path", &pj, "--out", &d]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let roc = std::fs::read_to_string(dir.path().join("roc.csv")).unwrap();
    let mut rows = 0;
    for line in roc.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|t| t.parse().unwrap()).collect();
        assert!(f[1] >= 0.0 && f[1] <= 1.0, "tpr out of range: {line}");
        assert!(f[2] >= 0.0 && f[2] <= 1.0, "fpr out of range: {line}");
        rows += 1;
    }
    assert_eq!(rows, 6);
}

#[test]
fn usage_errors_exit_1() {
    let out = run(&["fit", "--rho", "0.1"]); // missing --input
    assert_eq!(code(&out), 1);
    let out = run(&["--no-such-flag"]);
    assert_eq!(code(&out), 1);
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["benchmark", "--out", &path_str(dir.path())]); // no study
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn all_na_column_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "a,b\n1.0,NA\n2.0,NA\n3.0,NA\n").unwrap();
    let out = run(&[
        "fit", "--input", &path_str(&csv), "--rho", "0.1", "--upper", "5",
        "--out", &path_str(dir.path()),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(
        stderr(&out).contains('b'),
        "diagnostic should name the offending column: {}",
        stderr(&out)
    );
}

#[test]
fn unparseable_cell_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "a,b\n1.0,2.0\nx,3.0\n").unwrap();
    let out = run(&[
        "fit", "--input", &path_str(&csv), "--rho", "0.1",
        "--out", &path_str(dir.path()),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn benchmark_smoke_thread_invariant_and_config_equivalent() {
    let base = tempfile::tempdir().unwrap();
    let d1 = base.path().join("t1");
    let d2 = base.path().join("t2");
    let d3 = base.path().join("cfg");
    for d in [&d1, &d2, &d3] {
        std::fs::create_dir_all(d).unwrap();
    }
    let flags = |threads: &str, out: &Path| {
        vec![
            "--threads".to_string(), threads.to_string(),
            "benchmark".to_string(),
            "--study".to_string(), "smoke".to_string(),
            "--replicates".to_string(), "2".to_string(),
            "--seed".to_string(), "5".to_string(),
            "--out".to_string(), path_str(out),
        ]
    };
    let out = bin().args(flags("1", &d1)).output().unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = bin().args(flags("2", &d2)).output().unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    // equivalent run driven by a TOML config file
    let toml = base.path().join("bench.toml");
    std::fs::write(&toml, "study = \"smoke\"\nreplicates = 2\nseed = 5\n").unwrap();
    let out = run(&[
        "benchmark", "--config", &path_str(&toml), "--out", &path_str(&d3),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let r1 = std::fs::read(d1.join("report.csv")).unwrap();
    let r2 = std::fs::read(d2.join("report.csv")).unwrap();
    let r3 = std::fs::read(d3.join("report.csv")).unwrap();
    assert!(!r1.is_empty());
    assert_eq!(r1, r2, "report.csv differs across --threads");
    assert_eq!(r1, r3, "report.csv differs between flags and config file");
    let a1 = std::fs::read_to_string(d1.join("aggregate.json")).unwrap();
    let a2 = std::fs::read_to_string(d2.join("aggregate.json")).unwrap();
    assert_eq!(a1, a2, "aggregate.json differs across --threads");
}

#[test]
fn unknown_study_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "benchmark", "--study", "nope", "--replicates", "1",
        "--out", &path_str(dir.path()),
    ]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}
