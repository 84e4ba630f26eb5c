//! End-to-end checks of the `quadmani` binary: artifact layout, exit
//! codes, and run-to-run determinism.

use std::path::Path;
use std::process::{Command, Output};

use nalgebra::DMatrix;
use quadmani_core::matrixio::{write_matrix, DataMatrix};

fn quadmani(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quadmani"))
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn run_ok(args: &[&str]) -> Output {
    let out = quadmani(args);
    assert!(
        out.status.success(),
        "expected success for {:?}, got {:?}\nstderr: {}",
        args,
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(args: &[&str]) -> i32 {
    quadmani(args).status.code().expect("no signal expected")
}

fn read_csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).expect("csv file should exist");
    text.lines()
        .skip(1)
        .map(|line| line.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn parabola_pipeline_reaches_machine_precision() {
    let dir = tempfile::tempdir().expect("tempdir");
    let gen = dir.path().join("gen");
    let fit = dir.path().join("fit");
    let ev = dir.path().join("eval");

    run_ok(&["generate", "--dataset", "parabola", "--out", gen.to_str().unwrap()]);
    for name in ["train.qmx", "val.qmx", "test.qmx", "manifest.json"] {
        assert!(gen.join(name).exists(), "generate should write {name}");
    }

    run_ok(&[
        "fit", "--dataset", "parabola", "--method", "greedy", "--r", "1", "--m", "2",
        "--gamma", "1e-12", "--out", fit.to_str().unwrap(),
    ]);
    let trace = read_csv_rows(&fit.join("trace.csv"));
    assert_eq!(trace.len(), 1, "one greedy iteration leaves one trace row");
    assert_eq!(trace[0][1], "2", "the parabola fit should select index 2");

    run_ok(&[
        "eval", "--manifold", fit.join("manifold.qmn").to_str().unwrap(),
        "--data", gen.join("test.qmx").to_str().unwrap(),
        "--out", ev.to_str().unwrap(),
    ]);
    let rows = read_csv_rows(&ev.join("eval.csv"));
    assert_eq!(rows.len(), 1, "eval writes a single row");
    let e_rel: f64 = rows[0][4].parse().expect("relative_error column parses");
    assert!(
        e_rel <= 1e-9,
        "parabola data is exactly representable at r = 1, got E_rel = {e_rel:e}"
    );
}

#[test]
fn refitting_is_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().expect("tempdir");
    let args = |out: &Path, threads: &str| {
        [
            "fit", "--dataset", "advect-desk", "--method", "greedy", "--r", "4", "--m", "20",
            "--gamma", "1e-6", "--threads", threads, "--out",
        ]
        .iter()
        .map(|s| s.to_string())
        .chain([out.to_str().unwrap().to_string()])
        .collect::<Vec<_>>()
    };
    let one = dir.path().join("one");
    let eight = dir.path().join("eight");
    let again = dir.path().join("again");
    for (out, threads) in [(&one, "1"), (&eight, "8"), (&again, "1")] {
        let a = args(out, threads);
        let a: Vec<&str> = a.iter().map(String::as_str).collect();
        run_ok(&a);
    }
    let bytes = |p: &Path| std::fs::read(p.join("manifold.qmn")).expect("manifold written");
    assert_eq!(
        bytes(&one),
        bytes(&eight),
        "manifold bytes must not depend on the thread count"
    );
    assert_eq!(bytes(&one), bytes(&again), "reruns must reproduce the same bytes");
}

#[test]
fn missing_input_exits_with_the_io_code() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = dir.path().join("out");
    assert_eq!(
        exit_code(&[
            "eval", "--manifold", "/definitely/not/here.qmn",
            "--dataset", "parabola", "--out", out.to_str().unwrap(),
        ]),
        3,
        "unreadable inputs are i/o failures"
    );
}

#[test]
fn invalid_requests_exit_with_the_config_code() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    assert_eq!(
        exit_code(&["fit", "--dataset", "parabola", "--method", "greedy", "--r", "0", "--out", out]),
        2,
        "r = 0 is a configuration error"
    );
    assert_eq!(
        exit_code(&["fit", "--dataset", "parabola", "--method", "cubic", "--r", "1", "--out", out]),
        2,
        "unknown methods are configuration errors"
    );
    assert_eq!(
        exit_code(&["fit", "--dataset", "parabola", "--method", "leading", "--r", "1", "--m", "5", "--out", out]),
        2,
        "--m belongs to greedy alone"
    );
}

#[test]
fn numerical_breakdown_exits_with_the_numeric_code() {
    let dir = tempfile::tempdir().expect("tempdir");
    let zero_path = dir.path().join("zero.qmx");
    let zeros = DataMatrix::new(DMatrix::zeros(6, 8)).expect("zeros are a valid matrix");
    write_matrix(&zeros, &zero_path).expect("write zeros");
    let out = dir.path().join("out");
    assert_eq!(
        exit_code(&[
            "fit", "--train", zero_path.to_str().unwrap(), "--method", "leading",
            "--r", "2", "--gamma", "0", "--out", out.to_str().unwrap(),
        ]),
        4,
        "an unregularized singular gram matrix is a numerical failure"
    );
}

#[test]
fn sweep_writes_one_row_per_method_and_r() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = dir.path().join("out");
    run_ok(&[
        "sweep", "--dataset", "parabola", "--method", "pca,greedy", "--r", "1",
        "--gamma", "1e-12", "--out", out.to_str().unwrap(),
    ]);
    let rows = read_csv_rows(&out.join("sweep.csv"));
    assert_eq!(rows.len(), 2, "two methods at one r give two rows");
    assert_eq!(rows[0][0], "pca");
    assert_eq!(rows[1][0], "greedy");
    let pca: f64 = rows[0][3].parse().expect("E_rel parses");
    let greedy: f64 = rows[1][3].parse().expect("E_rel parses");
    assert!(
        greedy < pca,
        "the quadratic fit must beat plain projection on the parabola: {greedy:e} vs {pca:e}"
    );
}

#[test]
fn diagnose_emits_correlation_and_spectrum_files() {
    let dir = tempfile::tempdir().expect("tempdir");
    let fit = dir.path().join("fit");
    let diag = dir.path().join("diag");
    run_ok(&[
        "fit", "--dataset", "parabola", "--method", "greedy", "--r", "1", "--m", "2",
        "--gamma", "1e-12", "--out", fit.to_str().unwrap(),
    ]);
    run_ok(&[
        "diagnose", "--manifold", fit.join("manifold.qmn").to_str().unwrap(),
        "--dataset", "parabola", "--out", diag.to_str().unwrap(),
    ]);
    let ctilde = read_csv_rows(&diag.join("correlation_ctilde.csv"));
    assert_eq!(ctilde.len(), 1, "one discarded direction leaves one row");
    let value: f64 = ctilde[0][1].parse().expect("correlation entry parses");
    assert!(
        value.abs() <= 1.0 + 1e-12,
        "normalized correlations stay within [-1, 1], got {value}"
    );
    let spectrum = read_csv_rows(&diag.join("singular_values.csv"));
    assert_eq!(spectrum.len(), 2, "a 2 x 20 matrix has two singular values");
    assert!(diag.join("correlation_pearson.csv").exists());
}
