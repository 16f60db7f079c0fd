//! Black-box tests of the `cmgn` binary: exit codes per error category,
//! output files, and a committed golden trace that pins the exact arithmetic
//! of a tiny run. Set `UPDATE_GOLDEN=1` to regenerate the golden file after
//! an intentional change.

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cmgn"))
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn cmgn")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// gen-data + train happy path used by several tests.
fn train_tiny(dir: &std::path::Path) -> (PathBuf, PathBuf) {
    let data = dir.join("tiny.csv");
    let out = run(&[
        "gen-data",
        "--spec",
        fixture("tiny_spec.json").to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "gen-data failed: {}", stderr(&out));
    let run_dir = dir.join("run");
    let out = run(&[
        "train",
        "--config",
        fixture("tiny_train.json").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out-dir",
        run_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "train failed: {}", stderr(&out));
    (data, run_dir)
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["train", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["no-such-command"])), 1);
    let out = run(&["grad-check", "--variant", "bogus-face", "--trials", "1"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn validation_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out_csv = tmp.path().join("curves.csv");
    let out = run(&[
        "trace",
        "--variant",
        "arc-face",
        "--t-values",
        "0.5",
        "--grid-points",
        "1",
        "--out",
        out_csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));

    // a config that parses but fails validation
    let bad = tmp.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{"train":{"learning_rate":-1.0,"epochs":1,"batch_size":4,"seed":0,
            "variant":{"kind":"arc_face","margin_m":0.5,"scale_s":64.0}},
          "evaluation":{}}"#,
    )
    .unwrap();
    let data = tmp.path().join("missing.csv");
    std::fs::write(&data, "x0,label,split\n").unwrap();
    let out = run(&[
        "train",
        "--config",
        bad.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out-dir",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn io_errors_exit_three() {
    let out = run(&["gen-data", "--spec", "/nonexistent/spec.json", "--out", "/tmp/x.csv"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    let out = run(&[
        "train",
        "--config",
        "/nonexistent/config.json",
        "--data",
        "/tmp/x.csv",
        "--out-dir",
        "/tmp/xx",
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn corrupt_data_csv_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("broken.csv");
    std::fs::write(&data, "x0,x1,label,split\n0.5,oops,0,train\n").unwrap();
    let out = run(&[
        "train",
        "--config",
        fixture("tiny_train.json").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out-dir",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("line"), "error should cite the line: {}", stderr(&out));
}

#[test]
fn wired_gradient_fault_exits_two() {
    let out = run(&[
        "grad-check",
        "--variant",
        "curricular-face",
        "--trials",
        "3",
        "--seed",
        "5",
        "--inject-t-error",
        "0.05",
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("gradient mismatch"), "{}", stderr(&out));
}

#[test]
fn grad_check_passes_and_zero_trials_warns() {
    let out = run(&["grad-check", "--variant", "mv-arc-softmax", "--trials", "2", "--seed", "9"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("max relative error"));

    let out = run(&["grad-check", "--variant", "arc-face", "--trials", "0"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("vacuous"), "{}", stdout(&out));
}

#[test]
fn train_writes_all_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, run_dir) = train_tiny(tmp.path());
    let trace = std::fs::read_to_string(run_dir.join("trace.csv")).unwrap();
    assert!(trace.starts_with("k,loss,t,r,hard_fraction,M_min,M_max,lr\n"));
    assert_eq!(trace.lines().count(), 16, "header plus 15 iterations");
    assert!(run_dir.join("checkpoint.bin").exists());

    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["label"], "tiny");
    assert_eq!(metrics["iterations"], 15);
    assert!(metrics["final_loss"].is_f64());
    assert!(metrics["verification"]["best_accuracy"].is_f64());
    assert!(metrics["verification"]["tar_at_far"].is_array());
}

#[test]
fn golden_trace_is_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, run_dir) = train_tiny(tmp.path());
    let produced = std::fs::read_to_string(run_dir.join("trace.csv")).unwrap();
    let golden_path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/tiny_trace.csv");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&golden_path, &produced).unwrap();
        return;
    }
    let golden = std::fs::read_to_string(&golden_path).unwrap();
    assert_eq!(
        produced, golden,
        "trace drifted from the committed golden run; if the change is intentional, rerun with UPDATE_GOLDEN=1"
    );
}

#[test]
fn trace_curves_cover_the_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let out_csv = tmp.path().join("curves.csv");
    let out = run(&[
        "trace",
        "--variant",
        "curricular-face",
        "--t-values",
        "0,0.3,0.7",
        "--grid-points",
        "11",
        "--out",
        out_csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(&out_csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,cos_j,I,N"));
    assert_eq!(lines.count(), 33, "3 t values x 11 grid points");
}

#[test]
fn compare_is_invariant_to_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("tiny.csv");
    let out = run(&[
        "gen-data",
        "--spec",
        fixture("tiny_spec.json").to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let mut tables = Vec::new();
    for (threads, name) in [("1", "a.csv"), ("4", "b.csv")] {
        let table = tmp.path().join(name);
        let out = bin()
            .args([
                "compare",
                "--configs",
                fixture("tiny_train.json").to_str().unwrap(),
                fixture("tiny_train.json").to_str().unwrap(),
                "--data",
                data.to_str().unwrap(),
                "--out",
                table.to_str().unwrap(),
            ])
            .env("CMGN_THREADS", threads)
            .output()
            .expect("spawn cmgn");
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        tables.push(std::fs::read(&table).unwrap());
    }
    assert_eq!(tables[0], tables[1], "table bytes depend on worker count");

    let out = bin()
        .args([
            "compare",
            "--configs",
            fixture("tiny_train.json").to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            tmp.path().join("c.csv").to_str().unwrap(),
        ])
        .env("CMGN_THREADS", "not-a-number")
        .output()
        .expect("spawn cmgn");
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert!(stderr(&out).contains("CMGN_THREADS"), "{}", stderr(&out));
}

#[test]
fn compare_attributes_failed_runs_and_withholds_the_table() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("tiny.csv");
    let out = run(&[
        "gen-data",
        "--spec",
        fixture("tiny_spec.json").to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    // An absurd learning rate overflows the weights, so the run dies with a
    // degenerate embedding a couple of iterations in.
    let mut cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("tiny_train.json")).unwrap())
            .unwrap();
    cfg["label"] = "hot".into();
    cfg["train"]["learning_rate"] = 1e300.into();
    let hot = tmp.path().join("hot.json");
    std::fs::write(&hot, serde_json::to_string(&cfg).unwrap()).unwrap();

    let table = tmp.path().join("table.csv");
    let out = run(&[
        "compare",
        "--configs",
        fixture("tiny_train.json").to_str().unwrap(),
        hot.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        table.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert!(stderr(&out).contains("run hot failed"), "{}", stderr(&out));
    assert!(!table.exists(), "partial table must not be written");
}
