use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bandit-dopd"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env("BANDIT_DOPD_THREADS", "2").output().expect("spawn bandit-dopd")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.cfg");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn desk_preset_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("desk");
    let out = run(&[
        "run",
        "--preset",
        "desk",
        "--set",
        "T=50",
        "--static-comparator",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 51);
    let last: Vec<&str> = csv.lines().last().unwrap().split(',').collect();
    assert_eq!(last.len(), 8);
    assert!(!last[6].is_empty(), "static regret column filled");
    assert!(last[7].is_empty(), "dynamic regret column left empty");
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["horizon"], 50);
}

#[test]
fn config_file_and_flags_layer() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "# tiny run\nn = 4\np = 2\nq = 2\nm = 1\nT = 20\n",
    );
    let out_dir = tmp.path().join("o");
    let out = run(&["run", "--config", &cfg, "--seed", "7", "--mode", "full-info", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = std::fs::read_to_string(out_dir.join("summary.json")).unwrap();
    assert!(summary.contains("full-info") || summary.contains("full_info"), "{summary}");
}

#[test]
fn config_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing_t = write_config(tmp.path(), "n = 4\np = 2\nq = 2\nm = 1\n");
    let out = run(&["run", "--config", &missing_t]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains('T'), "{}", stderr(&out));

    let out = run(&["run", "--preset", "desk", "--set", "no_such_key=1"]);
    assert_eq!(code(&out), 2);

    let out = run(&["run", "--preset", "desk", "--set", "set.radius=-1"]);
    assert_eq!(code(&out), 2);

    let out = run(&["run", "--preset", "nope"]);
    assert_eq!(code(&out), 2);

    let out = run(&["run"]);
    assert_eq!(code(&out), 2);

    let out = run(&["run", "--config", tmp.path().join("absent.cfg").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn disconnected_graph_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "run",
        "--preset",
        "desk",
        "--set",
        "T=10",
        "--set",
        "graph.p_edge=0",
        "--set",
        "graph.b_window=2",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn sweep_writes_aggregate() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "sweep",
        "--preset",
        "desk",
        "--set",
        "T=30",
        "--param",
        "tau0",
        "--values",
        "0,4",
        "--seeds",
        "1,2",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let agg = std::fs::read_to_string(tmp.path().join("aggregate.csv")).unwrap();
    let lines: Vec<&str> = agg.lines().collect();
    assert_eq!(lines.len(), 3, "{agg}");
    assert!(lines[0].starts_with("tau0,runs,"));
    assert!(lines[1].contains(",2,"));
    assert!(tmp.path().join("tau0-4").join("seed-2").join("metrics.csv").exists());
}
