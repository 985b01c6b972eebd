use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gatekeep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gatekeep"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.json");
    fs::write(
        &path,
        r#"{"n_worlds": 3, "n_online": 4, "n_steps": 6, "mc": {"n_mc": 4, "horizon": 3}}"#,
    )
    .unwrap();
    path.to_str().unwrap().to_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn help_exits_zero() {
    assert_eq!(gatekeep(&["--help"]).status.code(), Some(0));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(gatekeep(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn validate_config_prints_filled_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out = gatekeep(&["validate-config", &config]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let filled = String::from_utf8_lossy(&out.stdout);
    assert!(filled.trim_start().starts_with('{'));
    assert!(filled.contains("\"n_worlds\": 3"));
    assert!(filled.contains("\"rho_star\""));
    assert!(filled.contains("\"presets\""));
}

#[test]
fn bad_configs_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("unknown.json", r#"{"n_wrolds": 3}"#),
        ("malformed.json", "{"),
        ("invalid.json", r#"{"n_online": 20}"#),
        ("negative.json", r#"{"rho_star": -1.0}"#),
    ];
    for (name, body) in cases {
        let path = dir.path().join(name);
        fs::write(&path, body).unwrap();
        let out = gatekeep(&["validate-config", path.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(1), "{name}: {}", stderr(&out));
        let run = gatekeep(&["run", "--config", path.to_str().unwrap()]);
        assert_eq!(run.status.code(), Some(1), "{name}: {}", stderr(&run));
    }
    let missing = gatekeep(&["run", "--config", dir.path().join("absent.json").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn run_writes_outputs_and_aggregate_reproduces_them() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out_dir = dir.path().join("run");
    let out = gatekeep(&[
        "run",
        "--config",
        &config,
        "--out",
        out_dir.to_str().unwrap(),
        "--workers",
        "1",
        "--dump-risk",
        "--dump-trajectories",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    for file in ["summary.json", "timeseries.csv", "runs.jsonl", "risk.jsonl", "trajectories.jsonl"] {
        assert!(out_dir.join(file).is_file(), "missing {file}");
    }
    assert_eq!(fs::read_to_string(out_dir.join("runs.jsonl")).unwrap().lines().count(), 3);

    let again = dir.path().join("again");
    let out = gatekeep(&["aggregate", "--in", out_dir.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    for file in ["summary.json", "timeseries.csv", "runs.jsonl"] {
        assert_eq!(
            fs::read(out_dir.join(file)).unwrap(),
            fs::read(again.join(file)).unwrap(),
            "{file} differs after re-aggregation"
        );
    }
}

#[test]
fn baseline_overrides_online_count() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out_dir = dir.path().join("base");
    let out = gatekeep(&["baseline", "--policy", "defensive", "--config", &config, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let summary = fs::read_to_string(out_dir.join("summary.json")).unwrap();
    assert!(summary.contains("\"baseline_policy\": \"defensive\""));
    assert!(summary.contains("\"n_online\": 0"));
    assert!(summary.contains("\"gatekeeper_evaluations\": 0"));
}

#[test]
fn aggregate_of_missing_run_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = gatekeep(&[
        "aggregate",
        "--in",
        dir.path().join("nothing").to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn unwritable_output_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let blocker = dir.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let out = gatekeep(&["run", "--config", &config, "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}
