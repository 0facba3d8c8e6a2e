use std::process::Command;

fn roughlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_roughlab"))
}

#[test]
fn help_lists_every_subcommand() {
    let out = roughlab().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["group-check", "sphere", "decay", "hormander", "unweighted", "weighted", "sparse", "all"] {
        assert!(text.contains(sub), "missing {sub}");
    }
    for flag in ["--config", "--out", "--seed", "--threads"] {
        assert!(text.contains(flag), "missing {flag}");
    }
}

#[test]
fn group_check_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = roughlab()
        .args(["group-check", "--threads", "1", "--seed", "3", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 4);
    let csv = std::fs::read_to_string(dir.path().join("group-check.csv")).unwrap();
    assert!(csv.starts_with("experiment,group,resolution,params,quantity,value"));
    let summary = std::fs::read_to_string(dir.path().join("group-check_summary.json")).unwrap();
    assert!(summary.contains("\"seed\": 3"));
}

#[test]
fn config_sections_apply_per_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[group-check]\ngroups = [\"heisenberg\"]\nsamples = 100\n").unwrap();
    let out = roughlab()
        .arg("group-check")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 1);
    assert!(stdout.contains("heisenberg") && stdout.contains("100 samples"));
}

#[test]
fn bad_config_exits_with_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "experiment = \"group-check\"\nsamples = 0\n").unwrap();
    let out = roughlab().arg("group-check").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let missing = roughlab().args(["sparse", "--config", "/nonexistent/x.toml"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
}
