use roughlab_core::experiments::{run, Experiment, ExperimentConfig, Status, CSV_HEADER};

fn csv_bytes(cfg: &ExperimentConfig) -> Vec<u8> {
    let mut buf = Vec::new();
    run(cfg).unwrap().write_csv(&mut buf).unwrap();
    buf
}

fn small_sparse() -> ExperimentConfig {
    ExperimentConfig::from_toml_str(
        r#"
        experiment = "sparse"
        samples = 1
        cz_fields = 2
        [grids.euclidean2]
        m = [33]
        radius = 1.0
        "#,
    )
    .unwrap()
}

#[test]
fn reruns_are_bit_identical() {
    let cfg = ExperimentConfig::defaults(Experiment::GroupCheck);
    assert_eq!(csv_bytes(&cfg), csv_bytes(&cfg));
    let cfg = small_sparse();
    assert_eq!(csv_bytes(&cfg), csv_bytes(&cfg));
}

#[test]
fn seed_changes_random_rows() {
    let a = small_sparse();
    let mut b = a.clone();
    b.seed += 1;
    assert_ne!(csv_bytes(&a), csv_bytes(&b));
}

#[test]
fn written_outputs_follow_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_sparse();
    let out = run(&cfg).unwrap();
    out.write(dir.path(), Experiment::Sparse, &cfg).unwrap();
    let text = std::fs::read_to_string(dir.path().join("sparse.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER);
    let width = CSV_HEADER.split(',').count();
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    for rec in rdr.records() {
        assert_eq!(rec.unwrap().len(), width);
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sparse_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["experiment"], "sparse");
    assert_eq!(summary["rows"].as_u64().unwrap() as usize, out.rows.len());
    assert!(out.checks.iter().any(|c| c.criterion.starts_with("cz decomposition") && c.status == Status::Pass));
}

#[test]
fn unresolvable_decay_window_is_reported_not_hidden() {
    let cfg = ExperimentConfig::from_toml_str(
        r#"
        experiment = "decay"
        groups = ["heisenberg"]
        samples = 1
        [grids.heisenberg]
        m = [16]
        "#,
    )
    .unwrap();
    let out = run(&cfg).unwrap();
    assert!(out.rows.is_empty());
    assert_eq!(out.checks.len(), 1);
    assert_eq!(out.checks[0].status, Status::Fail);
    assert!(out.checks[0].detail.contains("resolution"));
}
