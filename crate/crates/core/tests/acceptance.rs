//! Acceptance suite: one test per headline criterion, each printing a single
//! PASS/FAIL line to stderr (bypassing the test harness capture).
//!
//! Tests hold a global lock so that their runtimes are measured one at a time.

use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use roughlab_core::experiments::{
    cz_batch, run, Check, Experiment, ExperimentConfig, ExperimentOutput, Status, CZ_GRIDS,
};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Output of a default-configured experiment and its wall time in seconds.
struct Timed {
    out: ExperimentOutput,
    secs: f64,
}

fn timed(cfg: &ExperimentConfig) -> Timed {
    let start = Instant::now();
    let out = run(cfg).expect("experiment runs");
    Timed { out, secs: start.elapsed().as_secs_f64() }
}

fn defaults(e: Experiment) -> Timed {
    timed(&ExperimentConfig::defaults(e))
}

fn sphere() -> &'static Timed {
    static CELL: OnceLock<Timed> = OnceLock::new();
    CELL.get_or_init(|| defaults(Experiment::Sphere))
}

fn unweighted() -> &'static Timed {
    static CELL: OnceLock<Timed> = OnceLock::new();
    CELL.get_or_init(|| defaults(Experiment::Unweighted))
}

fn weighted() -> &'static Timed {
    static CELL: OnceLock<Timed> = OnceLock::new();
    CELL.get_or_init(|| defaults(Experiment::Weighted))
}

/// Print the verdict line and the failing sub-checks, then assert.
fn verdict(name: &str, checks: &[&Check], extra_ok: bool, extra: &str) {
    let ok = !checks.is_empty() && checks.iter().all(|c| c.status != Status::Fail) && extra_ok;
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{} {name}: {} checks; {extra}", if ok { "PASS" } else { "FAIL" }, checks.len());
    for c in checks {
        let _ = writeln!(err, "    {} {}: {}", c.status, c.criterion, c.detail);
    }
    drop(err);
    assert!(ok, "{name} failed");
}

#[test]
fn group_axioms() {
    let _g = serial();
    let t = defaults(Experiment::GroupCheck);
    let checks = t.out.check("group axioms");
    verdict("group axioms", &checks, checks.len() == 4, &format!("{:.2} s", t.secs));
}

#[test]
fn polar_measure() {
    let _g = serial();
    let t = sphere();
    verdict("polar measure", &t.out.check("polar measure"), true, "volumes timed inside the check");
}

#[test]
fn truncation_norms() {
    let _g = serial();
    let t = sphere();
    let checks = t.out.check("truncation norms");
    verdict("truncation norms", &checks, checks.len() == 2, "alpha in {0.3, 0.5, 1.2}, j in [-3, 3]");
}

#[test]
fn riesz_subordination() {
    let _g = serial();
    let t = sphere();
    verdict("riesz subordination", &t.out.check("riesz subordination"), true, "R^3 at 64^3, alpha in {0.5, 1}");
}

#[test]
fn l2_decay() {
    let _g = serial();
    let cfg = ExperimentConfig::defaults(Experiment::Decay);
    let t = timed(&cfg);
    let mut checks = t.out.check("decay kinds");
    // a group whose window cannot be resolved reports a failed `decay <group> <m>` check
    checks.extend(t.out.checks.iter().filter(|c| c.criterion.starts_with("decay ") && c.status == Status::Fail && !c.criterion.starts_with("decay kinds")));
    let per_group = cfg.groups.iter().all(|id| t.out.check(&format!("decay kinds {id}")).len() == 2);
    let mut err = std::io::stderr().lock();
    for c in t.out.checks.iter().filter(|c| c.criterion.starts_with("decay ") && !c.criterion.starts_with("decay kinds")) {
        let _ = writeln!(err, "    ({}) {}: {}", c.status, c.criterion, c.detail);
    }
    drop(err);
    verdict("L2 decay", &checks, per_group && t.secs < 900.0, &format!("{:.0} s (budget 900 s)", t.secs));
}

#[test]
fn hormander_growth() {
    let _g = serial();
    let t = defaults(Experiment::Hormander);
    let mut checks = t.out.check("hormander growth");
    checks.extend(t.out.check("hormander uniform"));
    verdict("hormander growth", &checks, t.secs < 600.0, &format!("{:.0} s (budget 600 s)", t.secs));
}

#[test]
fn maximal_control() {
    let _g = serial();
    let mut checks = unweighted().out.check("maximal control");
    checks.extend(weighted().out.check("maximal control"));
    verdict("maximal control", &checks, true, "slack >= -1e-10 on every T^# batch");
}

#[test]
fn cz_decomposition() {
    let _g = serial();
    let start = Instant::now();
    let out = cz_batch(&CZ_GRIDS, 100, 7).expect("batch runs");
    let secs = start.elapsed().as_secs_f64();
    verdict("cz decomposition", &out.check("cz decomposition"), secs < 120.0, &format!("100 fields x 3 heights, {secs:.1} s"));
}

#[test]
fn sparse_domination() {
    let _g = serial();
    let mut cfg = ExperimentConfig::defaults(Experiment::Sparse);
    cfg.cz_fields = 0;
    let t = timed(&cfg);
    verdict("sparse domination", &t.out.check("sparse domination"), t.secs < 600.0, &format!("{:.0} s (budget 600 s)", t.secs));
}

#[test]
fn unweighted_shape() {
    let _g = serial();
    let t = unweighted();
    let checks = t.out.check("unweighted stability");
    verdict("unweighted shape", &checks, checks.len() == 3 && t.secs < 1200.0, &format!("{:.0} s (budget 1200 s)", t.secs));
}

#[test]
fn weighted_shape() {
    let _g = serial();
    let t = weighted();
    let checks = t.out.check("weighted shape");
    verdict("weighted shape", &checks, checks.len() == 2 && t.secs < 1200.0, &format!("{:.0} s (budget 1200 s)", t.secs));
}
