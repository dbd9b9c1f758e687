use serde_json::Value;
use torlink::run::{strip_timing, Status};
use torlink::{run, scenarios, RunOptions, RunReport, ScenarioConfig};

fn run_builtin(name: &str) -> RunReport {
    let c = scenarios::load(name).unwrap().unwrap();
    run(&c, &RunOptions::default()).unwrap()
}

fn checks(r: &RunReport) -> impl Iterator<Item = (&str, &torlink::experiments::Check)> {
    r.experiments
        .iter()
        .flat_map(|e| e.checks.iter().map(move |c| (e.label.as_str(), c)))
}

#[test]
fn trivial_suspension_residuals_vanish() {
    let r = run_builtin("trivial-suspension");
    assert!(r.passed, "{}", r.summary());
    for (label, c) in checks(&r) {
        if c.name.contains("residual") || c.name.contains("defect") || c.name.contains("displacement") {
            assert!(c.residual < 1e-10, "{label}: {} = {}", c.name, c.residual);
        }
    }
}

#[test]
fn model_map_suite_table_matches_closed_form() {
    let r = run_builtin("model-map-suite");
    assert!(r.passed, "{}", r.summary());
    let suite = r.experiments.iter().find(|e| e.kind == "model_map_suite").unwrap();
    let table = suite.data["table"].as_array().unwrap();
    assert_eq!(table.len(), 25);
    for row in table {
        let (dp, dm) = (row["d_plus"].as_i64().unwrap(), row["d_minus"].as_i64().unwrap());
        assert_eq!(row["degree"].as_i64().unwrap().abs(), (dp - dm).abs());
        assert_eq!(row["winding_plus"].as_i64().unwrap(), dp);
        assert_eq!(row["winding_minus"].as_i64().unwrap(), dm);
    }
    assert_eq!(suite.files, vec!["model_map_suite.csv"]);
}

#[test]
fn split_winding_identity_holds() {
    let r = run_builtin("split-winding");
    let e = r.experiments.iter().find(|e| e.kind == "verify_link_index").unwrap();
    assert_eq!(e.data["identity_holds"], Value::Bool(true));
    assert_eq!(e.data["ell_plus"], 1);
    assert_eq!(e.data["ell_minus"], 0);
    assert!(r.passed);
}

#[test]
fn every_check_carries_both_sides() {
    for name in scenarios::names() {
        let r = run_builtin(name);
        for e in &r.experiments {
            assert_eq!(e.status, Status::Ok, "{name}/{}: {:?}", e.label, e.error);
            assert!(!e.asserted || !e.checks.is_empty(), "{name}/{}", e.label);
        }
        let v = serde_json::to_value(&r).unwrap();
        for e in v["experiments"].as_array().unwrap() {
            for c in e["checks"].as_array().unwrap() {
                for key in ["lhs", "rhs", "residual", "tolerance", "passed"] {
                    assert!(c.get(key).is_some(), "{name}: {key} missing in {c}");
                }
            }
        }
    }
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let c = scenarios::load("tilted-rotation").unwrap().unwrap();
    let mut a = serde_json::to_value(run(&c, &RunOptions { jobs: Some(1), ..Default::default() }).unwrap()).unwrap();
    let mut b = serde_json::to_value(run(&c, &RunOptions { jobs: Some(4), ..Default::default() }).unwrap()).unwrap();
    strip_timing(&mut a);
    strip_timing(&mut b);
    assert_eq!(a, b);
}

#[test]
fn seed_override_is_recorded() {
    let c = scenarios::load("tilted-rotation").unwrap().unwrap();
    let r = run(&c, &RunOptions { seed: Some(77), ..Default::default() }).unwrap();
    assert_eq!((r.seed, r.seed_source), (77, "override"));
    assert_eq!(r.experiments[3].seed, 80);
    let base = run(&c, &RunOptions::default()).unwrap();
    assert_eq!(base.seed_source, "config");
    assert_ne!(
        serde_json::to_value(&r.experiments[3].checks).unwrap(),
        serde_json::to_value(&base.experiments[3].checks).unwrap()
    );
}

#[test]
fn failures_are_captured_and_the_run_continues() {
    let src = r#"
name = "partial"
[domain]
declared_col = "y=0"
[fields]
X = ["0", "-(x + 1)*0.5*y/(1 + y^2)", "x"]
Y = ["0", "-0.5*y/(1 + y^2)", "1"]
[[experiment]]
label = "off-col"
kind = "spectrum"
params = { point = [0.3, 0.3] }
[[experiment]]
label = "wrong"
kind = "linking"
params = { expected = [1, 0] }
[[experiment]]
label = "measured"
kind = "cone_ratio"
assert = false
params = { points = [[0.2, 0.1]], expected = 5.0 }
[[experiment]]
kind = "commutator"
params = { grid = 6 }
"#;
    let c = ScenarioConfig::parse(src).unwrap();
    let r = run(&c, &RunOptions::default()).unwrap();
    let by = |l: &str| r.experiments.iter().find(|e| e.label == l).unwrap();
    assert_eq!(by("off-col").status, Status::Error);
    assert!(by("off-col").error.as_ref().unwrap().contains("not fixed"), "{:?}", by("off-col").error);
    assert_eq!(by("wrong").status, Status::Ok);
    assert!(!by("wrong").passed);
    assert!(!by("measured").passed);
    assert!(by("commutator").passed);
    assert!(!r.passed);
    let order: Vec<&str> = r.experiments.iter().map(|e| e.label.as_str()).collect();
    assert_eq!(order, ["off-col", "wrong", "measured", "commutator"]);
}

#[test]
fn unasserted_failures_do_not_fail_the_run() {
    let r = run_builtin("noncommuting-control");
    assert!(r.passed);
    let comm = r.experiments.iter().find(|e| e.kind == "commutator").unwrap();
    assert!(!comm.asserted && !comm.passed);
}

#[test]
fn written_reports_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_builtin("normally-contracting");
    let files = r.write(dir.path()).unwrap();
    assert!(files.iter().any(|f| f.ends_with("report.json")));
    assert!(files.iter().any(|f| f.ends_with("orbits.csv")));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(v["scenario"], "normally-contracting");
    assert_eq!(v["config"]["params"]["lambda"], 0.5);
    let csv = std::fs::read_to_string(dir.path().join("orbits.csv")).unwrap();
    assert!(csv.lines().next().unwrap().contains("mu"));
}

#[test]
fn annulus_return_time_derivative_on_col_matches_closed_form() {
    let r = run_builtin("annulus-col");
    let e = r.experiments.iter().find(|e| e.kind == "fixed_points_on_col").unwrap();
    let xs = e.data["xs"].as_array().unwrap();
    let dtau = e.data["dtau_along_col"].as_array().unwrap();
    for (x, d) in xs.iter().zip(dtau) {
        let h = 0.8 + 0.5 * x.as_f64().unwrap();
        assert!((d.as_f64().unwrap() + 0.5 / (h * h)).abs() < 1e-8, "{x}: {d}");
    }
    assert_eq!(e.data["dtau_nonzero_on_col"], true);
}
