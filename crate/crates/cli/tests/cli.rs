use std::path::Path;
use std::process::{Command, Output};

use relalloc::harness::read_csv;
use relalloc::{AllocationPlan, Scenario};

fn relalloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relalloc"))
        .args(args)
        .env("RAYON_NUM_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = relalloc(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_solve_estimate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.json");
    let plan = dir.path().join("plan.json");
    ok(&["gen", "--ns", "15", "--mem", "4", "--seed", "9", "-o", path(&scenario)]);
    let s = Scenario::load(&scenario).unwrap();
    assert_eq!(s.services.len(), 15);
    assert_eq!(s.platform.mem_capacity, 4);

    // Generation is reproducible, also through stdout.
    let again = ok(&["gen", "--ns", "15", "--mem", "4", "--seed", "9"]);
    assert_eq!(Scenario::from_json(&again).unwrap(), s);

    ok(&["solve", path(&scenario), "--heuristic", "colgen_pd", "--q", "500", "-o", path(&plan)]);
    let p = AllocationPlan::load(&plan).unwrap();
    p.validate(&s.platform).unwrap();
    assert!(p.is_integral());

    let report = ok(&["estimate", path(&scenario), path(&plan), "--n-sample", "200", "--json"]);
    let report: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(report["services"].as_array().unwrap().len(), 15);

    let table = ok(&["estimate", path(&scenario), path(&plan), "--early-stop", "--sequential"]);
    assert!(table.contains("0 of 15 services fail"), "{table}");
}

#[test]
fn float_plan_bounds_rounded_and_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.json");
    ok(&["gen", "--ns", "12", "--mem", "3", "--seed", "1", "-o", path(&scenario)]);
    let solve = |h: &str| {
        AllocationPlan::from_json(&ok(&["solve", path(&scenario), "--heuristic", h, "--penalty-update", "ratchet"]))
            .unwrap()
            .machines_used()
    };
    let (float, pd, base) = (solve("colgen_float"), solve("colgen_pd"), solve("no_sharing"));
    assert!(float <= pd + 1e-9);
    assert!(float <= base + 1e-9);
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("out.csv");
    ok(&[
        "bench", "--ns", "10", "--mem", "3,4", "--seeds", "2", "--heuristics", "no_sharing,colgen_float",
        "--validate", "-o", path(&csv),
    ]);
    let rows = read_csv(std::fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 2);
    for r in &rows {
        assert_eq!(r.scenario_kind, "uniform");
        assert!(r.machines.unwrap() > 0.0);
        match r.heuristic.as_str() {
            "no_sharing" => assert!(r.max_rel_violation.unwrap() < 0.0),
            "colgen_float" => assert!(r.cg_iterations.is_some() && r.max_rel_violation.is_none()),
            other => panic!("unexpected heuristic {other}"),
        }
    }
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.json");
    let out = relalloc(&["solve", path(&missing)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    let scenario = dir.path().join("s.json");
    ok(&["gen", "--ns", "5", "-o", path(&scenario)]);
    let out = relalloc(&["solve", path(&scenario), "--epsilon", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!relalloc(&["solve", path(&scenario), "--heuristic", "best"]).status.success());

    // A plan that drops replicas fails the structural check before estimation.
    let plan = dir.path().join("p.json");
    ok(&["solve", path(&scenario), "--heuristic", "no_sharing", "-o", path(&plan)]);
    let mut p = AllocationPlan::load(&plan).unwrap();
    p.multiplicities[0] -= 1.0;
    p.save(&plan).unwrap();
    assert_eq!(relalloc(&["estimate", path(&scenario), path(&plan)]).status.code(), Some(1));
}

#[test]
fn missed_targets_set_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.json");
    let plan = dir.path().join("p.json");
    ok(&["gen", "--ns", "3", "--seed", "4", "-o", path(&scenario)]);
    ok(&["solve", path(&scenario), "--heuristic", "no_sharing", "-o", path(&plan)]);
    // Demanding far more CPU than the plan grants makes every service fail.
    let mut s = Scenario::load(&scenario).unwrap();
    let p = AllocationPlan::load(&plan).unwrap();
    for (svc, target) in s.services.iter_mut().zip(&p.replica_targets) {
        svc.demand = target - 0.5;
    }
    s.save(&scenario).unwrap();
    let out = relalloc(&["estimate", path(&scenario), path(&plan)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stdout));
}
