use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SCENARIO: &str = r#"
schema_version = 1
name = "line"

[solver]
horizon = 5

[propagation]
replicates = 30
horizon = 80
seed = 2

[simulation]
steps = 40
seed = 9

[[firms]]
production_cost = 1.0
shortage_penalty = 4.0
holding_cost = 0.1
inv_lower = 5
inv_upper = 60

[[firms]]
bom = [{ good = 0, qty = 1 }]
production_cost = 5.0
shortage_penalty = 12.0
holding_cost = 0.2
inv_lower = 4
inv_upper = 40
demand = { kind = "normal", mean = 8.0, std = 2.0, trunc_sigmas = 3.0 }

[[shocks]]
kind = "production_outage"
firm = 0
start = 20
end = 25
"#;

fn echelon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_echelon")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_scenario(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("line.scn");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn presets_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/scenarios");
    for name in ["ideal", "outage", "demand_shock"] {
        let out = echelon(&["validate", path(&root.join(format!("{name}.scn")))]);
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains("firms: 15"));
        assert!(text.contains("echelons: 5"));
    }
}

#[test]
fn simulate_is_reproducible_and_cache_equivalent() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = write_scenario(tmp.path(), SCENARIO);
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    for dir in [&a, &b] {
        let out = echelon(&["simulate", path(&scn), "--out", path(dir), "--quiet"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(out.stdout.is_empty());
    }
    for f in ["network.txt", "demand_pmfs.csv", "thresholds.csv", "solver.json", "trace.csv", "ledger.csv", "summary.toml"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let header = fs::read_to_string(a.join("trace.csv")).unwrap();
    assert!(header.starts_with(
        "k,firm,omega,request,produced,shipped,shortage,inv_out,inv_in_0,cost_step,cost_cum\n"
    ));

    let cache = a.join("solver.json");
    let out = echelon(&["simulate", path(&scn), "--from-cache", path(&cache), "--out", path(&c)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(a.join("trace.csv")).unwrap(), fs::read(c.join("trace.csv")).unwrap());
    assert_eq!(fs::read(a.join("ledger.csv")).unwrap(), fs::read(c.join("ledger.csv")).unwrap());

    let out = echelon(&["report", path(&a)]);
    assert!(out.status.success());
    let inv = fs::read_to_string(a.join("report_inventory.csv")).unwrap();
    assert!(inv.starts_with("k,firm,echelon,inv_out,shortage\n0,0,2,"));
    assert!(fs::read_to_string(a.join("report_costs.csv")).unwrap().contains("39,network,"));
}

#[test]
fn seed_override_changes_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = write_scenario(tmp.path(), SCENARIO);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(echelon(&["simulate", path(&scn), "--out", path(&a), "-q"]).status.success());
    assert!(echelon(&["simulate", path(&scn), "--out", path(&b), "-q", "--seed-override", "77"]).status.success());
    assert_ne!(fs::read(a.join("trace.csv")).unwrap(), fs::read(b.join("trace.csv")).unwrap());
}

#[test]
fn solve_and_propagate_write_solver_files() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = write_scenario(tmp.path(), SCENARIO);
    let out_dir = tmp.path().join("s");
    let out = echelon(&["solve", path(&scn), "--out", path(&out_dir)]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("v1 echelon 1 threshold"));
    let thresholds = fs::read_to_string(out_dir.join("thresholds.csv")).unwrap();
    assert_eq!(thresholds.lines().count(), 1 + 2 * 5);

    let out = echelon(&["propagate", path(&scn), "--out", path(&out_dir)]);
    assert!(out.status.success());
    let pmfs = fs::read_to_string(out_dir.join("demand_pmfs.csv")).unwrap();
    assert!(pmfs.starts_with("firm,value,probability\n"));
}

#[test]
fn errors_exit_nonzero_with_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_scenario(tmp.path(), &SCENARIO.replace("end = 25", "end = 40"));
    let out = echelon(&["validate", path(&bad)]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error: validate:"), "{err}");

    let out = echelon(&["validate", path(&tmp.path().join("missing.scn"))]);
    assert!(!out.status.success());

    let scn = write_scenario(tmp.path(), SCENARIO);
    let wrong = tmp.path().join("wrong.json");
    fs::write(&wrong, "{}").unwrap();
    let out = echelon(&["simulate", path(&scn), "--from-cache", path(&wrong), "--out", path(tmp.path())]);
    assert!(!out.status.success());
}
