use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn levy_sprt(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_levy-sprt"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) {
    let o = levy_sprt(args, out);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn bm_defaults_have_one_row_per_step() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["simulate"], tmp.path());
    let text = std::fs::read_to_string(tmp.path().join("path.csv")).unwrap();
    // header, t = 0 and 1000 steps of 1e-3
    assert_eq!(text.lines().count(), 1002);
    let manifest = read_json(&tmp.path().join("manifest.json"));
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["config"]["process"], "bm");
    assert_eq!(manifest["config"]["seed"], "20190530");
}

#[test]
fn same_config_twice_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let args = ["simulate", "--set", "process=compound_poisson", "--set", "horizon=3", "--seed", "7"];
    ok(&args, &a);
    ok(&args, &b);
    for f in ["path.csv", "manifest.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn rerun_reproduces_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["montecarlo", "--set", "n_paths=500", "--set", "alpha=0.1"], &a);
    let manifest = a.join("manifest.json");
    ok(&["rerun", manifest.to_str().unwrap()], &b);
    for f in ["stats.json", "stats.csv", "manifest.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_file_and_flag_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "# bm run\nprocess = bm\nhorizon = 0.5\ndt = 0.01\n").unwrap();
    let out = tmp.path().join("o");
    ok(&["simulate", "-c", cfg.to_str().unwrap(), "--set", "horizon=0.2"], &out);
    let text = std::fs::read_to_string(out.join("path.csv")).unwrap();
    assert_eq!(text.lines().count(), 22);
}

#[test]
fn bns_at_unit_theta_matches_classical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("mixed"), tmp.path().join("classical"));
    ok(
        &["simulate", "--set", "process=bns", "--set", "theta=1", "--set", "theta_prime=1", "--set", "horizon=2"],
        &a,
    );
    ok(&["simulate", "--set", "process=bns_classical", "--set", "horizon=2"], &b);
    assert_eq!(std::fs::read(a.join("bns.csv")).unwrap(), std::fs::read(b.join("bns.csv")).unwrap());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| levy_sprt(args, tmp.path()).status.code();
    assert_eq!(code(&["simulate", "--set", "no_such_key=1"]), Some(2));
    assert_eq!(code(&["simulate", "--set", "horizon=abc"]), Some(2));
    assert_eq!(code(&["montecarlo", "--set", "n_paths=0"]), Some(2));
    assert_eq!(code(&["oil", "--set", "prices=/nonexistent/prices.csv", "--set", "a=1"]), Some(2));
    assert_eq!(
        code(&[
            "thresholds",
            "--set",
            "mode=system",
            "--set",
            "alpha00=0.01",
            "--set",
            "alpha01=0.02",
            "--set",
            "alpha10=0.05",
            "--set",
            "l1=5"
        ]),
        Some(3)
    );
}

#[test]
fn symmetric_thresholds_are_monotone() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["thresholds", "--set", "alpha=0.1,0.05,0.01"], tmp.path());
    let manifest = read_json(&tmp.path().join("manifest.json"));
    assert_eq!(manifest["flags"]["monotone_in_alpha"], true);
    let report = read_json(&tmp.path().join("thresholds.json"));
    let rows = report["rectangles"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for row in rows {
        assert_eq!(row["l1"].as_f64().unwrap(), -row["r1"].as_f64().unwrap());
    }
    let r: Vec<f64> = rows.iter().map(|row| row["r1"].as_f64().unwrap()).collect();
    assert!(r[0] < r[1] && r[1] < r[2], "{r:?}");
}

#[test]
fn envelopes_report_structure() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["envelopes", "--set", "grid_n=16"], tmp.path());
    let manifest = read_json(&tmp.path().join("manifest.json"));
    assert!(manifest["flags"]["continuation"].is_boolean());
    assert_eq!(manifest["flags"]["gap_monotone"], true);
    let report = read_json(&tmp.path().join("envelopes.json"));
    assert_eq!(report["worlds"].as_array().unwrap().len(), 4);
    for w in ["00", "01", "10", "11"] {
        let csv = std::fs::read_to_string(tmp.path().join(format!("envelope_{w}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 16 * 16 + 1);
    }
}

#[test]
fn large_l_flags_continuation() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["envelopes", "--set", "grid_n=8", "--set", "l_const=50"], tmp.path());
    let manifest = read_json(&tmp.path().join("manifest.json"));
    assert_eq!(manifest["flags"]["continuation"], true);
}

#[test]
fn oil_report_has_audit_trail() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["oil", "--set", "mu=0.0238", "--set", "sigma=11.419", "--set", "a=19"], tmp.path());
    let report = read_json(&tmp.path().join("oil.json"));
    let exits = &report["exits"];
    let total: u64 = ["right", "left", "none"].iter().map(|k| exits[k].as_u64().unwrap()).sum();
    assert_eq!(total, 30);
    assert!(report["r"].as_f64().unwrap() > 0.0);
    assert!(report["r_candidates"].is_object());
    let runs = std::fs::read_to_string(tmp.path().join("oil_runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 31);
}
