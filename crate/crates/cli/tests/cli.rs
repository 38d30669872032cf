use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BASE: &str = "theta = 0.2\nbeta1 = 0.4\nlambda = 1.5\nn0 = 1.0\np_max = 10.0\nrho = 0.1\n";

fn run(cmd: &str, config: &str, dir: &Path, extra: &[&str]) -> Output {
    let cfg = dir.join("config.toml");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_powerctl"))
        .arg(cmd)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join("out").join(name)).unwrap()
}

#[test]
fn equilibrium_report() {
    let dir = TempDir::new().unwrap();
    let out = run("equilibrium", BASE, dir.path(), &[]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&read(dir.path(), "equilibrium.json")).unwrap();
    assert_eq!(v["regime"], "active");
    assert_eq!(v["s4_star"], 1.0);
    assert!((v["E_star"].as_f64().unwrap() - 0.5296267795305887).abs() < 1e-12);
    assert!((v["n0_0"].as_f64().unwrap() - 24.84).abs() < 1e-9);
    assert_eq!(v["convexity_ok"], true);
    assert_eq!(v["m_star"].as_array().unwrap().len(), 4);
}

#[test]
fn assumption_violation_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = run("equilibrium", &BASE.replace("theta = 0.2", "theta = 1.2"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Assumption 1"));
}

#[test]
fn malformed_config_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = run("vi", "theta = ", dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    let out = run("vi", &format!("{BASE}unknown_key = 3\n"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unstable_step_exits_3() {
    let dir = TempDir::new().unwrap();
    let cfg = format!("{BASE}dt = 5.0\nhorizon = 50.0\nfluid_policy = \"passive\"\n");
    let out = run("fluid", &cfg, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("simplex"));
}

#[test]
fn passive_fluid_from_equilibrium_is_constant() {
    let dir = TempDir::new().unwrap();
    let cfg = format!(
        "{BASE}horizon = 1.0\nfluid_policy = \"passive\"\nm0 = [0.0, 0.6, 0.0, 0.4]\n"
    );
    let out = run("fluid", &cfg, dir.path(), &[]);
    assert!(out.status.success());
    let csv = read(dir.path(), "fluid.csv");
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,m1,m2,m3,m4,s4,inst_cost");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 101);
    for row in rows {
        let rest: Vec<&str> = row.split(',').skip(1).collect();
        assert_eq!(rest.join(","), "0,0.600000000000,0,0.400000000000,0,1.50000000000");
    }
}

#[test]
fn compare_sweep_rows() {
    let dir = TempDir::new().unwrap();
    let out = run("compare", BASE, dir.path(), &[]);
    assert!(out.status.success());
    let csv = read(dir.path(), "compare.csv");
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "rho,g_mf,g_vi,rel_err_pct,abs_err_pct");
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    let rhos: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(rhos, vec![0.05, 0.1, 0.2, 0.3]);
    for r in &rows {
        assert!(r[2] <= r[1] + 1e-9);
        assert!(r[3] >= 0.0);
    }

    let again = TempDir::new().unwrap();
    run("compare", BASE, again.path(), &[]);
    assert_eq!(csv, read(again.path(), "compare.csv"));
}

#[test]
fn threshold_report_is_seeded() {
    let cfg = format!("{BASE}grid_step = 0.05\ncheck_horizon = 300.0\nstarts = 2\ndt = 0.05\n");
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    assert!(run("threshold", &cfg, a.path(), &["--seed", "11"]).status.success());
    assert!(run("threshold", &cfg, b.path(), &["--seed", "11"]).status.success());
    let text = read(a.path(), "threshold.json");
    assert_eq!(text, read(b.path(), "threshold.json"));
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!((v["policy"]["pi"].as_f64().unwrap() - 0.04 / 0.46).abs() < 1e-15);
    assert_eq!(v["policy"]["pairing"], "prop3_consistent");
    assert_eq!(v["check"]["starts"].as_array().unwrap().len(), 2);
    assert_eq!(v["check"]["pairing_verdict"], "prop3_consistent");
}

#[test]
fn vi_summary() {
    let dir = TempDir::new().unwrap();
    let out = run("vi", BASE, dir.path(), &[]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&read(dir.path(), "vi.json")).unwrap();
    assert_eq!(v["n_users"], 10);
    assert!((v["vi"]["g"].as_f64().unwrap() - 3.43760106293366).abs() < 1e-8);
    assert_eq!(v["vi"]["policy"].as_array().unwrap().len(), 286);
    assert!(v["vi"]["span_residual"].as_f64().unwrap() < 1e-9);
}
