use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evprice"))
        .args(args)
        .arg("--output-dir")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn ue_solve_illustrative() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("illustrative.toml");
    let o = run(&["ue-solve", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let ue = read_json(&dir.path().join("ue.json"));
    let f = floats(&ue["solution"]["path_flows"]);
    for (a, b) in f.iter().zip([0.75, 0.75, 1.0, 1.0]) {
        assert!((a - b).abs() < 1e-6, "{f:?}");
    }
    assert_eq!(ue["certified"], Value::Bool(true));
    let m = read_json(&dir.path().join("manifest.json"));
    assert_eq!(m["command"], "ue-solve");
    assert_eq!(m["artifacts"][0], "ue.json");
    assert_eq!(m["config"]["paths_per_od"], 2);
}

#[test]
fn missing_fcs_file_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("illustrative.toml");
    let o = run(&["ue-solve", "--config", cfg.to_str().unwrap(), "--fcs", "/no/such/stations.fcs"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/no/such/stations.fcs"));
}

#[test]
fn tolerance_ordering_is_checked() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("illustrative.toml");
    let o = run(&["ue-solve", "--config", cfg.to_str().unwrap(), "--ue-tol", "1e-3"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cost_eps"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "netwrk = \"a.net\"\n").unwrap();
    let o = run(&["ue-solve", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("netwrk"));
}

#[test]
fn fd_check_agrees_with_sensitivity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("nguyen_dupuis.toml");
    let args = ["--config", cfg.to_str().unwrap(), "--lambda", "210,215"];
    let o = run(&[&["sensitivity"], &args[..]].concat(), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&[&["fd-check"], &args[..]].concat(), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let sens = read_json(&dir.path().join("sensitivity.json"));
    let fd = read_json(&dir.path().join("fd_check.json"));
    assert_eq!(fd["pass"], Value::Bool(true));
    let grad: Vec<Vec<f64>> = sens["sensitivity"]["grad"].as_array().unwrap().iter().map(floats).collect();
    for e in fd["points"][0]["entries"].as_array().unwrap() {
        let (i, k) = (e["station"].as_u64().unwrap() as usize, e["owned"].as_u64().unwrap() as usize);
        let fd_value = e["fd"].as_f64().unwrap();
        assert!((grad[i][k] - fd_value).abs() <= (0.01 * fd_value.abs()).max(2e-3), "{i},{k}");
    }
}

#[test]
fn price_optimize_is_reproducible() {
    let cfg = config("illustrative.toml");
    let args = ["price-optimize", "--config", cfg.to_str().unwrap(), "--starts", "3", "--seed", "5"];
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let o = run(&args, d.path());
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["result.json", "trajectory_0.jsonl", "trajectory_1.jsonl", "trajectory_2.jsonl"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
    let r = read_json(&a.path().join("result.json"));
    let best = r["profit"].as_f64().unwrap();
    for s in r["starts"].as_array().unwrap() {
        assert!(s["profit"].as_f64().unwrap() <= best);
    }
    let lines = std::fs::read_to_string(a.path().join("trajectory_0.jsonl")).unwrap();
    let profits: Vec<f64> = lines
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["profit"].as_f64().unwrap())
        .collect();
    assert!(profits.windows(2).all(|w| w[1] > w[0]), "{profits:?}");
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("illustrative.toml");
    let o = run(
        &["oracle-grid", "--config", cfg.to_str().unwrap(), "--grid-step", "0.5", "--price-upper", "2"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let g = read_json(&dir.path().join("grid.json"));
    assert_eq!(g["points"], 5);
    let csv = std::fs::read_to_string(dir.path().join("landscape.csv")).unwrap();
    assert!(csv.starts_with("lambda_1,profit\n"));
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn coupled_cycle_cap_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("nguyen_dupuis.toml");
    let o = run(&["coupled-run", "--config", cfg.to_str().unwrap(), "--max-cycles", "1"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("cycle cap") && err.contains("last LMPs"), "{err}");
}

#[test]
fn impact_report_orders_strategies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("nguyen_dupuis.toml");
    let o = run(&["impact-report", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_json(&dir.path().join("impact.json"));
    let rows = rows.as_array().unwrap();
    assert_eq!(rows[0]["strategy"], "Optimal");
    let best = rows[0]["profit"].as_f64().unwrap();
    assert!(rows[1..].iter().all(|r| r["profit"].as_f64().unwrap() < best));
}

#[test]
fn help_lists_every_subcommand() {
    let o = Command::new(env!("CARGO_BIN_EXE_evprice")).arg("--help").output().unwrap();
    let text = String::from_utf8_lossy(&o.stdout);
    for c in ["ue-solve", "sensitivity", "price-optimize", "coupled-run", "oracle-grid", "fd-check", "impact-report"] {
        assert!(text.contains(c), "{c}");
    }
}
