use diffpos::limitsets::{LimitSetReport, LimitVerdict};
use diffpos::positivity::{ContractionReport, PositivityReport, Verdict};
use serde_json::Value;
use std::path::PathBuf;
use std::process::{Command, Output};

fn diffpos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffpos"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("diffpos-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn check_passes_above_the_damping_threshold() {
    let o = diffpos(&["check", "--model", "pendulum", "--param", "k=3"]);
    assert_eq!(o.status.code(), Some(0));
    let rep: PositivityReport = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rep.verdict, Verdict::Positive);
}

#[test]
fn check_fails_below_the_threshold_with_a_witness_near_theta_zero() {
    let o = diffpos(&["check", "--model", "pendulum", "--param", "k=1.5"]);
    assert_eq!(o.status.code(), Some(2));
    let rep: PositivityReport = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rep.verdict, Verdict::NotPositive);
    let theta = rep.witnesses[0].x[0];
    assert!(theta.min(std::f64::consts::TAU - theta) < 0.35, "{theta}");
}

#[test]
fn classify_finds_the_driven_pendulum_cycle() {
    let o = diffpos(&["classify", "--model", "pendulum", "--param", "k=3", "--param", "u=1.2"]);
    assert_eq!(o.status.code(), Some(0));
    let rep: LimitSetReport = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rep.verdict, LimitVerdict::LimitCycle);
    let p = rep.period.unwrap();
    assert!((p - 28.29).abs() < 0.05, "{p}");
}

#[test]
fn errors_use_the_json_envelope() {
    for args in [
        vec!["check", "--model", "nope"],
        vec!["check", "--model", "pendulum", "--param", "q=1"],
        vec!["check", "--frobnicate"],
        vec!["check"],
        vec!["--model", "pendulum"],
    ] {
        let o = diffpos(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        let v: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
        assert!(v["error"].is_string() && v["message"].is_string(), "{v}");
    }
}

#[test]
fn config_errors_carry_line_and_column() {
    let path = scratch("broken.toml");
    std::fs::write(&path, "command = \"check\"\nmodel = \"pendulum\"\nparams = { k = }\n").unwrap();
    let o = diffpos(&["--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let v: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["error"], "ConfigError");
    assert!(v["message"].as_str().unwrap().contains("line 3, column 16"), "{v}");
}

#[test]
fn explicit_flags_override_the_config() {
    let path = scratch("k15.toml");
    std::fs::write(&path, "command = \"check\"\nmodel = \"pendulum\"\nparams = { k = 1.5 }\n").unwrap();
    let cfg = path.to_str().unwrap();
    assert_eq!(diffpos(&["--config", cfg]).status.code(), Some(2));
    assert_eq!(diffpos(&["--config", cfg, "--param", "k=3"]).status.code(), Some(0));
}

#[test]
fn expression_systems_load_from_config() {
    let path = scratch("expr.toml");
    std::fs::write(
        &path,
        r#"command = "check"

[system]
states = ["x1", "x2"]
equations = ["-x1 + x2", "-x2 + 2*tanh(x1)"]

[cone]
halfspaces = [[1, 0], [0, 1]]

[settings]
box_lo = [-3, -3]
box_hi = [3, 3]
"#,
    )
    .unwrap();
    let o = diffpos(&["--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn outputs_are_deterministic() {
    let args = ["check", "--model", "oscillator", "--seed", "3", "--grid", "9"];
    let a = diffpos(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, diffpos(&args).stdout);
    let sim = ["simulate", "--model", "pendulum", "--param", "u=1.2", "--x0", "0,0", "--t-end", "2"];
    let a = diffpos(&sim);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(stdout(&a).lines().count(), 2002);
    assert_eq!(a.stdout, diffpos(&sim).stdout);
}

#[test]
fn strict_writes_report_and_decay_csv() {
    let csv = scratch("decay.csv");
    let o = diffpos(&[
        "strict",
        "--model",
        "pendulum",
        "--param",
        "k=3",
        "--grid",
        "5",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(matches!(o.status.code(), Some(0) | Some(2)));
    let rep: ContractionReport = serde_json::from_str(&stdout(&o)).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("t,boundary_distance,interior_distance\n"));
    assert_eq!(text.lines().count(), rep.decay.len() + 1);
}

#[test]
fn pf_field_exports_csv_and_svg() {
    let out = scratch("pf.csv");
    let svg = scratch("pf.svg");
    let o = diffpos(&[
        "pf-field",
        "--model",
        "pendulum",
        "--param",
        "u=1.2",
        "--pf-tol",
        "1e-5",
        "--grid",
        "5",
        "--out",
        out.to_str().unwrap(),
        "--svg",
        svg.to_str().unwrap(),
        "--x0",
        "0,0",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("x_1,x_2,w_1,w_2,residual,window\n"));
    assert_eq!(text.lines().count(), 26);
    let pic = std::fs::read_to_string(&svg).unwrap();
    assert!(pic.contains(r#"viewBox="0 0 800 800""#));
    assert!(pic.contains("<polyline") && pic.contains("<line"));
}

#[test]
fn hilbert_table() {
    let o = diffpos(&[
        "hilbert", "--model", "linear", "--vector", "1,1", "--vector", "2,1", "--vector", "1,0", "--format", "csv",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "i,j,distance");
    assert_eq!(rows.len(), 10);
    let d01: f64 = rows[2].split(',').nth(2).unwrap().parse().unwrap();
    assert!((d01 - 2f64.ln()).abs() < 1e-12);
    assert!(rows[3].ends_with(",inf"));
}
