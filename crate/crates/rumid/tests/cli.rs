use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use tempfile::TempDir;

const M_LOG: &str = r#"{"alternatives": 3,
 "utilities": [{"kind":"log","params":[1.0]},{"kind":"log","params":[2.0]},{"kind":"log","params":[0.5]}],
 "noise": {"kind":"gumbel_iid"},
 "domain": [[1.0,4.0],[1.0,4.0],[1.0,4.0]]}"#;

const M_LIN: &str = r#"{"alternatives": 3,
 "utilities": [{"kind":"linear","params":[0.0,1.0]},{"kind":"linear","params":[0.0,1.0]},{"kind":"linear","params":[0.0,1.0]}],
 "noise": {"kind":"gumbel_iid"},
 "domain": [[-1.0,1.0],[-1.0,1.0],[-1.0,1.0]]}"#;

const PAIR: &str = r#"{"alternatives": 2,
 "utilities": [{"kind":"log","params":[1.0]},{"kind":"log","params":[2.0]}],
 "noise": {"kind":"gumbel_iid"},
 "domain": [[0.2,10.0],[0.1,10.0]]}"#;

fn rumid(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_rumid")).args(args).output().unwrap();
    let text = format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    (out.status.code().unwrap(), text)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn model(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, body).unwrap();
    path
}

fn simulate(dir: &TempDir, body: &str, grid: &[&str], name: &str) -> PathBuf {
    let m = model(dir, &format!("{name}.json"), body);
    let out = dir.path().join(name);
    let mut args = vec!["simulate", "--model", p(&m), "--out", p(&out)];
    for g in grid {
        args.extend(["--grid", g]);
    }
    let (code, text) = rumid(&args);
    assert_eq!(code, 0, "{text}");
    out.join("field.csv")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_writes_full_lattice() {
    let dir = TempDir::new().unwrap();
    let csv = simulate(&dir, M_LOG, &[], "log");
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "a_0,a_1,a_2,q_0,q_1,q_2");
    assert_eq!(lines.len(), 1 + 21 * 21 * 21);
    // first node a = (1, 1, 1): q = (1, 1, 1) / 3
    let q0: f64 = lines[1].split(',').nth(3).unwrap().parse().unwrap();
    assert!((q0 - 1.0 / 3.0).abs() < 1e-15);
    let meta = json(&dir.path().join("log/field.json"));
    assert_eq!(meta["grid"]["axes"].as_array().unwrap().len(), 3);
}

#[test]
fn monte_carlo_simulation_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let m = model(&dir, "m.json", M_LOG);
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let (code, text) = rumid(&[
            "simulate", "--model", p(&m), "--grid", "1:4:5", "--draws", "2000", "--seed", seed, "--out", p(&out),
        ]);
        assert_eq!(code, 0, "{text}");
        fs::read(out.join("field.csv")).unwrap()
    };
    let (a, b, c) = (run("a", "3"), run("b", "3"), run("c", "4"));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn malformed_model_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let bad = M_LOG.replace("\"alternatives\": 3", "\"alternatives\": 4");
    let m = model(&dir, "bad.json", &bad);
    let (code, text) = rumid(&["simulate", "--model", p(&m), "--out", p(&dir.path().join("o"))]);
    assert_eq!(code, 2, "{text}");
    let (code, _) = rumid(&["simulate", "--model", p(&dir.path().join("missing.json")), "--out", "x"]);
    assert_eq!(code, 2);
    let (code, _) = rumid(&["frobnicate"]);
    assert_eq!(code, 2);
}

#[test]
fn check_outcomes() {
    let dir = TempDir::new().unwrap();
    let lin = simulate(&dir, M_LIN, &["-1:1:41"], "lin");
    let out = dir.path().join("lin_check");
    let (code, text) = rumid(&["check", "--field", p(&lin), "--out", p(&out)]);
    assert_eq!(code, 0, "{text}");
    assert_eq!(json(&out.join("check.json"))["passed"], true);

    let log = simulate(&dir, M_LOG, &["1:4:41"], "log");
    let out = dir.path().join("log_check");
    let (code, _) = rumid(&["check", "--field", p(&log), "--out", p(&out)]);
    assert_eq!(code, 1);
    let report = json(&out.join("check.json"));
    assert_eq!(report["shape"]["passed"], true);
    assert_eq!(report["condition_a"]["passed"], true);
    assert_eq!(report["daly_zachary"]["passed"], false);

    let (code, _) = rumid(&["check", "--field", p(&log), "--checks", "shape,condition-a", "--out", p(&out)]);
    assert_eq!(code, 0);
    let (code, _) = rumid(&["check", "--field", p(&log), "--tol-a", "-1", "--out", p(&out)]);
    assert_eq!(code, 2);
}

#[test]
fn identify_refuses_when_condition_fails() {
    let dir = TempDir::new().unwrap();
    // too coarse for the ratio condition to resolve on this domain
    let log = simulate(&dir, M_LOG, &["1:4:21"], "log");
    let out = dir.path().join("id");
    let (code, text) = rumid(&["identify", "--field", p(&log), "--out", p(&out)]);
    assert_eq!(code, 1, "{text}");
    assert!(text.contains("rumid check"), "{text}");
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn identify_and_verify_pair() {
    let dir = TempDir::new().unwrap();
    let field = simulate(&dir, PAIR, &["0.2:10:197", "0.1:10:199"], "pair");
    let out = dir.path().join("id");
    let (code, text) = rumid(&[
        "identify", "--field", p(&field), "--a-ref", "1", "--v-range", "0.003:300", "--v-nodes", "401", "--out",
        p(&out),
    ]);
    assert_eq!(code, 0, "{text}");
    for f in ["manifest.json", "ratio_1.json", "omega_1.csv", "omega_1.json", "w_1.csv", "density.csv", "density.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let mass = json(&out.join("density.json"))["mass"]["trapezoid_mass"].as_f64().unwrap();
    assert!((0.97..=1.01).contains(&mass), "mass {mass}");

    let (code, text) = rumid(&["verify", "--field", p(&field), "--artifacts", p(&out)]);
    assert_eq!(code, 0, "{text}");
    let rep = json(&out.join("verify.json"));
    assert!(rep["max_error"].as_f64().unwrap() <= 0.02);
    assert!(out.join("verify_points.csv").exists());

    let mc = dir.path().join("mc");
    let (code, text) = rumid(&[
        "verify", "--field", p(&field), "--artifacts", p(&out), "--draws", "20000", "--tol", "0.03", "--points", "10",
        "--out", p(&mc),
    ]);
    assert_eq!(code, 0, "{text}");

    // artifacts from another field are rejected
    let other = simulate(&dir, PAIR, &["0.2:10:21", "0.1:10:21"], "other");
    let (code, text) = rumid(&["verify", "--field", p(&other), "--artifacts", p(&out)]);
    assert_eq!(code, 2, "{text}");
}

#[test]
fn convert_round_trip() {
    let dir = TempDir::new().unwrap();
    let prices = dir.path().join("prices.csv");
    fs::write(&prices, "p_1,p_2,y,q_0,q_1,q_2\n1.0,2.0,5.0,0.2,0.3,0.5\n0.5,0.25,3.0,0.6,0.3,0.1\n").unwrap();
    let offers = dir.path().join("offers.csv");
    let (code, text) = rumid(&["convert", "--input", p(&prices), "--out", p(&offers)]);
    assert_eq!(code, 0, "{text}");
    let text = fs::read_to_string(&offers).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "a_0,a_1,a_2,q_0,q_1,q_2");
    let first: Vec<f64> = lines.next().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(&first[..3], &[5.0, 4.0, 3.0]);

    let back = dir.path().join("back.csv");
    let (code, _) = rumid(&["convert", "--inverse", "--input", p(&offers), "--out", p(&back)]);
    assert_eq!(code, 0);
    let b = fs::read_to_string(&back).unwrap();
    assert!(b.starts_with("p_1,p_2,y,q_0,q_1,q_2\n"));
    let row: Vec<f64> = b.lines().nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(row, vec![1.0, 2.0, 5.0, 0.2, 0.3, 0.5]);

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "p_0,p_1,y,q_0,q_1\n1.0,1.0,3.0,0.5,0.5\n").unwrap();
    let (code, text) = rumid(&["convert", "--input", p(&bad), "--out", p(&dir.path().join("x.csv"))]);
    assert_eq!(code, 2, "{text}");
}

#[test]
fn resample_scattered_rows() {
    let dir = TempDir::new().unwrap();
    // logit field on jittered points
    let mut rows = String::from("a_0,a_1,q_0,q_1\n");
    let mut s = 7u64;
    let mut next = || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (s >> 11) as f64 / (1u64 << 53) as f64
    };
    for _ in 0..600 {
        let (a0, a1) = (-1.2 + 2.4 * next(), -1.2 + 2.4 * next());
        let q0 = 1.0 / (1.0 + (a1 - a0).exp());
        rows.push_str(&format!("{a0},{a1},{q0},{}\n", 1.0 - q0));
    }
    let input = dir.path().join("rows.csv");
    fs::write(&input, rows).unwrap();
    let out = dir.path().join("grid.csv");
    let (code, text) = rumid(&["resample", "--input", p(&input), "--grid", "-1:1:11", "--out", p(&out)]);
    assert_eq!(code, 0, "{text}");
    let report = json(&dir.path().join("grid.resample.json"));
    assert_eq!(report["nodes"], 121);
    let text = fs::read_to_string(&out).unwrap();
    for line in text.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        let exact = 1.0 / (1.0 + (v[1] - v[0]).exp());
        assert!((v[2] - exact).abs() < 1e-2, "{line}");
    }
}
