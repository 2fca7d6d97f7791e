use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "fleet": {"n_satellites": 5},
  "protocol": {
    "messages_per_satellite": 40,
    "dr": {"n_bal": 20, "n_trials": 8},
    "n_acc_grid": [1, 5, 20]
  },
  "mc_validate": {"snr_db": [20.0], "n_trials": 20},
  "crb_curves": {"modulations": ["bpsk", "qpsk"], "snr_db": [10.0, 20.0], "n": [76]}
}"#;

fn hwifp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hwifp"))
        .args(args)
        .output()
        .expect("spawn hwifp")
}

fn run_ok(args: &[&str]) -> String {
    let o = hwifp(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn setup() -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, SMALL).unwrap();
    let c = cfg.to_str().unwrap().to_string();
    (dir, c)
}

fn out(dir: &Path, sub: &str) -> String {
    dir.join(sub).to_str().unwrap().to_string()
}

#[test]
fn moments_table() {
    let (dir, cfg) = setup();
    let o = out(dir.path(), "m");
    let stdout = run_ok(&["--config", &cfg, "--out-dir", &o, "moments", "-m", "bpsk", "-m", "qpsk"]);
    let bpsk = stdout.lines().find(|l| l.starts_with("bpsk")).unwrap();
    assert!(bpsk.trim_end().ends_with(" 2"), "{bpsk}");
    let csv = fs::read_to_string(Path::new(&o).join("moments.csv")).unwrap();
    let mut rows = csv.lines().skip(1);
    assert!(rows.next().unwrap().starts_with("bpsk,1.0,0.0,0.0,"));
    assert!(rows.next().unwrap().starts_with("qpsk,"));
}

#[test]
fn custom_alphabet_file() {
    let (dir, cfg) = setup();
    let alpha = dir.path().join("ask.json");
    // Real 4-ASK: beta 0, mu4 = E[x^4] / E[x^2]^2 = 41/25.
    fs::write(&alpha, "[[-3,0],[-1,0],[1,0],[3,0]]").unwrap();
    let o = out(dir.path(), "m");
    run_ok(&[
        "--config",
        &cfg,
        "--out-dir",
        &o,
        "moments",
        "--alphabet",
        alpha.to_str().unwrap(),
    ]);
    let csv = fs::read_to_string(Path::new(&o).join("moments.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[3].parse::<f64>().unwrap(), 0.0);
    assert!((row[4].parse::<f64>().unwrap() - 1.64).abs() < 1e-12);
    assert_eq!(row[8], "2");
}

#[test]
fn exit_code_on_config_errors() {
    let (dir, _) = setup();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"mc_validate": {"n_trial": 3}}"#).unwrap();
    let o = out(dir.path(), "x");
    assert_eq!(
        hwifp(&["--config", bad.to_str().unwrap(), "--out-dir", &o, "moments"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        hwifp(&["--out-dir", &o, "moments", "-m", "17apsk"]).status.code(),
        Some(2)
    );
    assert_eq!(
        hwifp(&["--out-dir", &o, "--rank-tol", "2", "identifiability"])
            .status
            .code(),
        Some(2)
    );
    let missing = dir.path().join("none.json");
    assert_eq!(
        hwifp(&["--config", missing.to_str().unwrap(), "moments"]).status.code(),
        Some(2)
    );
}

#[test]
fn config_round_trip_through_cli() {
    let (dir, cfg) = setup();
    let printed = run_ok(&["--config", &cfg, "--seed", "9", "config"]);
    let again = dir.path().join("again.json");
    fs::write(&again, &printed).unwrap();
    assert_eq!(run_ok(&["--config", again.to_str().unwrap(), "config"]), printed);
    assert!(printed.contains("\"seed\": 9"));
}

#[test]
fn identifiability_json() {
    let (dir, cfg) = setup();
    let o = out(dir.path(), "i");
    run_ok(&["--config", &cfg, "--out-dir", &o, "identifiability"]);
    let v: serde_json::Value =
        serde_json::from_slice(&fs::read(Path::new(&o).join("identifiability.json")).unwrap()).unwrap();
    let rows = v["rows"].as_array().unwrap();
    let get = |m: &str| rows.iter().find(|r| r["modulation"] == m).unwrap();
    assert_eq!(get("bpsk")["rank"], 2);
    assert!(get("bpsk")["rho_phi_im_alpha3"].as_f64().unwrap() > 0.99);
    assert!(get("bpsk")["collapse_angle_deg"].as_f64().unwrap() < 2.0);
    assert_eq!(get("qpsk")["rank"], 4);
    assert!((get("qpsk")["rho_phi_im_alpha3"].as_f64().unwrap() - 0.68).abs() < 0.01);
}

#[test]
fn crb_curves_mark_bpsk_unidentifiable() {
    let (dir, cfg) = setup();
    let o = out(dir.path(), "c");
    run_ok(&["--config", &cfg, "--out-dir", &o, "crb-curves"]);
    let csv = fs::read_to_string(Path::new(&o).join("crb_curves.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "crb_known_h").unwrap();
    let bpsk_eps = csv.lines().find(|l| l.starts_with("bpsk,10.0,76,eps,")).unwrap();
    assert_eq!(bpsk_eps.split(',').nth(col), Some("inf"));
    let qpsk_eps = csv.lines().find(|l| l.starts_with("qpsk,10.0,76,eps,")).unwrap();
    assert!(qpsk_eps.split(',').nth(col).unwrap().parse::<f64>().is_ok());
}

#[test]
fn mc_validate_writes_four_rows_per_snr() {
    let (dir, cfg) = setup();
    let o = out(dir.path(), "mc");
    run_ok(&["--config", &cfg, "--out-dir", &o, "mc-validate", "--n-trials", "10"]);
    let csv = fs::read_to_string(Path::new(&o).join("mc_validation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
}

#[test]
fn fleet_pipeline_is_deterministic() {
    let (dir, cfg) = setup();
    let a = out(dir.path(), "a");
    let b = out(dir.path(), "b");
    for o in [&a, &b] {
        run_ok(&["--config", &cfg, "--out-dir", o, "fleet-sim"]);
        let enr = Path::new(o).join("enrollment_features.csv");
        let prb = Path::new(o).join("probe_features.csv");
        run_ok(&[
            "--config",
            &cfg,
            "--out-dir",
            o,
            "authenticate",
            "--enroll-features",
            enr.to_str().unwrap(),
            "--probe-features",
            prb.to_str().unwrap(),
        ]);
    }
    for f in [
        "enrollment_features.csv",
        "auth_report.json",
        "roc.csv",
        "accumulation.csv",
        "dr_weights.csv",
    ] {
        let x = fs::read(Path::new(&a).join(f)).unwrap();
        let y = fs::read(Path::new(&b).join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
    let other = out(dir.path(), "c");
    run_ok(&["--config", &cfg, "--seed", "1", "--out-dir", &other, "fleet-sim"]);
    assert_ne!(
        fs::read(Path::new(&a).join("probe_features.csv")).unwrap(),
        fs::read(Path::new(&other).join("probe_features.csv")).unwrap()
    );
}

#[test]
fn simulated_and_file_inputs_agree() {
    let (dir, cfg) = setup();
    let sim = out(dir.path(), "sim");
    run_ok(&["--config", &cfg, "--out-dir", &sim, "authenticate"]);
    let files = out(dir.path(), "files");
    run_ok(&["--config", &cfg, "--out-dir", &files, "fleet-sim"]);
    let enr = Path::new(&files).join("enrollment_features.csv");
    let prb = Path::new(&files).join("probe_features.csv");
    run_ok(&[
        "--config",
        &cfg,
        "--out-dir",
        &files,
        "authenticate",
        "--enroll-features",
        enr.to_str().unwrap(),
        "--probe-features",
        prb.to_str().unwrap(),
    ]);
    assert_eq!(
        fs::read(Path::new(&sim).join("roc.csv")).unwrap(),
        fs::read(Path::new(&files).join("roc.csv")).unwrap()
    );
}

#[test]
fn published_dr_prints_published_weight() {
    let (dir, cfg) = setup();
    let o = out(dir.path(), "p");
    let stdout = run_ok(&["--config", &cfg, "--out-dir", &o, "authenticate", "--published-dr"]);
    let line = stdout.lines().find(|l| l.contains("w(amp_var)")).unwrap();
    let w: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!((w - 0.42).abs() <= 0.01, "{line}");
}

#[test]
fn dr_analysis_and_burst_inputs() {
    let (dir, cfg) = setup();
    let o = out(dir.path(), "d");
    run_ok(&["--config", &cfg, "--out-dir", &o, "fleet-sim", "--emit-bursts", "40"]);
    let enr = Path::new(&o).join("enrollment_features.csv");
    let prb = Path::new(&o).join("probe_features.csv");
    run_ok(&[
        "--config",
        &cfg,
        "--out-dir",
        &o,
        "dr-analysis",
        "--features",
        enr.to_str().unwrap(),
        "--probe-features",
        prb.to_str().unwrap(),
    ]);
    let dr = fs::read_to_string(Path::new(&o).join("dr_table.csv")).unwrap();
    assert_eq!(dr.lines().count(), 1 + 13);
    assert!(Path::new(&o).join("cross_stability.csv").exists());

    let b = out(dir.path(), "bursts_auth");
    let stdout = run_ok(&[
        "--config",
        &cfg,
        "--out-dir",
        &b,
        "authenticate",
        "--enroll-bursts",
        Path::new(&o).join("bursts/enrollment").to_str().unwrap(),
        "--probe-bursts",
        Path::new(&o).join("bursts/probe").to_str().unwrap(),
    ]);
    assert!(stdout.starts_with("beta = 0.000, 5 enrolled, 5 probes"), "{stdout}");

    // Too few bursts per satellite for the balanced DR: input error.
    let few = out(dir.path(), "few");
    run_ok(&["--config", &cfg, "--out-dir", &few, "fleet-sim", "--emit-bursts", "3"]);
    let code = hwifp(&[
        "--config",
        &cfg,
        "--out-dir",
        &few,
        "authenticate",
        "--enroll-bursts",
        Path::new(&few).join("bursts/enrollment").to_str().unwrap(),
        "--probe-bursts",
        Path::new(&few).join("bursts/probe").to_str().unwrap(),
    ])
    .status
    .code();
    assert_eq!(code, Some(2));
}
