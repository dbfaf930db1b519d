use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qmem_core::ExperimentConfig;
use serde_json::Value;

fn qmem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qmem")).args(args).output().expect("qmem runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A short (0.2 s) Table-1 config so the runs stay quick.
fn short_config(dir: &Path) -> PathBuf {
    let mut cfg = ExperimentConfig::table1();
    cfg.t_int = qmem_core::Time::from_secs_f64(0.2);
    let path = dir.join("cfg.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    path
}

fn simulate(cfg: &Path, out: &Path, seed: &str, vacuum: bool) {
    let mut args = vec!["simulate", "--config", s(cfg), "--out", s(out), "--seed", seed];
    if vacuum {
        args.push("--vacuum");
    }
    let o = qmem(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn shipped_config_matches_built_in_table1() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/table1.json");
    let shipped = ExperimentConfig::from_json(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(shipped, ExperimentConfig::table1());
}

/// Every config key has a schema entry and every required schema key is present.
fn check_against_schema(doc: &Value, schema: &Value, defs: &Value, at: &str) {
    let schema = match schema.get("$ref").and_then(Value::as_str) {
        Some(r) => &defs[r.trim_start_matches("#/$defs/")],
        None => schema,
    };
    let Some(props) = schema.get("properties").and_then(Value::as_object) else { return };
    let obj = doc.as_object().unwrap_or_else(|| panic!("{at} should be an object"));
    for key in obj.keys() {
        assert!(props.contains_key(key), "{at}.{key} is not in the schema");
        check_against_schema(&obj[key], &props[key], defs, &format!("{at}.{key}"));
    }
    for req in schema.get("required").and_then(Value::as_array).into_iter().flatten() {
        assert!(obj.contains_key(req.as_str().unwrap()), "{at}.{req} is required");
    }
}

#[test]
fn schema_describes_the_config() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let schema: Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("experiment_config.schema.json")).unwrap()).unwrap();
    let doc: Value = serde_json::from_str(&ExperimentConfig::table1().to_json()).unwrap();
    check_against_schema(&doc, &schema, &schema["$defs"], "config");
}

#[test]
fn same_seed_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let (a, b, c) = (dir.path().join("a.qtt"), dir.path().join("b.qtt"), dir.path().join("c.qtt"));
    simulate(&cfg, &a, "9", false);
    simulate(&cfg, &b, "9", false);
    simulate(&cfg, &c, "10", false);
    let (a, b, c) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap(), std::fs::read(c).unwrap());
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn missing_config_is_a_usage_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.qtt");
    let o = qmem(&["simulate", "--config", s(&dir.path().join("nope.json")), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.json"));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg: Value = serde_json::from_str(&ExperimentConfig::table1().to_json()).unwrap();
    cfg["calibration"]["eta_apd_sig"] = serde_json::json!(1.5);
    let path = dir.path().join("bad.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let o = qmem(&["simulate", "--config", s(&path), "--out", s(&dir.path().join("x.qtt"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("eta_apd_sig"));
}

#[test]
fn bad_flags_exit_two() {
    assert_eq!(code(&qmem(&["threshold", "--mu", "1", "--eta", "1.5"])), 2);
    assert_eq!(code(&qmem(&["threshold", "--mu", "-1", "--eta", "0.5"])), 2);
    assert_eq!(code(&qmem(&["threshold", "--eta", "0.5", "--sweep", "1:0.1:5"])), 2);
    assert_eq!(code(&qmem(&["no-such-command"])), 2);
    let three = ["analyze", "--tags", "t.qtt", "--noise-counts", "1", "--config", "c.json", "--windows", "-40,40,110"];
    assert_eq!(code(&qmem(&three)), 2);
}

#[test]
fn corrupt_tag_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let tags = dir.path().join("junk.qtt");
    std::fs::write(&tags, b"not a tag file at all, definitely not").unwrap();
    let o = qmem(&["analyze", "--tags", s(&tags), "--noise-counts", "10", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&o), 3);
}

#[test]
fn analyze_echoes_window_override_and_hashes_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let (sig, vac) = (dir.path().join("s.qtt"), dir.path().join("v.qtt"));
    simulate(&cfg, &sig, "1", false);
    simulate(&cfg, &vac, "2", true);
    let out = dir.path().join("an");
    let o = qmem(&[
        "analyze", "--tags", s(&sig), "--vacuum", s(&vac), "--config", s(&cfg), "--out", s(&out),
        "--windows", "-30,30,100,150",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(doc["windows_source"], "override");
    assert_eq!(doc["windows"]["signal"]["start_ns"], 100.0);
    assert_eq!(doc["windows"]["monitor"]["end_ns"], 30.0);
    assert_eq!(doc["inputs"]["tags"]["sha256"].as_str().unwrap().len(), 64);
    for f in ["histogram_monitor.csv", "histogram_signal.csv", "histogram_vacuum.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    // the printed document is the metrics section
    let printed: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(printed, doc["metrics"]);
}

#[test]
fn overlapping_window_override_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let sig = dir.path().join("s.qtt");
    simulate(&cfg, &sig, "1", false);
    let o = qmem(&[
        "analyze", "--tags", s(&sig), "--noise-counts", "5", "--config", s(&cfg), "--out", s(dir.path()),
        "--windows", "-30,120,100,150",
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("overlap"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn vacuum_as_signal_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let vac = dir.path().join("v.qtt");
    simulate(&cfg, &vac, "3", true);
    let o = qmem(&["analyze", "--tags", s(&vac), "--vacuum", s(&vac), "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(m["flags"].as_array().unwrap().iter().any(|f| f == "vacuum_input"), "{m}");
    assert!(m["fidelity"].is_null());
}

#[test]
fn adev_of_constant_series_is_zero_and_normalize_divides_by_mean() {
    let dir = tempfile::tempdir().unwrap();
    let flat = dir.path().join("flat.csv");
    let mut text = String::from("timestamp,value\n");
    for i in 0..32 {
        text.push_str(&format!("{},{}\n", i as f64 * 2.0, 0.05));
    }
    std::fs::write(&flat, text).unwrap();
    let o = qmem(&["adev", "--series", s(&flat), "--tau0-s", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8(o.stdout).unwrap();
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("tau_s,adev,ci_low,ci_high"));
    for line in lines {
        assert_eq!(line.split(',').nth(1), Some("0"), "{line}");
    }

    let ramp = dir.path().join("ramp.csv");
    let mut text = String::from("timestamp,value\n");
    for i in 0..32 {
        text.push_str(&format!("{},{}\n", i, 10.0 + (i % 3) as f64));
    }
    std::fs::write(&ramp, text).unwrap();
    let first = |extra: &[&str]| {
        let mut args = vec!["adev", "--series", s(&ramp), "--tau0-s", "1"];
        args.extend_from_slice(extra);
        let o = qmem(&args);
        let out = String::from_utf8(o.stdout).unwrap();
        out.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse::<f64>().unwrap()
    };
    let mean = (0..32).map(|i| 10.0 + (i % 3) as f64).sum::<f64>() / 32.0;
    let (abs, frac) = (first(&[]), first(&["--normalize"]));
    assert!((frac - abs / mean).abs() < 1e-12 * abs, "{abs} {frac}");
}

#[test]
fn adev_gap_is_rejected_unless_interpolated() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gappy.csv");
    let mut text = String::from("timestamp,value\n");
    for i in 0..20 {
        if i == 7 {
            text.push_str("7,\n");
        } else {
            text.push_str(&format!("{i},{}\n", (i as f64).sin()));
        }
    }
    std::fs::write(&path, text).unwrap();
    assert_eq!(code(&qmem(&["adev", "--series", s(&path), "--tau0-s", "1"])), 3);
    assert_eq!(code(&qmem(&["adev", "--series", s(&path), "--tau0-s", "1", "--interpolate-gaps"])), 0);
}

#[test]
fn fit_lifetime_needs_three_points() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scan.csv");
    std::fs::write(&path, "x,y\n0.1,0.05\n1.0,0.03\n").unwrap();
    let o = qmem(&["fit-lifetime", "--points", s(&path)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("3 points required"));
}

#[test]
fn fit_lifetime_recovers_exact_decay() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scan.csv");
    let mut text = String::from("x,y\n");
    for i in 0..10 {
        let x = 0.5 * i as f64;
        text.push_str(&format!("{x},{}\n", 0.054 * (-x / 2.4).exp()));
    }
    std::fs::write(&path, text).unwrap();
    let out = dir.path().join("fit.json");
    assert_eq!(code(&qmem(&["fit-lifetime", "--points", s(&path), "--out", s(&out)])), 0);
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert!((doc["fit"]["tau"].as_f64().unwrap() - 2.4).abs() < 1e-9);
    assert_eq!(doc["weighting"], "unit");
}

#[test]
fn threshold_strata_table_sums_to_budget() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("strata.csv");
    let o = qmem(&["threshold", "--mu", "1", "--eta", "0.052", "--strata-csv", s(&csv)]);
    assert_eq!(code(&o), 0);
    let doc: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((doc["f_class"].as_f64().unwrap() - 0.81408).abs() < 1e-5);
    let text = std::fs::read_to_string(csv).unwrap();
    let accepted: f64 = text.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().parse::<f64>().unwrap()).sum();
    assert!((accepted - 0.052).abs() < 1e-12);
}

#[test]
fn campaign_round_trip_in_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    for (name, extra) in [("tags", vec![]), ("counts", vec!["--counts-only"])] {
        let camp = dir.path().join(name);
        let mut args = vec!["simulate", "--config", s(&cfg), "--out", s(&camp), "--campaign", "10", "--seed", "4"];
        args.extend(extra);
        let o = qmem(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let o = qmem(&["report", "--campaign-dir", s(&camp)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let summary: Value =
            serde_json::from_str(&std::fs::read_to_string(camp.join("report/summary.json")).unwrap()).unwrap();
        assert_eq!(summary["n_points"], 10, "{name}");
        assert_eq!(summary["adev"]["eta_e2e"]["available"], true, "{name}");
        let rows = std::fs::read_to_string(camp.join("report/campaign.csv")).unwrap();
        assert_eq!(rows.lines().count(), 11, "{name}");
        assert!(rows.starts_with("timestamp,mu_in,eta_e2e,snr,mu_1,F,F_class\n"));
    }
}

#[test]
fn report_without_manifest_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = qmem(&["report", "--campaign-dir", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("manifest.json"));
}
