use serde_json::Value;
use std::process::{Command, Output};

fn prime_race(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prime-race"))
        .args(args)
        .env_remove("PRIME_RACE_CACHE")
        .output()
        .expect("binary runs")
}

fn json(args: &[&str]) -> Value {
    let out = prime_race(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("valid JSON")
}

#[test]
fn all_orders_sum_to_one() {
    let v = json(&["density", "--q", "101", "--tuple", "2,5,11", "--method", "theorem1", "--all-orders"]);
    assert_eq!(v["result"]["reports"].as_array().unwrap().len(), 6);
    assert!((v["result"]["sum"].as_f64().unwrap() - 1.0).abs() < 1e-10);
    assert_eq!(v["params"]["tuple"], serde_json::json!([2, 5, 11]));
}

#[test]
fn two_way_mod_four_favours_non_squares() {
    let v = json(&["density", "--q", "4", "--tuple", "3,1", "--method", "two-way"]);
    assert!(v["result"]["delta"].as_f64().unwrap() > 0.5);
}

#[test]
fn surrogate_is_reproducible() {
    let args = ["density", "--q", "101", "--tuple", "2,5,11", "--method", "surrogate", "--samples", "1e7", "--seed", "7"];
    let a = prime_race(&args);
    let b = prime_race(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert!(v["result"]["std_error"].as_f64().unwrap() > 0.0);
    assert_eq!(v["result"]["seed"], 7);
    assert_eq!(v["params"]["samples"], 10_000_000u64);
}

#[test]
fn pair_average_within_log_bounds() {
    let v = json(&["avg-bq", "--q", "211"]);
    let ratio = v["result"]["mean_abs_over_log_q"].as_f64().unwrap();
    assert!((0.5..=12.0).contains(&ratio), "{ratio}");
}

#[test]
fn simplex_three_way_table() {
    let v = json(&["simplex", "--r", "3"]);
    let alpha = &v["result"]["table"]["alpha"];
    let expected = 1.0 / (4.0 * std::f64::consts::PI.sqrt());
    assert!((alpha[0].as_f64().unwrap() - expected).abs() < 1e-12);
    assert!(alpha[1].as_f64().unwrap().abs() < 1e-12);
    let out = prime_race(&["simplex", "--r", "3", "--format", "csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("coefficient,j,k,value,error\nalpha,1,,"));
    assert_eq!(text.lines().count(), 1 + 3 + 3 + 3);
}

#[test]
fn construction_mod_101() {
    let v = json(&["construct", "--q", "101", "--r", "3", "--variant", "mixed-thm2"]);
    let entries = v["result"]["construction"]["tuple"]["entries"].as_array().unwrap();
    let values: Vec<u64> = entries.iter().map(|e| e["value"].as_u64().unwrap()).collect();
    assert_eq!(values, vec![1, 24, 100]);
    assert!(v["result"]["deviation"].as_f64().unwrap() > 0.0);
    assert!(v["result"]["swapped_deviation"].as_f64().unwrap() < 0.0);
}

#[test]
fn classify_reports_witness() {
    let v = json(&["classify", "--q", "10007", "--tuple", "1,2,5"]);
    assert_eq!(v["result"]["verdict"]["classification"], "q-extreme-predicted");
    let v = json(&["classify", "--q", "10007", "--tuple", "1,6,10"]);
    assert_eq!(v["result"]["verdict"]["classification"], "biased");
    assert!(v["result"]["witness"].is_null());
}

#[test]
fn calibration_is_echoed_and_overridable() {
    let v = json(&["nq", "--q", "12", "--tau", "0.05"]);
    assert_eq!(v["calibration"]["tau"], 0.05);
    assert_eq!(v["calibration"]["cross_route_c0"], 12.0);
    assert_eq!(v["schema_version"], 1);
    let out = prime_race(&["nq", "--q", "12", "--tau", "-1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let out = prime_race(&["density", "--q", "4", "--tuple", "1,5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("coincide"));
    let out = prime_race(&["nq", "--q", "12", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(2));
    let out = prime_race(&["density", "--q", "101"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn race_report_and_trace_files() {
    let dir = std::env::temp_dir().join(format!("prime-race-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let trace = dir.join("t.bin");
    let csv = dir.join("t.csv");
    let args = |x: &'static str| {
        vec![
            "race".to_string(), "--q".into(), "4".into(), "--classes".into(), "3,1".into(), "--x".into(), x.into(),
            "--trace".into(), trace.display().to_string(), "--csv".into(), csv.display().to_string(),
        ]
    };
    let first = prime_race(&args("1e5").iter().map(String::as_str).collect::<Vec<_>>());
    assert!(first.status.success());
    let out = prime_race(&args("1e6").iter().map(String::as_str).collect::<Vec<_>>());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let orderings = v["result"]["orderings"].as_array().unwrap();
    let total: f64 = orderings.iter().map(|o| o["strict_measure"].as_f64().unwrap()).sum::<f64>()
        + v["result"]["tie_measure"].as_f64().unwrap();
    assert!((total - 1.0).abs() < 1e-12);
    let last = v["result"]["checkpoints"].as_array().unwrap().last().unwrap().clone();
    assert_eq!(last["x"], 1_000_000);
    assert_eq!(last["pi"], 78_498);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("x,count_3,count_1\n"));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn character_route_uses_cache_directory() {
    let dir = std::env::temp_dir().join(format!("prime-race-cache-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let run = || {
        Command::new(env!("CARGO_BIN_EXE_prime-race"))
            .args(["bq", "--q", "12", "--a", "5", "--b", "7", "--route", "character"])
            .env("PRIME_RACE_CACHE", &dir)
            .output()
            .unwrap()
    };
    let a = run();
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert!(std::fs::read_dir(&dir).unwrap().count() > 0);
    let b = run();
    assert_eq!(a.stdout, b.stdout);
    std::fs::remove_dir_all(&dir).unwrap();
}
