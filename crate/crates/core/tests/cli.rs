use std::path::Path;
use std::process::{Command, Output};

fn mec_ce(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mec-ce")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_default_scenario_succeeds() {
    let out = mec_ce(&["solve", "--seed", "4"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["results"][0]["status"], "ok");
    assert!(v["results"][0]["solution"]["report"]["weighted_sum_ce"].as_f64().unwrap() > 0.0);
}

#[test]
fn unknown_field_reports_its_name_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("bad.toml");
    std::fs::write(&f, "seed = 3\n\n[system]\nbandwith = \"1 MHz\"\n").unwrap();
    let out = mec_ce(&["solve", "--scenario", path(&f)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bandwith"), "{err}");
    assert!(err.contains("line 4"), "{err}");
}

#[test]
fn unreachable_rate_is_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("hard.toml");
    std::fs::write(&f, "[user_defaults]\nmin_bits_rate = \"1 Tbit/s\"\n").unwrap();
    let out = mec_ce(&["solve", "--scenario", path(&f)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn generated_scenario_solves_identically_twice() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("gen.toml");
    let gen = mec_ce(&["gen-scenario", "--seed", "9", "--users", "3", "--subchannels", "4", "--out", path(&f)]);
    assert_eq!(gen.status.code(), Some(0));
    let from_file = mec_ce(&["solve", "--scenario", path(&f)]);
    assert_eq!(from_file.status.code(), Some(0));
    let again = mec_ce(&["solve", "--scenario", path(&f)]);
    assert_eq!(from_file.stdout, again.stdout);
}

#[test]
fn verify_small_instance_within_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("small.toml");
    std::fs::write(&f, "num_users = 2\n[system]\nnum_subchannels = 2\n").unwrap();
    let out = mec_ce(&["verify", "--scenario", path(&f), "--grid", "100"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("gap"));
}

#[test]
fn sweep_writes_every_curve() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("pth.csv");
    let out = mec_ce(&["sweep", "--param", "pth", "--from", "100mW", "--to", "2W", "--steps", "3", "--out", path(&f)]);
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(&f).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("param,value,scheme"));
    assert_eq!(lines.len(), 1 + 3 * 6);
}

#[test]
fn bad_steps_is_a_config_error() {
    let out = mec_ce(&["sweep", "--param", "pth", "--steps", "1"]);
    assert_eq!(out.status.code(), Some(1));
}
