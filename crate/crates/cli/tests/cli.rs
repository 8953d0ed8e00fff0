use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rampsim(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rampsim"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("RAMPSIM_OUT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn lists_presets() {
    let dir = tempfile::tempdir().unwrap();
    let o = rampsim(dir.path(), &["presets"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("greedy_vf") && text.contains("compare_drr"));
    assert!(text.contains("region case: renewal_slow_ramp2"));
}

#[test]
fn region_case_writes_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let o = rampsim(dir.path(), &["region", "--case", "fixed_cycle_all_vf"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let region = fs::read_to_string(dir.path().join("region/region.csv")).unwrap();
    assert_eq!(region.lines().count(), 3, "{region}");
    let boundary = fs::read_to_string(dir.path().join("region/boundary.csv")).unwrap();
    assert_eq!(boundary.lines().count(), 102);
}

#[test]
fn region_from_merge_speeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = rampsim(dir.path(), &["region", "--merge-speeds", "15,5,15", "--kind", "inner-renewal", "--fix", "3=0.5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("1.6*lambda1 + 1*lambda2 < 1"), "{}", stdout(&o));
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["simulate", "--preset", "greedy_low", "--horizon", "2000", "--seed", "9"];
    let mut sums = Vec::new();
    for sub in ["a", "b"] {
        let out = dir.path().join(sub);
        let o = rampsim(&out, &args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let run = out.join("greedy_low");
        assert!(run.join("queues.csv").exists());
        assert!(run.join("manifest.toml").exists());
        sums.push(fs::read_to_string(run.join("checksum.sha256")).unwrap());
    }
    assert_eq!(sums[0], sums[1]);
    assert_eq!(sums[0].trim().len(), 64);
}

#[test]
fn manifest_runs_as_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let o = rampsim(dir.path(), &["simulate", "--preset", "cycle_sweep_low", "--horizon", "0"]);
    assert!(o.status.success());
    let manifest = dir.path().join("cycle_sweep_low/manifest.toml");
    assert!(!dir.path().join("cycle_sweep_low/checksum.sha256").exists());
    let o = rampsim(dir.path(), &["simulate", manifest.to_str().unwrap(), "--horizon", "300"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("300 steps"));
}

#[test]
fn short_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let o = rampsim(dir.path(), &["sweep", "--param", "T_cyc=1,13", "--replications", "1", "--horizon", "30000"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("sweep/summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("T_cyc,verdict"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| rampsim(dir.path(), args).status.code();
    assert_eq!(code(&["simulate", "--preset", "no_such_preset"]), Some(2));
    assert_eq!(code(&["simulate"]), Some(2));
    assert_eq!(code(&["region", "--fix", "7=0.5"]), Some(2));
    assert_eq!(code(&["sweep", "--param", "T_per=1..3"]), Some(2));
    assert_eq!(code(&["simulate", "/nonexistent/scenario.toml"]), Some(3));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "name = 3\n").unwrap();
    assert_eq!(code(&["simulate", bad.to_str().unwrap()]), Some(2));
}
