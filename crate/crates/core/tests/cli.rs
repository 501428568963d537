use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_fsmdi");

fn table1() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/table1.cfg")
}

fn small_config(dir: &Path) -> PathBuf {
    let text = fs::read_to_string(table1())
        .unwrap()
        .replace("n_pulses = 1e12", "n_pulses = 1e14")
        .replace("max_evals = 2000", "max_evals = 200")
        .replace("restarts = 7", "restarts = 0")
        .replace("slots = 100000", "slots = 2000");
    let path = dir.join("run.cfg");
    fs::write(&path, text).unwrap();
    path
}

fn fsmdi(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn error_kind(out: &Output) -> String {
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    let line = stderr.lines().last().unwrap();
    let v: serde_json::Value = serde_json::from_str(line).unwrap();
    v["error"]["kind"].as_str().unwrap().to_string()
}

#[test]
fn keyrate_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = table1();
    let out = fsmdi(&["--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "keyrate"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("keyrate.json")).unwrap()).unwrap();
    for key in ["rate_per_pulse", "s11_lower", "e11ph_upper", "qber_zz", "qber_xx"] {
        assert!(v[key].is_number(), "{key}");
    }
}

#[test]
fn bad_configs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    let text = fs::read_to_string(table1()).unwrap().replace("p_z = 0.498", "p_z = 0.6");
    fs::write(&bad, text).unwrap();
    let missing = dir.path().join("missing.cfg");
    let empty = dir.path().join("empty.cfg");
    fs::write(&empty, "").unwrap();
    for p in [&bad, &missing, &empty] {
        let out = fsmdi(&["--config", p.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "keyrate"]);
        assert_eq!(out.status.code(), Some(2));
        assert_eq!(error_kind(&out), "config");
    }
}

#[test]
fn unwritable_output_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let cfg = table1();
    let out = fsmdi(&["--config", cfg.to_str().unwrap(), "--out", blocker.join("sub").to_str().unwrap(), "keyrate"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(String::from_utf8(out.stderr).unwrap().trim().lines().count(), 1);
}

fn simulate(cfg: &Path, out: &Path, seed: Option<&str>) -> Vec<u8> {
    let mut args = vec!["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--csv"];
    if let Some(s) = seed {
        args.extend(["--seed", s]);
    }
    args.push("simulate");
    let o = fsmdi(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mut bytes = fs::read(out.join("fading.csv")).unwrap();
    bytes.extend(fs::read(out.join("postselect.csv")).unwrap());
    bytes
}

#[test]
fn simulate_is_reproducible_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = simulate(&cfg, &dir.path().join("a"), None);
    let b = simulate(&cfg, &dir.path().join("b"), None);
    let c = simulate(&cfg, &dir.path().join("c"), Some("99"));
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(!dir.path().join("a/simulate.json").exists());
}

#[test]
fn optimize_reports_published_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = fsmdi(&["--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--json", "optimize", "--compare-table1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("optimize.json")).unwrap()).unwrap();
    let rate = v["rate_per_pulse"].as_f64().unwrap();
    let t1 = v["table1_rate_per_pulse"].as_f64().unwrap();
    assert!(t1 > 0.0 && rate >= t1, "{rate} vs {t1}");
}
