use std::path::PathBuf;
use std::process::{Command, Output};

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str], tag: &str) -> (Output, PathBuf) {
    let out = std::env::temp_dir().join(format!("ymglue_cli_{}_{tag}", std::process::id()));
    let o = Command::new(env!("CARGO_BIN_EXE_ymglue")).args(args).arg("--out").arg(&out).output().unwrap();
    (o, out)
}

#[test]
fn verify_default_passes_and_writes_report() {
    let (o, out) = run(&["verify"], "ok");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("verify.csv")).unwrap();
    assert!(text.starts_with("# "));
    assert!(text.contains("check,anchor,error,tol,pass"));
    assert!(!text.contains(",false"));
    std::fs::remove_dir_all(out).ok();
}

#[test]
fn flipped_bracket_fails_verification() {
    let cfg = configs().join("negative_bracket.toml");
    let (o, out) = run(&["verify", "--config", cfg.to_str().unwrap()], "neg");
    assert_eq!(o.status.code(), Some(1));
    let text = std::fs::read_to_string(out.join("verify.csv")).unwrap();
    assert!(text.lines().any(|l| l.starts_with("curvature_antiselfdual") && l.ends_with("false")));
    std::fs::remove_dir_all(out).ok();
}

#[test]
fn nonminimal_geometry_is_a_usage_error() {
    let cfg = configs().join("nonminimal.toml");
    let (o, out) = run(&["verify", "--config", cfg.to_str().unwrap()], "hm");
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("must be minimal"));
    std::fs::remove_dir_all(out).ok();
}

#[test]
fn short_sweep_list_is_rejected() {
    let dir = std::env::temp_dir().join(format!("ymglue_cli_cfg_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("short.toml");
    std::fs::write(&cfg, "[sweep]\neps = [0.1, 0.05]\n").unwrap();
    let (o, out) = run(&["sweep", "residual", "--config", cfg.to_str().unwrap()], "short");
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("at least 3"));
    std::fs::remove_dir_all(out).ok();
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn balance_sweep_writes_table_and_plot() {
    let cfg = configs().join("curved_balance.toml");
    let (o, out) = run(&["sweep", "balance", "--config", cfg.to_str().unwrap()], "bal");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("sweep_balance.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 4);
    let svg = std::fs::read_to_string(out.join("sweep_balance.svg")).unwrap();
    assert!(svg.contains("fitted slope"));
    std::fs::remove_dir_all(out).ok();
}
