use std::path::Path;
use std::process::{Command, Output};

fn terrapos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_terrapos")).args(args).output().expect("spawn terrapos")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn range_is_reproducible_for_fixed_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = terrapos(&["range", "--seed", "7", "--out", d.path().to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["ranges.csv", "range_diagnostics.csv"] {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f}");
    }
    let ranges = String::from_utf8(read(&a.path().join("ranges.csv"))).unwrap();
    assert_eq!(ranges.lines().next().unwrap(), "trp_id,state,true_m,d_m,error_m");
    assert_eq!(ranges.lines().count(), 4);
}

#[test]
fn range_forced_los_is_centimeter_accurate() {
    let o = terrapos(&["range", "--state", "los", "--seed", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for row in stdout(&o).lines().skip(1) {
        let err: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert!(err.abs() < 0.5, "{row}");
    }
}

#[test]
fn evaluate_identical_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.csv");
    let mut csv = String::from("t,px,py,pz,qw,qx,qy,qz\n");
    for k in 0..5 {
        csv.push_str(&format!("{k}.0,{},{},1.5,1,0,0,0\n", k as f64 * 2.0, k as f64));
    }
    std::fs::write(&p, csv).unwrap();
    let path = p.to_str().unwrap();
    let o = terrapos(&["evaluate", "--est", path, "--gt", path]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.lines().any(|l| l == "ate_m 0.0"), "{out}");
    assert!(out.lines().any(|l| l == "rpe_trans_m 0.0"), "{out}");
}

#[test]
fn evaluate_rejects_missing_file() {
    let o = terrapos(&["evaluate", "--est", "/nonexistent/a.csv", "--gt", "/nonexistent/b.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error:"));
}

#[test]
fn localize_with_two_trps_reports_invalid_fix() {
    let o = terrapos(&["localize", "--state", "los", "--trps", "TRP-1,TRP-2", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("invalid fix"), "{}", stderr(&o));
    let rows: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(rows[0], "t,valid,x,y,z,residual,n_trps,excluded_ids");
    assert_eq!(rows[1].split(',').nth(1), Some("0"));
}

#[test]
fn localize_three_los_trps_is_valid() {
    let o = terrapos(&["localize", "--state", "los", "--epochs", "3", "--seed", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.split(',').nth(1) == Some("1")), "{out}");
}

#[test]
fn unknown_trp_is_a_usage_error() {
    let o = terrapos(&["localize", "--trps", "TRP-9"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(terrapos(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(terrapos(&["study", "ranging"]).status.code(), Some(1));
    assert_eq!(terrapos(&["localize", "--state", "los", "--los-prob", "0.5"]).status.code(), Some(1));
    assert_eq!(terrapos(&["localize", "--filter", "model"]).status.code(), Some(1));
}

#[test]
fn version_and_help_exit_zero() {
    let v = terrapos(&["--version"]);
    assert!(v.status.success());
    assert!(stdout(&v).starts_with("terrapos "), "{}", stdout(&v));
    assert!(terrapos(&["--help"]).status.success());
}

#[test]
fn study_writes_manifest_and_headers() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = terrapos(&["study", "ranging", "--iterations", "5", "--seed", "2", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let study = dir.path().join("ranging");
    let manifest = String::from_utf8(read(&study.join("manifest.txt"))).unwrap();
    assert!(manifest.contains("seed 2"), "{manifest}");
    let ranges = String::from_utf8(read(&study.join("ranges.csv"))).unwrap();
    assert!(ranges.starts_with("# config_hash "));
}

#[test]
fn simulated_drive_fuses_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = terrapos(&[
        "simulate", "--kind", "drive", "--preset", "umi-compact", "--duration", "20", "--seed", "5", "--out",
        d.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let p = |f: &str| d.join(f).to_str().unwrap().to_string();
    let fused = d.join("fused");
    let o = terrapos(&[
        "fuse", "--imu", &p("imu.csv"), "--meas", &p("vo.csv"), "--meas", &p("cpp.csv"), "--gt", &p("truth.csv"),
        "--out", fused.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = String::from_utf8(read(&fused.join("fuse_report.txt"))).unwrap();
    let ate: f64 = report.lines().find_map(|l| l.strip_prefix("ate_m ")).unwrap().parse().unwrap();
    assert!(ate.is_finite() && ate < 5.0, "{report}");
}
