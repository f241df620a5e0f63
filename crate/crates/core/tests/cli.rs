use std::path::Path;
use std::process::{Command, Output};

use semifragile::image::{load_pgm, save_pgm};
use semifragile::GrayImage;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semifragile"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn host(w: usize, h: usize) -> GrayImage {
    GrayImage::from_fn(w, h, |x, y| (96.0 + 60.0 * ((x as f64) / 9.0).sin() * ((y as f64) / 7.0).cos()) as u8)
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    save_pgm(&host(128, 128), dir.path().join("a.pgm")).unwrap();
    save_pgm(&host(80, 64), dir.path().join("odd.pgm")).unwrap();
    dir
}

#[test]
fn embed_succeeds_and_writes_output() {
    let dir = setup();
    let out = run(dir.path(), &["embed", "--in", "a.pgm", "--out", "b.pgm", "--key", "7"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let wm = load_pgm(dir.path().join("b.pgm")).unwrap();
    assert_eq!((wm.width(), wm.height()), (128, 128));
}

#[test]
fn missing_key_is_a_usage_error() {
    let dir = setup();
    let out = run(dir.path(), &["embed", "--in", "a.pgm", "--out", "b.pgm"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--key"), "{err}");
    assert!(err.contains("Usage"), "{err}");
    assert!(!dir.path().join("b.pgm").exists());
}

#[test]
fn usage_errors_exit_one() {
    let dir = setup();
    for args in [
        vec!["embed", "--in", "a.pgm", "--out", "b.pgm", "--key", "seven"],
        vec!["embed", "--in", "a.pgm", "--out", "b.pgm", "--key", "7", "--bogus"],
        vec!["attack", "--in", "a.pgm", "--out", "b.pgm"],
        vec!["attack", "--in", "a.pgm", "--out", "b.pgm", "--jpeg", "0"],
        vec!["frobnicate"],
        vec![],
    ] {
        let out = run(dir.path(), &args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(out.stdout.is_empty(), "{args:?}");
    }
}

#[test]
fn help_and_version_exit_zero() {
    let dir = setup();
    for args in [vec!["--help"], vec!["--version"], vec!["detect", "--help"]] {
        assert_eq!(run(dir.path(), &args).status.code(), Some(0), "{args:?}");
    }
}

#[test]
fn bad_dimensions_are_a_pipeline_error() {
    let dir = setup();
    let out = run(dir.path(), &["embed", "--in", "odd.pgm", "--out", "b.pgm", "--key", "7"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("multiples of 64"), "{err}");
}

#[test]
fn pipeline_errors_exit_two() {
    let dir = setup();
    for args in [
        vec!["embed", "--in", "missing.pgm", "--out", "b.pgm", "--key", "7"],
        vec!["embed", "--in", "a.pgm", "--out", "b.pgm", "--key", "7", "--step", "1"],
        vec!["attack", "--in", "a.pgm", "--out", "b.pgm", "--erase", "0,0,200,10,0"],
        vec!["attack", "--in", "a.pgm", "--out", "b.pgm", "--erase", "1,2,3"],
        vec!["evaluate", "--spec", "nope.json", "--out", "c.json"],
    ] {
        let out = run(dir.path(), &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    }
}

#[test]
fn attack_detect_recover_round() {
    let dir = setup();
    let p = dir.path();
    assert!(run(p, &["embed", "--in", "a.pgm", "--out", "wm.pgm", "--key", "0x2a", "--report", "e.json"]).status.success());
    let erase = ["attack", "--in", "wm.pgm", "--out", "t.pgm", "--erase", "32,32,32,32,0", "--truth", "truth.pgm"];
    assert!(run(p, &erase).status.success());
    let det = ["detect", "--in", "t.pgm", "--key", "42", "--mask", "m.pgm", "--report", "d.json", "--truth", "truth.pgm"];
    assert!(run(p, &det).status.success());
    let rec = ["recover", "--in", "t.pgm", "--key", "42", "--out", "r.pgm", "--report", "r.json"];
    assert!(run(p, &rec).status.success());

    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(p.join("d.json")).unwrap()).unwrap();
    assert_eq!(report["blocks"].as_array().unwrap().len(), 64);
    assert_eq!(report["score"]["fr"].as_f64(), Some(0.0));
    let truth = load_pgm(p.join("truth.pgm")).unwrap();
    assert_eq!(truth.data().iter().filter(|&&v| v == 255).count(), 4 * 256);
    let mask = load_pgm(p.join("m.pgm")).unwrap();
    assert!(mask.data().iter().all(|&v| v == 0 || v == 128 || v == 255));

    let embed: serde_json::Value = serde_json::from_slice(&std::fs::read(p.join("e.json")).unwrap()).unwrap();
    assert_eq!(embed["residual_bit_errors"].as_u64(), Some(0));
    assert_eq!(embed["key"].as_u64(), Some(42));
}

#[test]
fn inspect_reports_texture_and_topology() {
    let dir = setup();
    let out = run(dir.path(), &["inspect", "--in", "a.pgm", "--key", "5", "--out", "i.json"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("i.json")).unwrap()).unwrap();
    assert_eq!(v["texture"]["blocks"].as_array().unwrap().len(), 64);
    assert_eq!(v["topology"].as_array().unwrap().len(), 64);
    let first = &v["topology"][0];
    assert_eq!(first["positions"].as_array().unwrap().len(), 63);
    assert!(["smooth", "normal", "rough"].contains(&v["texture"]["blocks"][0]["type"].as_str().unwrap()));
}
