use std::path::Path;
use std::process::{Command, Output};

use graphla::ImageGrid;

fn graphla(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphla"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

const SMALL: [&str; 6] = ["--side", "24", "--angles", "16", "--radius", "2"];

fn small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    SMALL.iter().copied().chain(args.iter().copied()).collect()
}

#[test]
fn stepwise_commands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(&graphla(d, &small(&["phantom", "x.pgm"]))), 0);
    assert_eq!(code(&graphla(d, &small(&["project", "y.bin"]))), 0);
    assert!(d.join("y.bin.json").is_file());
    let o = graphla(d, &small(&["--delta", "0.02", "noise", "y.bin", "yn.bin"]));
    assert_eq!(code(&o), 0);
    let o = graphla(d, &small(&["reconstruct", "yn.bin", "f.pgm", "--ground-truth", "x.pgm"]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("fbp: rre="));
    let o = graphla(
        d,
        &small(&["graphla", "yn.bin", "g.png", "--ground-truth", "x.pgm", "--psi-out", "p.pgm", "--trace", "t.csv"]),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("graphla+fbp: rre="), "{out}");
    assert_eq!(ImageGrid::load(&d.join("g.png")).unwrap().shape(), (24, 24));
    assert!(d.join("p.pgm").is_file() && d.join("t.csv").is_file());
    // an external preliminary reconstruction goes through the same path
    let o = graphla(d, &small(&["--psi-file", "p.pgm", "graphla", "yn.bin", "g2.pgm"]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn config_file_with_overrides_runs_and_sweeps() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = graphla(d, &small(&["--deltas", "0.01,0.02", "config"]));
    assert_eq!(code(&o), 0);
    std::fs::write(d.join("c.json"), &o.stdout).unwrap();
    let o = graphla(d, &["--config", "c.json", "-o", "out", "--psi", "tikhonov", "run"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = std::fs::read_to_string(d.join("out/metrics.csv")).unwrap();
    assert!(metrics.contains("graphla+tikhonov,"));
    let o = graphla(d, &["--config", "c.json", "-o", "sw", "sweep"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let sweep = std::fs::read_to_string(d.join("sw/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 2 * 2);
}

#[test]
fn configuration_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("bad.json"), "{ not json").unwrap();
    for args in [
        vec!["--config", "bad.json", "run"],
        vec!["--config", "missing.json", "run"],
        vec!["--preset", "nope", "run"],
        vec!["--sigma=-1", "run"],
        vec!["--psi-file", "absent.pgm", "run"],
        vec!["reconstruct", "absent.bin", "x.pgm"],
        vec!["sweep"],
        vec!["--bogus-flag", "run"],
    ] {
        let o = graphla(d, &args);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn stage_failures_exit_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    // every pair of 8-neighbors differs by at least 1/8, so at sigma = 1e-3
    // all weights underflow and the graph has no edges left
    let side = 12;
    let data = (0..side * side).map(|k| ((3 * (k / side) + k % side) % 9) as f64 / 8.0).collect();
    ImageGrid::square(side, data).unwrap().save(&d.join("gt.pgm")).unwrap();
    let o = graphla(
        d,
        &["--side", "12", "--angles", "8", "--phantom-file", "gt.pgm", "--psi", "ground-truth", "--radius", "1", "--sigma", "1e-3", "-o", "r", "run"],
    );
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("graph"));
    // intermediate outputs are kept
    assert!(d.join("r/sinogram_noisy.bin").is_file());
}

#[test]
fn verify_prints_a_passing_report() {
    let tmp = tempfile::tempdir().unwrap();
    let o = graphla(tmp.path(), &["verify", "--samples", "5", "--out", "report.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["all_passed"], true);
    assert_eq!(report["checks"].as_array().unwrap().len(), 9);
}
