use std::fs;

use graphla::pipeline::{run, sweep, sweep_rows, ExperimentConfig, SweepSpec, METRICS_HEADER, SWEEP_HEADER};
use graphla::{ImageGrid, Reconstructor, Sinogram};

fn desk_in(dir: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        output_dir: dir.to_path_buf(),
        ..ExperimentConfig::desk()
    }
}

#[test]
fn run_writes_a_complete_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let c = desk_in(&tmp.path().join("run"));
    let s = run(&c).unwrap();
    for f in [
        "config.json",
        "x_gt.pgm",
        "sinogram_clean.bin",
        "sinogram_clean.bin.json",
        "sinogram_noisy.bin",
        "sinogram_noisy.bin.json",
        "psi.pgm",
        "psi.f64",
        "graphla.pgm",
        "graphla.f64",
        "metrics.csv",
        "solver_trace.csv",
        "summary.json",
    ] {
        assert!(s.dir.join(f).is_file(), "missing {f}");
    }
    let metrics = fs::read_to_string(s.dir.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert!(lines[1].starts_with("fbp,"));
    assert!(lines[2].starts_with("graphla+fbp,"));
    assert_eq!(lines.len(), 3);
    let back = ExperimentConfig::load(&s.dir.join("config.json")).unwrap();
    assert_eq!(back, c);
    let noisy = Sinogram::load(&s.dir.join("sinogram_noisy.bin")).unwrap();
    assert_eq!(noisy, s.noisy);
    assert_eq!(ImageGrid::load(&s.dir.join("graphla.f64")).unwrap(), s.outcome.graphla);
    let trace = fs::read_to_string(s.dir.join("solver_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), s.outcome.state.iterations() + 1);
}

#[test]
fn identical_configs_give_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let a = run(&desk_in(&tmp.path().join("a"))).unwrap();
    let b = run(&desk_in(&tmp.path().join("b"))).unwrap();
    let read = |d: &std::path::Path| fs::read(d.join("metrics.csv")).unwrap();
    assert_eq!(read(&a.dir), read(&b.dir));
    assert_eq!(fs::read(a.dir.join("graphla.f64")).unwrap(), fs::read(b.dir.join("graphla.f64")).unwrap());
}

#[test]
fn zero_noise_falls_back_to_fixed_alpha() {
    let tmp = tempfile::tempdir().unwrap();
    let c = ExperimentConfig {
        delta: 0.0,
        psi: Reconstructor::tikhonov_discrepancy(),
        ..desk_in(tmp.path())
    };
    let s = run(&c).unwrap();
    let clean = Sinogram::load(&s.dir.join("sinogram_clean.bin")).unwrap();
    assert_eq!(s.noisy.values, clean.values);
    assert_eq!(s.noisy.noise_norm, 0.0);
    assert_eq!(s.outcome.state.final_alpha(), c.fallback_alpha);
    assert!(s.outcome.graphla_metrics.psnr > s.outcome.psi_metrics.psnr);
}

#[test]
fn single_delta_sweep_matches_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = desk_in(&tmp.path().join("sweep"));
    let s = run(&ExperimentConfig {
        output_dir: tmp.path().join("run"),
        ..c.clone()
    })
    .unwrap();
    c.sweep = Some(SweepSpec {
        deltas: vec![c.delta],
        psis: vec![],
    });
    let path = sweep(&c).unwrap();
    let text = fs::read_to_string(path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], SWEEP_HEADER);
    let metrics = fs::read_to_string(s.dir.join("metrics.csv")).unwrap();
    for (sw, run_line) in lines[1..].iter().zip(metrics.lines().skip(1)) {
        assert_eq!(*sw, format!("{},{run_line}", c.delta));
    }
    assert_eq!(lines.len(), 3);
}

#[test]
fn noise_sweep_orderings() {
    let c = ExperimentConfig {
        sweep: Some(SweepSpec {
            deltas: vec![0.0025, 0.005, 0.01, 0.02, 0.04],
            psis: vec![Reconstructor::fbp(), Reconstructor::tikhonov_discrepancy(), Reconstructor::GroundTruth],
        }),
        ..ExperimentConfig::desk()
    };
    let rows = sweep_rows(&c).unwrap();
    assert_eq!(rows.len(), 5 * 3 * 2);
    let psnr = |delta: f64, method: &str| {
        rows.iter().find(|r| r.delta == delta && r.method == method).unwrap().metrics.psnr
    };
    for &delta in &c.sweep.as_ref().unwrap().deltas {
        for psi in ["fbp", "tikhonov"] {
            let (a, b) = (psnr(delta, psi), psnr(delta, &format!("graphla+{psi}")));
            assert!(b >= a, "delta {delta} {psi}: {b} < {a}");
        }
        let (gt, f) = (psnr(delta, "graphla+x_gt"), psnr(delta, "graphla+fbp"));
        assert!(gt >= f, "delta {delta}: graphla+x_gt {gt} < graphla+fbp {f}");
    }
}

#[test]
fn missing_inputs_fail_before_any_work() {
    let tmp = tempfile::tempdir().unwrap();
    let c = ExperimentConfig {
        psi: Reconstructor::ExternalFile {
            path: tmp.path().join("absent.pgm"),
        },
        ..desk_in(&tmp.path().join("out"))
    };
    assert!(run(&c).is_err());
    assert!(!tmp.path().join("out").exists());
}
