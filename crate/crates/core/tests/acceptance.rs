//! Acceptance criteria, one line per criterion. Built with `harness = false`
//! so the report is printed by a plain `cargo test`.

mod common;

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use graphla::geometry::{add_noise, build_projector, ScanGeometry};
use graphla::graph::{build_graph, GraphParams};
use graphla::linalg::{dot, norm2, norm_inf};
use graphla::pipeline::{graphla_method, ExperimentConfig, PhantomSpec, Scene};
use graphla::solver::{gamma_inequality, solve, SolverOptions, SolverState, VariationalProblem};
use graphla::theory::{convergence_sweep, inversions, sample_laplacian_bound, stability_pair};
use graphla::{CsrMatrix, LinearOperator, PhantomKind, Reconstructor};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

/// Solver states collected from every solve for the monotonicity criterion.
type Solves = Vec<(String, SolverState)>;

fn adjoint() -> Outcome {
    let k = build_projector(&ScanGeometry::parallel(32, 20)).unwrap();
    let mut rng = common::rng(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let x = common::random_vec(&mut rng, k.cols());
        let s = common::random_vec(&mut rng, k.rows());
        let lhs = dot(&k.apply(&x), &s);
        let rhs = dot(&x, &k.apply_transpose(&s));
        worst = worst.max((lhs - rhs).abs() / (norm2(&x) * norm2(&s)));
    }
    outcome(worst <= 1e-10, format!("max |<Kx,s>-<x,K^Ts>|/(|x||s|) = {worst:.2e} over 100 pairs"))
}

fn laplacian_kernel() -> Outcome {
    let mut rng = common::rng(2);
    let mut worst_ones: f64 = 0.0;
    let mut min_second = f64::INFINITY;
    for (radius, sigma) in [(1, 0.5), (1, 1.0), (2, 0.5), (2, 1.0), (1, 0.1)] {
        for _ in 0..4 {
            let x = common::random_image(&mut rng, 8);
            let lap = build_graph(&x, &GraphParams::new(radius, sigma)).unwrap().laplacian();
            worst_ones = worst_ones.max(norm_inf(&lap.apply(&[1.0; 64])));
            let mut sv: Vec<f64> = lap.to_dense().svd(false, false).singular_values.iter().copied().collect();
            sv.sort_by(|a, b| a.partial_cmp(b).unwrap());
            min_second = min_second.min(sv[1]);
        }
    }
    outcome(
        worst_ones == 0.0 && min_second > 1e-12,
        format!("||L1||_inf = {worst_ones:e}, min second singular value = {min_second:.3e}"),
    )
}

fn pattern_invariance() -> Outcome {
    let mut rng = common::rng(3);
    let params = GraphParams::new(2, 0.1);
    let mut mismatches = 0;
    for _ in 0..20 {
        let a = build_graph(&common::random_image(&mut rng, 16), &params).unwrap();
        let b = build_graph(&common::random_image(&mut rng, 16), &params).unwrap();
        if a.pattern_hash() != b.pattern_hash() {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches} hash mismatches over 20 pairs"))
}

fn laplacian_difference_bound() -> Outcome {
    let mut violations = 0;
    let mut min_slack = f64::INFINITY;
    let mut settings = 0;
    for sigma in [0.5, 1.0] {
        for radius in [1, 2] {
            for side in [16, 32] {
                let s = sample_laplacian_bound(sigma, radius, side, 50, 4).unwrap();
                assert!(s.usable);
                violations += s.violations;
                min_slack = min_slack.min(s.min_relative_slack);
                settings += 1;
            }
        }
    }
    outcome(
        violations == 0,
        format!("{violations} violations in {settings}x50 samples, min relative slack {min_slack:.3}"),
    )
}

fn gamma_inequality_samples() -> Outcome {
    let k = build_projector(&ScanGeometry::parallel(16, 12)).unwrap();
    let x_gt = graphla::make_phantom(PhantomKind::Ellipses, 16, 5).unwrap();
    let y = k.project(&x_gt).unwrap();
    let params = GraphParams::new(1, 0.1);
    let mut rng = common::rng(5);
    let mut violations = 0;
    let mut min_slack = f64::INFINITY;
    for sample in 0..100 {
        let y1 = add_noise(&y, rng.random_range(0.005..0.05), rng.random()).unwrap();
        let y2 = add_noise(&y, rng.random_range(0.005..0.05), rng.random()).unwrap();
        let l1 = build_graph(&graphla::fbp(&y1, &k, 1.0).unwrap(), &params).unwrap().laplacian();
        let l2 = build_graph(&graphla::fbp(&y2, &k, 1.0).unwrap(), &params).unwrap().laplacian();
        let alpha = 10f64.powf(rng.random_range(-3.0..2.0));
        let p1 = VariationalProblem::new(&k, &l1, &y1.values, 0.0, SolverOptions::fixed(alpha)).unwrap();
        let p2 = VariationalProblem::new(&k, &l2, &y2.values, 0.0, SolverOptions::fixed(alpha)).unwrap();
        let scale = if sample == 0 { 0.0 } else { 10f64.powf(rng.random_range(-2.0..1.0)) };
        let x: Vec<f64> = common::random_vec(&mut rng, k.cols()).iter().map(|v| v * scale).collect();
        let g = gamma_inequality(&p1, &p2, &x, alpha);
        if !g.holds {
            violations += 1;
        }
        min_slack = min_slack.min(g.margin() / g.rhs);
    }
    outcome(violations == 0, format!("{violations} violations over 100 samples, min relative slack {min_slack:.3}"))
}

fn tikhonov_spectral() -> Outcome {
    let k = build_projector(&ScanGeometry::parallel(16, 12)).unwrap();
    let d = k.to_dense();
    let sv = d.svd(false, false).singular_values;
    let mut worst = f64::NEG_INFINITY;
    for e in -4..=2 {
        let theta = 10f64.powi(e);
        let bound = 1.0 / (2.0 * theta.sqrt());
        for &s in sv.iter() {
            worst = worst.max(s / (s * s + theta) / bound - 1.0);
        }
    }
    outcome(
        worst <= 0.0,
        format!("max s/(s^2+theta) * 2 sqrt(theta) - 1 = {worst:.3e}, {} singular values, n = {}", sv.len(), k.cols()),
    )
}

fn solver_oracle(solves: &mut Solves) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut worst_gap: f64 = 0.0;
    for inst in 0..20u64 {
        let mut rng = common::rng(1000 + inst);
        let kd = DMatrix::from_fn(24, 16, |_, _| rng.random_range(-1.0..1.0));
        let img = common::random_image(&mut rng, 4);
        let lap = build_graph(&img, &GraphParams::new(1, 0.5)).unwrap().laplacian();
        let ld = lap.to_dense();
        let x_true = DVector::from_vec(common::random_vec(&mut rng, 16));
        let noise = DVector::from_vec(common::random_vec(&mut rng, 24));
        let y = &kd * &x_true + noise * 0.3;
        let alpha = 10f64.powf(rng.random_range(-1.0..1.0));
        let oracle = common::dual_oracle(&kd, &ld, &y, alpha, 200_000);
        worst_gap = worst_gap.max(oracle.gap / oracle.gamma);
        let k = CsrMatrix::from_dense(&kd);
        let opts = SolverOptions {
            smoothing_eps: 1e-6,
            tol: 1e-12,
            max_outer: 20_000,
            ..SolverOptions::fixed(alpha)
        };
        let p = VariationalProblem::new(&k, &lap, y.as_slice(), 0.0, opts).unwrap();
        let (x, st) = solve(&p, &[0.0; 16]).unwrap();
        let g = p.objective(&x, alpha).gamma;
        worst = worst.max((g - oracle.gamma).abs() / oracle.gamma);
        solves.push((format!("oracle instance {inst}"), st));
    }
    outcome(
        worst <= 1e-4 && worst_gap <= 1e-9,
        format!("max relative objective gap {worst:.2e} (oracle duality gap {worst_gap:.1e}), 20 instances"),
    )
}

fn mm_monotonicity(solves: &Solves) -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    let mut worst_name = String::new();
    let mut steps = 0;
    for (name, st) in solves {
        steps += st.iterations();
        let v = st.worst_monotonicity_violation();
        if v > worst {
            worst = v;
            worst_name = name.clone();
        }
    }
    outcome(
        worst <= 1e-10,
        format!("{} solves, {steps} steps, worst relative increase {worst:.2e} ({worst_name})", solves.len()),
    )
}

fn desk(seed: u64) -> (ExperimentConfig, Scene) {
    let mut c = ExperimentConfig::desk();
    c.phantom = PhantomSpec::Synthetic {
        kind: PhantomKind::Ellipses,
        seed,
    };
    c.noise_seed = seed;
    let scene = Scene::new(&c).unwrap();
    (c, scene)
}

fn discrepancy_bracket(solves: &mut Solves) -> Outcome {
    let (c, scene) = desk(1);
    let y = scene.noisy(c.delta, c.noise_seed).unwrap();
    let o = graphla_method(&scene.k, &scene.x_gt, &y, &Reconstructor::fbp(), &c.graph, &c.solver, c.fallback_alpha).unwrap();
    let ratio = o.state.final_residual() / y.noise_norm;
    solves.push(("desk discrepancy run".into(), o.state));
    outcome(
        (1.0..=1.05 * 1.01).contains(&ratio),
        format!("final residual / noise norm = {ratio:.5}, bracket [1, {:.4}]", 1.05 * 1.01),
    )
}

fn method_ordering(solves: &mut Solves) -> Outcome {
    let mut failures = Vec::new();
    let mut worst_gain = (f64::INFINITY, f64::INFINITY);
    for seed in 1..=3 {
        let (c, scene) = desk(seed);
        let y = scene.noisy(c.delta, c.noise_seed).unwrap();
        let run = |psi: Reconstructor| {
            graphla_method(&scene.k, &scene.x_gt, &y, &psi, &c.graph, &c.solver, c.fallback_alpha).unwrap()
        };
        let mut fbp_graphla = None;
        for psi in [Reconstructor::fbp(), Reconstructor::tikhonov_discrepancy(), Reconstructor::tv()] {
            let o = run(psi);
            let (a, b) = (o.psi_metrics, o.graphla_metrics);
            worst_gain.0 = worst_gain.0.min(b.psnr - a.psnr);
            worst_gain.1 = worst_gain.1.min(b.ssim - a.ssim);
            if !(b.psnr > a.psnr && b.ssim > a.ssim) {
                failures.push(format!("seed {seed} {}", o.label));
            }
            if o.label == "fbp" {
                fbp_graphla = Some(b);
            }
            if let Some(s) = o.psi_state {
                solves.push((format!("seed {seed} tv"), s));
            }
            solves.push((format!("seed {seed} graphla+{}", o.label), o.state));
        }
        let gt = run(Reconstructor::GroundTruth);
        let f = fbp_graphla.unwrap();
        if !(gt.graphla_metrics.psnr >= f.psnr && gt.graphla_metrics.ssim >= f.ssim) {
            failures.push(format!("seed {seed} graphla+x_gt below graphla+fbp"));
        }
        solves.push((format!("seed {seed} graphla+x_gt"), gt.state));
    }
    outcome(
        failures.is_empty(),
        format!(
            "min gain psnr {:.3} dB, ssim {:.4} over 3 seeds x 3 methods; failures: {:?}",
            worst_gain.0, worst_gain.1, failures
        ),
    )
}

fn convergence() -> Outcome {
    let (c, scene) = desk(1);
    let deltas = [0.04, 0.02, 0.01, 0.005, 0.0025];
    let sweep = convergence_sweep(&scene.k, &scene.x_gt, &deltas, &c.graph, 1, &c.solver).unwrap();
    let rres: Vec<f64> = sweep.iter().map(|p| p.1).collect();
    let (big, any) = inversions(&rres, 0.02);
    outcome(
        big == 0 && any <= 1,
        format!(
            "RRE over delta 4%..0.25% with alpha = delta: [{}], inversions {any}",
            rres.iter().map(|r| format!("{r:.3e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn stability() -> Outcome {
    let (c, scene) = desk(1);
    let (dx, dy) = stability_pair(&scene.k, &scene.x_gt, 0.02, 1e-3, &c.graph, 1, &c.solver).unwrap();
    outcome(
        dy <= 1e-3 * (1.0 + 1e-12) && dx <= 0.05,
        format!("|y1-y2|/|y1| = {dy:.2e}, |x1-x2|/|x1| = {dx:.3e}"),
    )
}

fn main() {
    let mut solves: Solves = Vec::new();
    type Run<'a> = Box<dyn FnMut(&mut Solves) -> Outcome + 'a>;
    let criteria: Vec<(&str, Duration, Run)> = vec![
        ("adjoint consistency", Duration::from_secs(5), Box::new(|_| adjoint())),
        ("laplacian kernel", Duration::from_secs(5), Box::new(|_| laplacian_kernel())),
        ("pattern invariance", Duration::from_secs(1), Box::new(|_| pattern_invariance())),
        ("laplacian difference bound", Duration::from_secs(30), Box::new(|_| laplacian_difference_bound())),
        ("gamma inequality", Duration::from_secs(10), Box::new(|_| gamma_inequality_samples())),
        ("tikhonov spectral bound", Duration::from_secs(20), Box::new(|_| tikhonov_spectral())),
        ("solver oracle equivalence", Duration::from_secs(60), Box::new(solver_oracle)),
        ("discrepancy bracket", Duration::from_secs(60), Box::new(discrepancy_bracket)),
        ("method improvement ordering", Duration::from_secs(180), Box::new(method_ordering)),
        ("convergence sweep", Duration::from_secs(300), Box::new(|_| convergence())),
        ("stability sweep", Duration::from_secs(120), Box::new(|_| stability())),
    ];
    let mut failed = 0;
    let mut report = |name: &str, budget: Duration, elapsed: Duration, o: Outcome| {
        let ok = o.passed && elapsed <= budget;
        if !ok {
            failed += 1;
        }
        println!(
            "[{}] {name}: {} ({:.2}s, budget {}s)",
            if ok { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    };
    for (name, budget, mut f) in criteria {
        let t = Instant::now();
        let o = f(&mut solves);
        report(name, budget, t.elapsed(), o);
    }
    let t = Instant::now();
    let o = mm_monotonicity(&solves);
    report("mm monotonicity", Duration::from_secs(1), t.elapsed(), o);
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
