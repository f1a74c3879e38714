//! End-to-end experiments: phantom, projection, noise, preliminary
//! reconstruction, graph, graph-regularized solve and metrics.
//!
//! A run directory is flat:
//!
//! ```text
//! config.json           x_gt.pgm
//! sinogram_clean.bin    sinogram_clean.bin.json
//! sinogram_noisy.bin    sinogram_noisy.bin.json
//! psi.pgm               graphla.pgm
//! psi.f64               graphla.f64
//! metrics.csv           solver_trace.csv
//! summary.json
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StageContext};
use crate::geometry::{add_noise, build_projector, ProjectorMatrix, ScanGeometry, Sinogram};
use crate::graph::{build_graph, GraphParams};
use crate::image::ImageGrid;
use crate::metrics::MetricsReport;
use crate::phantom::{make_phantom, PhantomKind};
use crate::reconstruct::{effective_options, Reconstructor};
use crate::solver::{solve, SolverOptions, SolverState, VariationalProblem};
use crate::sparse::LinearOperator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum PhantomSpec {
    Synthetic { kind: PhantomKind, seed: u64 },
    File { path: PathBuf },
}

impl PhantomSpec {
    pub fn load(&self, side: usize) -> Result<ImageGrid> {
        match self {
            PhantomSpec::Synthetic { kind, seed } => make_phantom(*kind, side, *seed),
            PhantomSpec::File { path } => {
                let img = ImageGrid::load(path)?;
                if img.shape() != (side, side) {
                    return Err(Error::DimensionMismatch {
                        context: "phantom file pixels",
                        expected: side * side,
                        actual: img.len(),
                    });
                }
                Ok(img)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub deltas: Vec<f64>,
    /// Preliminary reconstructors compared at every level; the run's `psi`
    /// when empty.
    #[serde(default)]
    pub psis: Vec<Reconstructor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub geometry: ScanGeometry,
    pub phantom: PhantomSpec,
    pub delta: f64,
    #[serde(default)]
    pub noise_seed: u64,
    pub graph: GraphParams,
    pub psi: Reconstructor,
    #[serde(default)]
    pub solver: SolverOptions,
    /// Fixed alpha used when the data are noise-free.
    #[serde(default = "default_fallback_alpha")]
    pub fallback_alpha: f64,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

fn default_fallback_alpha() -> f64 {
    1e-3
}

impl ExperimentConfig {
    /// 64x64 fan-beam run with 30 views at 2% noise.
    pub fn desk() -> Self {
        Self {
            geometry: ScanGeometry::fan(64, 30),
            phantom: PhantomSpec::Synthetic {
                kind: PhantomKind::Ellipses,
                seed: 1,
            },
            delta: 0.02,
            noise_seed: 1,
            graph: GraphParams::new(5, 0.1),
            psi: Reconstructor::fbp(),
            solver: SolverOptions::default(),
            fallback_alpha: default_fallback_alpha(),
            output_dir: PathBuf::from("runs/desk"),
            sweep: None,
        }
    }

    /// 256x256, 60 fan-beam views, 2% noise, `R = 5`, `sigma = 1e-3`.
    pub fn coule() -> Self {
        Self {
            geometry: ScanGeometry::fan(256, 60),
            graph: GraphParams::new(5, 1e-3),
            output_dir: PathBuf::from("runs/coule"),
            ..Self::desk()
        }
    }

    /// 256x256, 180 views, 1% noise, `R = 5`, `sigma = 2e-4`.
    pub fn mayo() -> Self {
        Self {
            geometry: ScanGeometry::fan(256, 180),
            phantom: PhantomSpec::Synthetic {
                kind: PhantomKind::SheppLoganLike,
                seed: 0,
            },
            delta: 0.01,
            graph: GraphParams::new(5, 2e-4),
            output_dir: PathBuf::from("runs/mayo"),
            ..Self::desk()
        }
    }

    /// Mayo setting with an external network output as the preliminary
    /// reconstruction, `R = 3`, `sigma = 1e-3`.
    pub fn mayo_net(path: PathBuf) -> Self {
        Self {
            graph: GraphParams::new(3, 1e-3),
            psi: Reconstructor::ExternalFile { path },
            output_dir: PathBuf::from("runs/mayo_net"),
            ..Self::mayo()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "coule" => Some(Self::coule()),
            "mayo" => Some(Self::mayo()),
            _ => None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is plain data")
    }

    /// Static checks, including that all referenced input files exist.
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.graph.validate()?;
        self.solver.validate()?;
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(Error::InvalidParameter(format!("delta must be >= 0, got {}", self.delta)));
        }
        let mut paths = Vec::new();
        if let PhantomSpec::File { path } = &self.phantom {
            paths.push(path);
        }
        let psis = std::iter::once(&self.psi).chain(self.sweep.iter().flat_map(|s| s.psis.iter()));
        for r in psis {
            if let Reconstructor::ExternalFile { path } = r {
                paths.push(path);
            }
        }
        for p in paths {
            if !p.exists() {
                return Err(Error::MissingFile(p.clone()));
            }
        }
        if let Some(s) = &self.sweep {
            if s.deltas.is_empty() {
                return Err(Error::InvalidParameter("sweep needs at least one delta".into()));
            }
            if s.deltas.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
                return Err(Error::InvalidParameter("sweep deltas must be >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Everything one preliminary reconstructor produces at one noise level.
#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub label: &'static str,
    pub psi: ImageGrid,
    pub graphla: ImageGrid,
    pub psi_metrics: MetricsReport,
    pub graphla_metrics: MetricsReport,
    pub theta: Option<f64>,
    /// Inner solve of the preliminary reconstructor, if it has one.
    pub psi_state: Option<SolverState>,
    pub state: SolverState,
}

/// Graph-regularized solve guided by a preliminary reconstruction `psi`,
/// which also serves as the initial iterate. The result is clipped to
/// `[0, 1]`.
pub fn graphla_reconstruct(
    k: &ProjectorMatrix,
    y: &Sinogram,
    psi: &ImageGrid,
    graph: &GraphParams,
    solver: &SolverOptions,
    fallback_alpha: f64,
) -> Result<(ImageGrid, SolverState)> {
    let lap = build_graph(psi, graph).stage("graph")?.laplacian();
    let options = effective_options(solver, y.noise_norm, fallback_alpha);
    let (x, state) = VariationalProblem::new(k, &lap, &y.values, y.noise_norm, options)
        .and_then(|p| solve(&p, psi.as_slice()))
        .stage("graphla")?;
    let side = k.geometry().image_side;
    Ok((ImageGrid::square(side, x)?.clipped_unit(), state))
}

/// Preliminary reconstruction, graph, graph-regularized solve and metrics on
/// given data.
pub fn graphla_method(
    k: &ProjectorMatrix,
    x_gt: &ImageGrid,
    y: &Sinogram,
    psi: &Reconstructor,
    graph: &GraphParams,
    solver: &SolverOptions,
    fallback_alpha: f64,
) -> Result<MethodOutcome> {
    let out = psi.run(y, k, Some(x_gt)).stage("reconstruct")?;
    let (graphla, state) = graphla_reconstruct(k, y, &out.image, graph, solver, fallback_alpha)?;
    Ok(MethodOutcome {
        label: psi.label(),
        psi_metrics: MetricsReport::evaluate(&out.image, x_gt).stage("metrics")?,
        graphla_metrics: MetricsReport::evaluate(&graphla, x_gt).stage("metrics")?,
        psi: out.image,
        graphla,
        theta: out.theta,
        psi_state: out.solver,
        state,
    })
}

pub const METRICS_HEADER: &str = "method,rre,psnr,ssim";

fn metrics_lines(o: &MethodOutcome) -> [String; 2] {
    [
        format!("{},{}", o.label, o.psi_metrics.csv_row()),
        format!("graphla+{},{}", o.label, o.graphla_metrics.csv_row()),
    ]
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub outcome: MethodOutcome,
    pub noisy: Sinogram,
}

/// Shared front half of a run: ground truth, operator, clean data.
pub struct Scene {
    pub k: ProjectorMatrix,
    pub x_gt: ImageGrid,
    pub clean: Sinogram,
}

impl Scene {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        let x_gt = config.phantom.load(config.geometry.image_side).stage("phantom")?;
        let k = build_projector(&config.geometry).stage("project")?;
        let clean = k.project(&x_gt).stage("project")?;
        Ok(Self { k, x_gt, clean })
    }

    pub fn noisy(&self, delta: f64, seed: u64) -> Result<Sinogram> {
        add_noise(&self.clean, delta, seed).stage("noise")
    }
}

/// Runs one experiment and writes its run directory.
pub fn run(config: &ExperimentConfig) -> Result<RunSummary> {
    config.validate()?;
    let dir = config.output_dir.clone();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.json"), config.to_json())?;

    let scene = Scene::new(config)?;
    scene.x_gt.save(&dir.join("x_gt.pgm"))?;
    scene.clean.save(&dir.join("sinogram_clean.bin"))?;
    let noisy = scene.noisy(config.delta, config.noise_seed)?;
    noisy.save(&dir.join("sinogram_noisy.bin"))?;
    info!(
        "m = {}, n = {}, noise norm = {:.4e}",
        scene.k.rows(),
        scene.k.cols(),
        noisy.noise_norm
    );

    let outcome = graphla_method(
        &scene.k,
        &scene.x_gt,
        &noisy,
        &config.psi,
        &config.graph,
        &config.solver,
        config.fallback_alpha,
    )?;
    outcome.psi.save(&dir.join("psi.pgm"))?;
    // lossless copy, usable as an external_file reconstructor
    outcome.psi.save(&dir.join("psi.f64"))?;
    outcome.graphla.save(&dir.join("graphla.pgm"))?;
    outcome.graphla.save(&dir.join("graphla.f64"))?;
    let mut csv = format!("{METRICS_HEADER}\n");
    for line in metrics_lines(&outcome) {
        csv.push_str(&line);
        csv.push('\n');
    }
    fs::write(dir.join("metrics.csv"), csv)?;
    let mut trace = Vec::new();
    outcome.state.write_trace_csv(&mut trace)?;
    fs::write(dir.join("solver_trace.csv"), trace)?;
    let summary = serde_json::json!({
        "method": outcome.label,
        "theta": outcome.theta,
        "alpha": outcome.state.final_alpha(),
        "residual": outcome.state.final_residual(),
        "noise_norm": noisy.noise_norm,
        "iterations": outcome.state.iterations(),
        "restarts": outcome.state.restarts,
        "stop": outcome.state.stop,
    });
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(RunSummary {
        dir,
        outcome,
        noisy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub delta: f64,
    pub method: String,
    pub metrics: MetricsReport,
}

pub const SWEEP_HEADER: &str = "delta,method,rre,psnr,ssim";

impl SweepRow {
    pub fn csv_line(&self) -> String {
        format!("{},{},{}", self.delta, self.method, self.metrics.csv_row())
    }
}

/// Evaluates every listed reconstructor, with and without graph
/// regularization, at every noise level.
pub fn sweep_rows(config: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let spec = config
        .sweep
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("config has no sweep section".into()))?;
    let psis: Vec<Reconstructor> = if spec.psis.is_empty() {
        vec![config.psi.clone()]
    } else {
        spec.psis.clone()
    };
    let scene = Scene::new(config)?;
    let mut rows = Vec::new();
    for &delta in &spec.deltas {
        let noisy = scene.noisy(delta, config.noise_seed)?;
        for psi in &psis {
            let o = graphla_method(
                &scene.k,
                &scene.x_gt,
                &noisy,
                psi,
                &config.graph,
                &config.solver,
                config.fallback_alpha,
            )?;
            info!(
                "delta {delta}: {} psnr {:.3} -> {:.3}",
                o.label, o.psi_metrics.psnr, o.graphla_metrics.psnr
            );
            rows.push(SweepRow {
                delta,
                method: o.label.to_owned(),
                metrics: o.psi_metrics,
            });
            rows.push(SweepRow {
                delta,
                method: format!("graphla+{}", o.label),
                metrics: o.graphla_metrics,
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    Ok(())
}

/// Runs the sweep and writes `sweep.csv` into the output directory.
pub fn sweep(config: &ExperimentConfig) -> Result<PathBuf> {
    let rows = sweep_rows(config)?;
    fs::create_dir_all(&config.output_dir)?;
    let path = config.output_dir.join("sweep.csv");
    write_sweep_csv(&rows, fs::File::create(&path)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_json() {
        for c in [
            ExperimentConfig::desk(),
            ExperimentConfig::coule(),
            ExperimentConfig::mayo(),
            ExperimentConfig::mayo_net("net.png".into()),
        ] {
            let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn paper_presets() {
        let c = ExperimentConfig::coule();
        assert_eq!((c.geometry.image_side, c.geometry.n_angles), (256, 60));
        assert_eq!((c.graph.radius, c.graph.sigma, c.delta), (5, 1e-3, 0.02));
        let m = ExperimentConfig::mayo();
        assert_eq!((m.geometry.n_angles, m.graph.radius, m.graph.sigma, m.delta), (180, 5, 2e-4, 0.01));
        let n = ExperimentConfig::mayo_net("x.pgm".into());
        assert_eq!((n.graph.radius, n.graph.sigma), (3, 1e-3));
    }

    #[test]
    fn missing_external_file_is_a_config_error() {
        let c = ExperimentConfig {
            psi: Reconstructor::ExternalFile {
                path: "/nonexistent/net.pgm".into(),
            },
            ..ExperimentConfig::desk()
        };
        assert!(matches!(c.validate(), Err(Error::MissingFile(_))));
    }

    #[test]
    fn empty_sweep_rejected() {
        let c = ExperimentConfig {
            sweep: Some(SweepSpec {
                deltas: vec![],
                psis: vec![],
            }),
            ..ExperimentConfig::desk()
        };
        assert!(c.validate().is_err());
    }
}
