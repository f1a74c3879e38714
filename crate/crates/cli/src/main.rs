use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use graphla::pipeline::{self, graphla_reconstruct};
use graphla::theory::{report_json, run_all};
use graphla::{
    add_noise, build_projector, AlphaRule, BeamMode, ExperimentConfig, ImageGrid, MetricsReport, PhantomKind,
    PhantomSpec, Reconstructor, ScanGeometry, Sinogram, SweepSpec, TheoryConfig,
};

/// Sparse-view CT reconstruction with graph Laplacian regularization.
#[derive(Parser)]
#[command(name = "graphla", version)]
struct Cli {
    /// JSON experiment configuration; flags below override its fields.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Named starting configuration (desk, coule, mayo) used when no
    /// --config is given.
    #[arg(long, global = true, default_value = "desk")]
    preset: String,

    #[command(flatten)]
    overrides: Overrides,

    /// Log more (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Beam {
    Parallel,
    Fan,
}

#[derive(Clone, Copy, ValueEnum)]
enum Phantom {
    Ellipses,
    SheppLogan,
}

#[derive(Clone, Copy, ValueEnum)]
enum Psi {
    Fbp,
    Tikhonov,
    Tv,
    GroundTruth,
}

#[derive(Args)]
struct Overrides {
    /// Image side length in pixels.
    #[arg(long, global = true)]
    side: Option<usize>,
    /// Number of projection angles.
    #[arg(long, global = true)]
    angles: Option<usize>,
    #[arg(long, global = true, value_enum)]
    beam: Option<Beam>,
    /// Relative noise level.
    #[arg(long, global = true)]
    delta: Option<f64>,
    #[arg(long, global = true)]
    noise_seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    phantom: Option<Phantom>,
    #[arg(long, global = true)]
    phantom_seed: Option<u64>,
    /// Ground-truth image file instead of a synthetic phantom.
    #[arg(long, global = true, value_name = "FILE")]
    phantom_file: Option<PathBuf>,
    /// Graph neighborhood radius.
    #[arg(long, global = true)]
    radius: Option<usize>,
    /// Graph intensity scale.
    #[arg(long, global = true)]
    sigma: Option<f64>,
    /// Preliminary reconstructor.
    #[arg(long, global = true, value_enum, conflicts_with = "psi_file")]
    psi: Option<Psi>,
    /// Preliminary reconstruction read from an image file.
    #[arg(long, global = true, value_name = "FILE")]
    psi_file: Option<PathBuf>,
    /// Fixed regularization parameter instead of the discrepancy rule.
    #[arg(long, global = true, conflicts_with = "tau")]
    alpha: Option<f64>,
    /// Discrepancy factor.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Sweep noise levels, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    deltas: Option<Vec<f64>>,
    /// Output directory for `run` and `sweep`.
    #[arg(short, long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the ground-truth phantom image.
    Phantom { out: PathBuf },
    /// Project an image (default: the configured phantom) to a sinogram.
    Project {
        #[arg(long)]
        image: Option<PathBuf>,
        out: PathBuf,
    },
    /// Add relative Gaussian noise to a sinogram.
    Noise { input: PathBuf, out: PathBuf },
    /// Preliminary reconstruction of a sinogram.
    Reconstruct {
        input: PathBuf,
        out: PathBuf,
        /// Report metrics against this image.
        #[arg(long)]
        ground_truth: Option<PathBuf>,
    },
    /// Graph-regularized reconstruction of a sinogram.
    Graphla {
        input: PathBuf,
        out: PathBuf,
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        /// Also write the preliminary reconstruction.
        #[arg(long)]
        psi_out: Option<PathBuf>,
        /// Write the per-iteration solver trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Full experiment into the output directory.
    Run,
    /// Noise sweep; writes sweep.csv into the output directory.
    Sweep,
    /// Run the numerical checks and print a JSON report.
    Verify {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Print the effective configuration as JSON.
    Config,
}

/// Exit status: 2 for bad configuration or input, 3 for a failed stage,
/// 1 for failed checks.
enum Failure {
    Config(anyhow::Error),
    Stage(anyhow::Error),
    Checks,
}

type Outcome<T> = std::result::Result<T, Failure>;

trait Classify<T> {
    fn config(self) -> Outcome<T>;
    fn stage(self) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for std::result::Result<T, E> {
    fn config(self) -> Outcome<T> {
        self.map_err(|e| Failure::Config(e.into()))
    }

    fn stage(self) -> Outcome<T> {
        self.map_err(|e| Failure::Stage(e.into()))
    }
}

/// Library errors from computation: stage failures map to 3, anything that
/// traces back to bad input maps to 2.
fn compute<T>(r: graphla::Result<T>) -> Outcome<T> {
    r.map_err(|e| {
        if e.is_stage_failure() {
            Failure::Stage(e.into())
        } else {
            Failure::Config(e.into())
        }
    })
}

fn base_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    match &cli.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => ExperimentConfig::preset(&cli.preset).with_context(|| format!("unknown preset {:?}", cli.preset)),
    }
}

fn apply_overrides(c: &mut ExperimentConfig, o: &Overrides) {
    let g = &c.geometry;
    if o.side.is_some() || o.angles.is_some() || o.beam.is_some() {
        let side = o.side.unwrap_or(g.image_side);
        let angles = o.angles.unwrap_or(g.n_angles);
        let mode = match o.beam {
            Some(Beam::Parallel) => BeamMode::Parallel,
            Some(Beam::Fan) => BeamMode::Fan,
            None => g.mode,
        };
        c.geometry = match mode {
            BeamMode::Parallel => ScanGeometry::parallel(side, angles),
            BeamMode::Fan => ScanGeometry::fan(side, angles),
        };
    }
    if let Some(d) = o.delta {
        c.delta = d;
    }
    if let Some(s) = o.noise_seed {
        c.noise_seed = s;
    }
    if let Some(p) = &o.phantom_file {
        c.phantom = PhantomSpec::File { path: p.clone() };
    } else if o.phantom.is_some() || o.phantom_seed.is_some() {
        let (kind, seed) = match &c.phantom {
            PhantomSpec::Synthetic { kind, seed } => (*kind, *seed),
            PhantomSpec::File { .. } => (PhantomKind::Ellipses, 0),
        };
        c.phantom = PhantomSpec::Synthetic {
            kind: match o.phantom {
                Some(Phantom::Ellipses) => PhantomKind::Ellipses,
                Some(Phantom::SheppLogan) => PhantomKind::SheppLoganLike,
                None => kind,
            },
            seed: o.phantom_seed.unwrap_or(seed),
        };
    }
    if let Some(r) = o.radius {
        c.graph.radius = r;
    }
    if let Some(s) = o.sigma {
        c.graph.sigma = s;
    }
    if let Some(p) = &o.psi_file {
        c.psi = Reconstructor::ExternalFile { path: p.clone() };
    } else if let Some(p) = o.psi {
        c.psi = match p {
            Psi::Fbp => Reconstructor::fbp(),
            Psi::Tikhonov => Reconstructor::tikhonov_discrepancy(),
            Psi::Tv => Reconstructor::tv(),
            Psi::GroundTruth => Reconstructor::GroundTruth,
        };
    }
    if let Some(a) = o.alpha {
        c.solver.alpha_rule = AlphaRule::Fixed { alpha: a };
    }
    if let Some(tau) = o.tau {
        c.solver.alpha_rule = AlphaRule::Discrepancy { tau };
    }
    if let Some(d) = &o.deltas {
        let psis = c.sweep.take().map(|s| s.psis).unwrap_or_default();
        c.sweep = Some(SweepSpec { deltas: d.clone(), psis });
    }
    if let Some(dir) = &o.output_dir {
        c.output_dir = dir.clone();
    }
}

fn print_metrics(label: &str, x: &ImageGrid, gt_path: &Path) -> Outcome<()> {
    let gt = ImageGrid::load(gt_path).config()?;
    let m = compute(MetricsReport::evaluate(x, &gt))?;
    println!("{label}: rre={:.6e} psnr={:.4} ssim={:.4}", m.rre, m.psnr, m.ssim);
    Ok(())
}

fn load_sinogram(path: &Path) -> Outcome<(Sinogram, graphla::ProjectorMatrix)> {
    let y = Sinogram::load(path).with_context(|| format!("reading {}", path.display())).config()?;
    let k = build_projector(&y.geometry).config()?;
    Ok((y, k))
}

fn ground_truth_for(c: &ExperimentConfig, path: Option<&PathBuf>, side: usize) -> Outcome<Option<ImageGrid>> {
    match path {
        Some(p) => Ok(Some(ImageGrid::load(p).config()?)),
        // only the ground_truth reconstructor needs it
        None if matches!(c.psi, Reconstructor::GroundTruth) => Ok(Some(c.phantom.load(side).config()?)),
        None => Ok(None),
    }
}

fn execute(cli: &Cli) -> Outcome<()> {
    let mut c = base_config(cli).config()?;
    apply_overrides(&mut c, &cli.overrides);
    match &cli.command {
        Command::Config => {
            println!("{}", c.to_json());
        }
        Command::Phantom { out } => {
            c.validate().config()?;
            let x = c.phantom.load(c.geometry.image_side).config()?;
            x.save(out).stage()?;
        }
        Command::Project { image, out } => {
            c.geometry.validate().config()?;
            let x = match image {
                Some(p) => ImageGrid::load(p).config()?,
                None => c.phantom.load(c.geometry.image_side).config()?,
            };
            let k = build_projector(&c.geometry).config()?;
            let y = k.project(&x).config()?;
            y.save(out).stage()?;
            info!("{} rays x {} pixels, {} nonzeros", y.len(), x.len(), k.matrix().nnz());
        }
        Command::Noise { input, out } => {
            let y = Sinogram::load(input).config()?;
            let noisy = add_noise(&y, c.delta, c.noise_seed).config()?;
            noisy.save(out).stage()?;
            println!("noise norm {:.6e}", noisy.noise_norm);
        }
        Command::Reconstruct { input, out, ground_truth } => {
            let (y, k) = load_sinogram(input)?;
            let gt = ground_truth_for(&c, ground_truth.as_ref(), k.geometry().image_side)?;
            let r = compute(c.psi.run(&y, &k, gt.as_ref()))?;
            r.image.save(out).stage()?;
            if let Some(t) = r.theta {
                println!("theta {t:.6e}");
            }
            if let Some(p) = ground_truth {
                print_metrics(c.psi.label(), &r.image, p)?;
            }
        }
        Command::Graphla { input, out, ground_truth, psi_out, trace } => {
            let (y, k) = load_sinogram(input)?;
            c.graph.validate().config()?;
            c.solver.validate().config()?;
            let gt = ground_truth_for(&c, ground_truth.as_ref(), k.geometry().image_side)?;
            let psi = compute(c.psi.run(&y, &k, gt.as_ref()))?;
            let (x, state) = compute(graphla_reconstruct(&k, &y, &psi.image, &c.graph, &c.solver, c.fallback_alpha))?;
            x.save(out).stage()?;
            if let Some(p) = psi_out {
                psi.image.save(p).stage()?;
            }
            if let Some(p) = trace {
                let f = fs::File::create(p).stage()?;
                state.write_trace_csv(f).stage()?;
            }
            println!(
                "alpha {:.6e} residual {:.6e} iterations {} stop {:?}",
                state.final_alpha(),
                state.final_residual(),
                state.iterations(),
                state.stop
            );
            if let Some(p) = ground_truth {
                print_metrics(c.psi.label(), &psi.image, p)?;
                print_metrics(&format!("graphla+{}", c.psi.label()), &x, p)?;
            }
        }
        Command::Run => {
            c.validate().config()?;
            let s = pipeline::run(&c).stage()?;
            print!("{}", fs::read_to_string(s.dir.join("metrics.csv")).stage()?);
            println!("wrote {}", s.dir.display());
        }
        Command::Sweep => {
            if c.sweep.is_none() {
                return Err(Failure::Config(anyhow!("no sweep section in the config and no --deltas given")));
            }
            c.validate().config()?;
            let path = pipeline::sweep(&c).stage()?;
            print!("{}", fs::read_to_string(&path).stage()?);
            println!("wrote {}", path.display());
        }
        Command::Verify { out, seed, samples } => {
            let mut cfg = TheoryConfig {
                seed: *seed,
                ..TheoryConfig::default()
            };
            if let Some(s) = samples {
                if *s == 0 {
                    return Err(Failure::Config(anyhow!("--samples must be positive")));
                }
                cfg.samples = *s;
            }
            let results = run_all(&cfg);
            for r in &results {
                eprintln!("{:<28} {:?} margin {:.3e}", r.name, r.status, r.margin);
            }
            let text = serde_json::to_string_pretty(&report_json(&results)).expect("plain data");
            match out {
                Some(p) => fs::write(p, text).stage()?,
                None => println!("{text}"),
            }
            if results.iter().any(|r| !r.passed) {
                return Err(Failure::Checks);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
        Err(Failure::Checks) => {
            eprintln!("some checks failed");
            ExitCode::from(1)
        }
    }
}
