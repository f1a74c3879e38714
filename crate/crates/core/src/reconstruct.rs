//! Preliminary reconstructors: filtered back projection, Tikhonov (fixed or
//! discrepancy-chosen parameter), total variation, and images read from disk.

use std::path::{Path, PathBuf};

use log::warn;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ProjectorMatrix, Sinogram};
use crate::image::ImageGrid;
use crate::linalg::{axpy, dot, norm2, sub};
use crate::solver::{self, AlphaRule, SolverOptions, SolverState, VariationalProblem};
use crate::sparse::LinearOperator;

fn check_sinogram(y: &Sinogram, k: &ProjectorMatrix) -> Result<()> {
    if y.values.len() != k.rows() {
        return Err(Error::DimensionMismatch {
            context: "sinogram length",
            expected: k.rows(),
            actual: y.values.len(),
        });
    }
    Ok(())
}

fn side_of(k: &ProjectorMatrix) -> usize {
    k.geometry().image_side
}

/// Ram-Lak filtering of every detector row with spatial sampling `tau`.
/// Frequencies above `cutoff` times Nyquist are removed.
pub fn ramp_filter(values: &[f64], n_detector: usize, tau: f64, cutoff: f64) -> Vec<f64> {
    if n_detector == 0 || values.is_empty() {
        return values.to_vec();
    }
    let pad = (2 * n_detector).next_power_of_two();
    // band-limited spatial kernel, wrapped for circular convolution
    let mut kernel = vec![Complex::new(0.0, 0.0); pad];
    for (idx, slot) in kernel.iter_mut().enumerate() {
        let k = if idx <= pad / 2 { idx as i64 } else { idx as i64 - pad as i64 };
        let h = if k == 0 {
            1.0 / (4.0 * tau * tau)
        } else if k % 2 != 0 {
            -1.0 / (std::f64::consts::PI * std::f64::consts::PI * (k * k) as f64 * tau * tau)
        } else {
            0.0
        };
        *slot = Complex::new(h * tau, 0.0);
    }
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(pad);
    let inv = planner.plan_fft_inverse(pad);
    fwd.process(&mut kernel);
    let cut = cutoff.clamp(0.0, 1.0);
    for (idx, c) in kernel.iter_mut().enumerate() {
        let f = idx.min(pad - idx) as f64 / (pad / 2) as f64;
        if f > cut {
            *c = Complex::new(0.0, 0.0);
        }
    }

    let mut out = Vec::with_capacity(values.len());
    let mut buf = vec![Complex::new(0.0, 0.0); pad];
    for row in values.chunks(n_detector) {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (b, v) in buf.iter_mut().zip(row) {
            b.re = *v;
        }
        fwd.process(&mut buf);
        for (b, h) in buf.iter_mut().zip(&kernel) {
            *b *= h;
        }
        inv.process(&mut buf);
        out.extend(buf[..row.len()].iter().map(|c| c.re / pad as f64));
    }
    out
}

/// Least-squares scale `argmin_c ||c K x - y||`.
pub fn calibration_scale(k: &dyn LinearOperator, x: &[f64], y: &[f64]) -> f64 {
    let kx = k.apply(x);
    let d = dot(&kx, &kx);
    if d == 0.0 {
        0.0
    } else {
        dot(&kx, y) / d
    }
}

/// Back projection of the (optionally ramp-filtered) sinogram, scaled by the
/// least-squares calibration factor. Not clipped.
#[derive(Debug, Clone)]
pub struct Backprojection {
    pub image: ImageGrid,
    pub scale: f64,
}

pub fn calibrated_backprojection(
    y: &Sinogram,
    k: &ProjectorMatrix,
    filtered: bool,
    cutoff: f64,
) -> Result<Backprojection> {
    check_sinogram(y, k)?;
    let g = k.geometry();
    let data = if filtered {
        ramp_filter(&y.values, g.n_detector, g.detector_spacing, cutoff)
    } else {
        y.values.clone()
    };
    let mut x = k.apply_transpose(&data);
    let scale = calibration_scale(k, &x, &y.values);
    x.iter_mut().for_each(|v| *v *= scale);
    Ok(Backprojection {
        image: ImageGrid::square(side_of(k), x)?,
        scale,
    })
}

/// Filtered back projection, calibrated and clipped to `[0, 1]`.
pub fn fbp(y: &Sinogram, k: &ProjectorMatrix, cutoff: f64) -> Result<ImageGrid> {
    Ok(calibrated_backprojection(y, k, true, cutoff)?.image.clipped_unit())
}

/// Conjugate gradients for `(K^T K + theta I) x = rhs`.
#[derive(Debug, Clone, Copy)]
pub struct CgReport {
    pub iterations: usize,
    pub relative_residual: f64,
}

pub const CG_RTOL: f64 = 1e-8;

pub fn cg_normal(
    k: &dyn LinearOperator,
    rhs: &[f64],
    theta: f64,
    x: &mut [f64],
    rtol: f64,
    max_iter: usize,
) -> Result<CgReport> {
    let apply = |v: &[f64]| {
        let mut w = k.apply_transpose(&k.apply(v));
        axpy(theta, v, &mut w);
        w
    };
    let bnorm = norm2(rhs);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgReport {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = sub(rhs, &apply(x));
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut it = 0;
    while rr.sqrt() > rtol * bnorm {
        if it == max_iter {
            return Err(Error::SolverNotConverged {
                iterations: it,
                residual: rr.sqrt() / bnorm,
            });
        }
        let q = apply(&p);
        let a = rr / dot(&p, &q);
        axpy(a, &p, x);
        axpy(-a, &q, &mut r);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        it += 1;
    }
    Ok(CgReport {
        iterations: it,
        relative_residual: rr.sqrt() / bnorm,
    })
}

const CG_MAX_ITER: usize = 20_000;

/// `(K^T K + theta I)^{-1} K^T y`, not clipped.
pub fn tikhonov(y: &Sinogram, k: &ProjectorMatrix, theta: f64) -> Result<ImageGrid> {
    check_sinogram(y, k)?;
    if !(theta.is_finite() && theta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "Tikhonov parameter must be positive, got {theta}"
        )));
    }
    let rhs = k.apply_transpose(&y.values);
    let mut x = vec![0.0; k.cols()];
    cg_normal(k, &rhs, theta, &mut x, CG_RTOL, CG_MAX_ITER)?;
    ImageGrid::square(side_of(k), x)
}

#[derive(Debug, Clone)]
pub struct TikhonovDiscrepancy {
    pub image: ImageGrid,
    pub theta: f64,
    pub residual: f64,
}

/// Tikhonov with `theta` chosen so that `||K x - y|| / noise_norm` lands in
/// `[1, tau]`, by bisection on `log theta`.
pub fn tikhonov_discrepancy(y: &Sinogram, k: &ProjectorMatrix, tau: f64) -> Result<TikhonovDiscrepancy> {
    check_sinogram(y, k)?;
    let eta = y.noise_norm;
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::InvalidParameter(
            "discrepancy principle needs a sinogram with positive noise norm".into(),
        ));
    }
    if !(tau.is_finite() && tau >= 1.0) {
        return Err(Error::InvalidParameter(format!("tau must be >= 1, got {tau}")));
    }
    let rhs = k.apply_transpose(&y.values);
    let scale = k.norm_estimate(30).powi(2).max(f64::MIN_POSITIVE);
    let mut x = vec![0.0; k.cols()];
    let eval = |theta: f64, x: &mut Vec<f64>| -> Result<f64> {
        cg_normal(k, &rhs, theta, x, CG_RTOL, CG_MAX_ITER)?;
        Ok(norm2(&sub(&k.apply(x), &y.values)))
    };
    let target_hi = tau * eta;

    // upper end: residual grows to ||y|| as theta -> infinity
    let mut hi = scale.log10();
    let mut r_hi = eval(10f64.powf(hi), &mut x)?;
    while r_hi < eta && hi < scale.log10() + 12.0 {
        hi += 2.0;
        r_hi = eval(10f64.powf(hi), &mut x)?;
    }
    if r_hi < eta {
        return Err(Error::InvalidParameter(format!(
            "noise norm {eta:.3e} exceeds the data norm; no admissible theta"
        )));
    }
    let x_hi = x.clone();
    if r_hi <= target_hi {
        return Ok(TikhonovDiscrepancy {
            image: ImageGrid::square(side_of(k), x_hi)?,
            theta: 10f64.powf(hi),
            residual: r_hi,
        });
    }
    // lower end, walking down until the residual drops below tau * eta
    let floor = scale.log10() - 14.0;
    let mut lo = hi - 2.0;
    let mut r_lo = eval(10f64.powf(lo), &mut x)?;
    while r_lo > target_hi {
        if lo <= floor {
            return Err(Error::InfeasibleDiscrepancy {
                residual: r_lo,
                target: target_hi,
            });
        }
        hi = lo;
        lo -= 2.0;
        r_lo = eval(10f64.powf(lo), &mut x)?;
    }
    if r_lo >= eta {
        return Ok(TikhonovDiscrepancy {
            image: ImageGrid::square(side_of(k), x)?,
            theta: 10f64.powf(lo),
            residual: r_lo,
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let r = eval(10f64.powf(mid), &mut x)?;
        if r < eta {
            lo = mid;
        } else if r > target_hi {
            hi = mid;
        } else {
            return Ok(TikhonovDiscrepancy {
                image: ImageGrid::square(side_of(k), x)?,
                theta: 10f64.powf(mid),
                residual: r,
            });
        }
    }
    Err(Error::SolverNotConverged {
        iterations: 200,
        residual: f64::NAN,
    })
}

/// Forward differences with Neumann boundary: rows `0..n` are vertical
/// differences `x(i+1, j) - x(i, j)`, rows `n..2n` horizontal ones; the last
/// row/column of each block is zero.
#[derive(Debug, Clone, Copy)]
pub struct GradientOp {
    pub height: usize,
    pub width: usize,
}

impl GradientOp {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }
}

impl LinearOperator for GradientOp {
    fn rows(&self) -> usize {
        2 * self.height * self.width
    }

    fn cols(&self) -> usize {
        self.height * self.width
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let (h, w) = (self.height, self.width);
        let n = h * w;
        assert_eq!(x.len(), n, "operand length");
        let (dv, dh) = out.split_at_mut(n);
        for i in 0..h {
            for j in 0..w {
                let p = i * w + j;
                dv[p] = if i + 1 < h { x[p + w] - x[p] } else { 0.0 };
                dh[p] = if j + 1 < w { x[p + 1] - x[p] } else { 0.0 };
            }
        }
    }

    fn apply_transpose_into(&self, y: &[f64], out: &mut [f64]) {
        let (h, w) = (self.height, self.width);
        let n = h * w;
        assert_eq!(y.len(), 2 * n, "operand length");
        out.iter_mut().for_each(|v| *v = 0.0);
        let (dv, dh) = y.split_at(n);
        for i in 0..h {
            for j in 0..w {
                let p = i * w + j;
                if i + 1 < h {
                    out[p + w] += dv[p];
                    out[p] -= dv[p];
                }
                if j + 1 < w {
                    out[p + 1] += dh[p];
                    out[p] -= dh[p];
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TvParams {
    pub solver: SolverOptions,
    /// Used instead of the discrepancy rule when the data carry no noise.
    pub fallback_alpha: f64,
}

impl Default for TvParams {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            fallback_alpha: 1e-3,
        }
    }
}

/// Applies the discrepancy-to-fixed fallback for noise-free data.
pub fn effective_options(options: &SolverOptions, noise_norm: f64, fallback_alpha: f64) -> SolverOptions {
    let mut o = options.clone();
    if matches!(o.alpha_rule, AlphaRule::Discrepancy { .. }) && !(noise_norm > 0.0) {
        warn!("noise norm is zero; discrepancy rule replaced by fixed alpha {fallback_alpha:e}");
        o.alpha_rule = AlphaRule::Fixed {
            alpha: fallback_alpha,
        };
    }
    o
}

/// Total-variation reconstruction, clipped to `[0, 1]`.
pub fn tv(y: &Sinogram, k: &ProjectorMatrix, params: &TvParams) -> Result<(ImageGrid, SolverState)> {
    check_sinogram(y, k)?;
    let side = side_of(k);
    let grad = GradientOp::new(side, side);
    let options = effective_options(&params.solver, y.noise_norm, params.fallback_alpha);
    let p = VariationalProblem::new(k, &grad, &y.values, y.noise_norm, options)?;
    let (x, state) = solver::solve(&p, &vec![0.0; k.cols()])?;
    Ok((ImageGrid::square(side, x)?.clipped_unit(), state))
}

/// Loads an externally produced reconstruction of the given shape.
pub fn external_reconstruction(path: &Path, shape: (usize, usize)) -> Result<ImageGrid> {
    let mut img = ImageGrid::load(path)?;
    if img.shape() != shape {
        return Err(Error::DimensionMismatch {
            context: "external reconstruction pixels",
            expected: shape.0 * shape.1,
            actual: img.len(),
        });
    }
    let changed = img.clip_unit();
    if changed > 0 {
        warn!("{}: {changed} pixels outside [0, 1] were clipped", path.display());
    }
    Ok(img)
}

/// Choice of preliminary reconstructor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reconstructor {
    Fbp {
        #[serde(default = "default_cutoff")]
        cutoff: f64,
    },
    Tikhonov {
        /// Fixed parameter; the discrepancy principle is used when absent.
        #[serde(default)]
        theta: Option<f64>,
        #[serde(default = "default_tau")]
        tau: f64,
        /// Used when the data carry no noise and no `theta` is given.
        #[serde(default = "default_fallback_theta")]
        fallback_theta: f64,
    },
    Tv(TvParams),
    ExternalFile {
        path: PathBuf,
    },
    GroundTruth,
}

fn default_cutoff() -> f64 {
    1.0
}

fn default_tau() -> f64 {
    1.01
}

fn default_fallback_theta() -> f64 {
    1e-2
}

impl Reconstructor {
    pub fn fbp() -> Self {
        Reconstructor::Fbp { cutoff: 1.0 }
    }

    pub fn tikhonov_discrepancy() -> Self {
        Reconstructor::Tikhonov {
            theta: None,
            tau: default_tau(),
            fallback_theta: default_fallback_theta(),
        }
    }

    pub fn tv() -> Self {
        Reconstructor::Tv(TvParams::default())
    }

    /// Short label used in file names and metric tables.
    pub fn label(&self) -> &'static str {
        match self {
            Reconstructor::Fbp { .. } => "fbp",
            Reconstructor::Tikhonov { .. } => "tikhonov",
            Reconstructor::Tv(_) => "tv",
            Reconstructor::ExternalFile { .. } => "net",
            Reconstructor::GroundTruth => "x_gt",
        }
    }

    pub fn run(&self, y: &Sinogram, k: &ProjectorMatrix, x_gt: Option<&ImageGrid>) -> Result<PsiOutput> {
        let side = side_of(k);
        let mut out = PsiOutput {
            image: ImageGrid::zeros(side, side),
            theta: None,
            solver: None,
        };
        match self {
            Reconstructor::Fbp { cutoff } => out.image = fbp(y, k, *cutoff)?,
            Reconstructor::Tikhonov {
                theta,
                tau,
                fallback_theta,
            } => match theta {
                Some(t) => {
                    out.image = tikhonov(y, k, *t)?.clipped_unit();
                    out.theta = Some(*t);
                }
                None if !(y.noise_norm > 0.0) => {
                    warn!("noise norm is zero; Tikhonov uses fixed theta {fallback_theta:e}");
                    out.image = tikhonov(y, k, *fallback_theta)?.clipped_unit();
                    out.theta = Some(*fallback_theta);
                }
                None => {
                    let r = tikhonov_discrepancy(y, k, *tau)?;
                    out.image = r.image.clipped_unit();
                    out.theta = Some(r.theta);
                }
            },
            Reconstructor::Tv(params) => {
                let (img, state) = tv(y, k, params)?;
                out.image = img;
                out.solver = Some(state);
            }
            Reconstructor::ExternalFile { path } => {
                out.image = external_reconstruction(path, (side, side))?;
            }
            Reconstructor::GroundTruth => {
                let gt = x_gt.ok_or_else(|| {
                    Error::InvalidParameter("ground_truth reconstructor needs x_gt".into())
                })?;
                if gt.shape() != (side, side) {
                    return Err(Error::DimensionMismatch {
                        context: "ground truth pixels",
                        expected: side * side,
                        actual: gt.len(),
                    });
                }
                out.image = gt.clone();
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct PsiOutput {
    /// Reconstruction clipped to `[0, 1]`.
    pub image: ImageGrid,
    pub theta: Option<f64>,
    pub solver: Option<SolverState>,
}
