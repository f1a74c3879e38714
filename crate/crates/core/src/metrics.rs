//! Reconstruction quality measures.
//!
//! `rre` is the squared error ratio and `psnr` uses the whole-image error
//! norm with the constant 255: `20 log10(255 / ||x_gt - x||)`. Neither is the
//! textbook per-pixel definition. Images are taken as they are, in `[0, 1]`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::linalg::{dist2, dot};

fn same_shape(x: &ImageGrid, x_gt: &ImageGrid) -> Result<()> {
    if x.shape() != x_gt.shape() {
        return Err(Error::DimensionMismatch {
            context: "metric operands",
            expected: x_gt.len(),
            actual: x.len(),
        });
    }
    Ok(())
}

/// `||x_gt - x||^2 / ||x_gt||^2`
pub fn rre(x: &ImageGrid, x_gt: &ImageGrid) -> Result<f64> {
    same_shape(x, x_gt)?;
    let g = dot(x_gt.as_slice(), x_gt.as_slice());
    if g == 0.0 {
        return Err(Error::ZeroGroundTruth);
    }
    Ok(dist2(x.as_slice(), x_gt.as_slice()).powi(2) / g)
}

/// `20 log10(255 / ||x_gt - x||)`; `+inf` for identical images.
pub fn psnr(x: &ImageGrid, x_gt: &ImageGrid) -> Result<f64> {
    same_shape(x, x_gt)?;
    let e = dist2(x.as_slice(), x_gt.as_slice());
    Ok(if e == 0.0 {
        f64::INFINITY
    } else {
        20.0 * (255.0 / e).log10()
    })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 1e-4;
const C2: f64 = 9e-4;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable weighted filtering over valid window positions only.
fn filter_valid(data: &[f64], h: usize, w: usize, win: &[f64]) -> Vec<f64> {
    let k = win.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..k).map(|t| win[t] * data[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..k).map(|t| win[t] * rows[(i + t) * ow + j]).sum();
        }
    }
    out
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// dynamic range 1 and the usual constants `(0.01)^2`, `(0.03)^2`.
pub fn ssim(x: &ImageGrid, x_gt: &ImageGrid) -> Result<f64> {
    same_shape(x, x_gt)?;
    let (h, w) = x.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            window: SSIM_WINDOW,
        });
    }
    let win = gaussian_window();
    let a = x.as_slice();
    let b = x_gt.as_slice();
    let prod = |f: &dyn Fn(usize) -> f64| (0..a.len()).map(f).collect::<Vec<f64>>();
    let mu_a = filter_valid(a, h, w, &win);
    let mu_b = filter_valid(b, h, w, &win);
    let aa = filter_valid(&prod(&|i| a[i] * a[i]), h, w, &win);
    let bb = filter_valid(&prod(&|i| b[i] * b[i]), h, w, &win);
    let ab = filter_valid(&prod(&|i| a[i] * b[i]), h, w, &win);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2))
            / ((ma * ma + mb * mb + C1) * (va + vb + C2));
    }
    Ok(total / mu_a.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsReport {
    pub rre: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricsReport {
    pub fn evaluate(x: &ImageGrid, x_gt: &ImageGrid) -> Result<Self> {
        Ok(Self {
            rre: rre(x, x_gt)?,
            psnr: psnr(x, x_gt)?,
            ssim: ssim(x, x_gt)?,
        })
    }

    pub const CSV_HEADER: &'static str = "rre,psnr,ssim";

    pub fn csv_row(&self) -> String {
        format!("{:.10e},{:.10},{:.10}", self.rre, self.psnr, self.ssim)
    }
}
