//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use graphla::geometry::ScanGeometry;
use graphla::graph::{intensity_weight, GraphParams};
use graphla::ImageGrid;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn random_image(rng: &mut ChaCha8Rng, side: usize) -> ImageGrid {
    ImageGrid::square(side, (0..side * side).map(|_| rng.random::<f64>()).collect()).unwrap()
}

/// Length of the segment `{p + t d}` inside the axis-aligned box, by slab
/// clipping. Independent of the incremental traversal in the library.
pub fn chord_in_box(p: [f64; 2], d: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> f64 {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..2 {
        if d[a].abs() < 1e-15 {
            // a ray on a pixel edge is assigned to the box above/right of it
            if p[a] < lo[a] || p[a] >= hi[a] {
                return 0.0;
            }
        } else {
            let ta = (lo[a] - p[a]) / d[a];
            let tb = (hi[a] - p[a]) / d[a];
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
    }
    (t1 - t0).max(0.0)
}

/// Dense `m x n` projector: every ray clipped against every pixel box.
pub fn dense_projector(g: &ScanGeometry) -> DMatrix<f64> {
    let side = g.image_side;
    let h = side as f64 / 2.0;
    let mut m = DMatrix::zeros(g.n_rays(), side * side);
    for row in 0..g.n_rays() {
        let (p, d) = g.ray(row);
        for i in 0..side {
            for j in 0..side {
                // pixel (i, j): row 0 at the top, x grows with j
                let lo = [-h + j as f64, h - (i + 1) as f64];
                let hi = [-h + (j + 1) as f64, h - i as f64];
                let len = chord_in_box(p, d, lo, hi);
                if len > 1e-12 {
                    m[(row, i * side + j)] = len;
                }
            }
        }
    }
    m
}

/// Total chord of every ray through the whole image.
pub fn box_chords(g: &ScanGeometry) -> Vec<f64> {
    let h = g.image_side as f64 / 2.0;
    (0..g.n_rays())
        .map(|row| {
            let (p, d) = g.ray(row);
            chord_in_box(p, d, [-h, -h], [h, h])
        })
        .collect()
}

/// Dense Laplacian straight from the definition, with `mu = ||W||_F`.
pub fn dense_laplacian(x: &ImageGrid, params: &GraphParams) -> DMatrix<f64> {
    let (hgt, wid) = x.shape();
    let n = hgt * wid;
    let mut w = DMatrix::zeros(n, n);
    for p in 0..n {
        for q in 0..n {
            let (pi, pj) = ((p / wid) as i64, (p % wid) as i64);
            let (qi, qj) = ((q / wid) as i64, (q % wid) as i64);
            let dist = match params.distance_norm {
                graphla::DistanceNorm::Linf => (pi - qi).abs().max((pj - qj).abs()),
                graphla::DistanceNorm::L1 => (pi - qi).abs() + (pj - qj).abs(),
            };
            if dist > 0 && dist as usize <= params.radius {
                w[(p, q)] = intensity_weight(x.as_slice()[p] - x.as_slice()[q], params.sigma);
            }
        }
    }
    let mu = w.norm();
    let mut l = -&w / mu;
    for p in 0..n {
        l[(p, p)] = w.row(p).sum() / mu;
    }
    l
}

/// Minimum of `1/2 ||K x - y||^2 + alpha ||L x||_1` for injective `K`, by
/// accelerated projected gradient on the box-constrained dual
/// `min_{|lambda| <= alpha} 1/2 b^T H^{-1} b`, `b = K^T y - L^T lambda`.
pub struct DualOracle {
    pub x: DVector<f64>,
    pub gamma: f64,
    /// Primal value minus the dual lower bound.
    pub gap: f64,
}

pub fn l1_objective(k: &DMatrix<f64>, l: &DMatrix<f64>, y: &DVector<f64>, alpha: f64, x: &DVector<f64>) -> f64 {
    0.5 * (k * x - y).norm_squared() + alpha * (l * x).abs().sum()
}

pub fn dual_oracle(k: &DMatrix<f64>, l: &DMatrix<f64>, y: &DVector<f64>, alpha: f64, iterations: usize) -> DualOracle {
    let h = k.transpose() * k;
    let chol = h.clone().cholesky().expect("K must be injective");
    let hinv = chol.inverse();
    let b0 = k.transpose() * y;
    let m = l * &hinv * l.transpose();
    let lip = m.symmetric_eigenvalues().max().max(f64::MIN_POSITIVE);
    let q = l.nrows();
    let x_of = |lam: &DVector<f64>| &hinv * (&b0 - l.transpose() * lam);
    let dual = |lam: &DVector<f64>| {
        let b = &b0 - l.transpose() * lam;
        0.5 * y.norm_squared() - 0.5 * (b.transpose() * &hinv * &b)[(0, 0)]
    };
    let clip = |v: DVector<f64>| v.map(|c| c.clamp(-alpha, alpha));
    let mut lam = DVector::zeros(q);
    let mut z = lam.clone();
    let mut t = 1.0f64;
    let mut best_x = x_of(&lam);
    let mut best = l1_objective(k, l, y, alpha, &best_x);
    let mut lower = dual(&lam);
    for it in 0..iterations {
        let grad = -(l * x_of(&z));
        let next = clip(&z - grad / lip);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = &next + (&next - &lam) * ((t - 1.0) / t_next);
        lam = next;
        t = t_next;
        if it % 50 == 0 || it + 1 == iterations {
            let x = x_of(&lam);
            let g = l1_objective(k, l, y, alpha, &x);
            if g < best {
                best = g;
                best_x = x;
            }
            lower = lower.max(dual(&lam));
        }
    }
    DualOracle {
        x: best_x,
        gamma: best,
        gap: best - lower,
    }
}
