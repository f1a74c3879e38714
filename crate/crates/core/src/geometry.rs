//! Scan geometries, the discrete Radon operator and sinogram simulation.
//!
//! The image occupies the square `[-N/2, N/2]^2` with unit pixels. For a
//! projection angle `theta`, the detector axis is `e_s = (cos theta, sin theta)`
//! and the central ray direction is `d = (-sin theta, cos theta)`, so at
//! `theta = 0` rays run vertically through image columns. Sinogram row `i`
//! belongs to angle `i / n_detector` and detector cell `i % n_detector`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::linalg::norm2;
use crate::sparse::{CsrMatrix, LinearOperator};

/// Largest admissible projection angle, in degrees.
pub const MAX_ANGLE_DEG: f64 = 179.0;

/// Intersection lengths below this are rounding debris at pixel corners.
const MIN_SEGMENT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamMode {
    Parallel,
    Fan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanGeometry {
    pub mode: BeamMode,
    pub image_side: usize,
    pub n_angles: usize,
    /// Projection angles in degrees.
    pub angles: Vec<f64>,
    pub n_detector: usize,
    pub detector_spacing: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector_radius: Option<f64>,
}

/// `n_a` angles evenly spread over `[0, 179]`, both endpoints included.
pub fn even_angles(n_angles: usize) -> Vec<f64> {
    match n_angles {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n_angles)
            .map(|k| MAX_ANGLE_DEG * k as f64 / (n_angles - 1) as f64)
            .collect(),
    }
}

/// Detector cell count covering the image diagonal: `floor(sqrt(2 n))`.
pub fn auto_detector_count(image_side: usize) -> usize {
    let n = (image_side * image_side) as f64;
    (2.0 * n).sqrt().floor() as usize
}

impl ScanGeometry {
    pub fn parallel(image_side: usize, n_angles: usize) -> Self {
        Self {
            mode: BeamMode::Parallel,
            image_side,
            n_angles,
            angles: even_angles(n_angles),
            n_detector: auto_detector_count(image_side).max(1),
            detector_spacing: 1.0,
            source_radius: None,
            detector_radius: None,
        }
    }

    /// Fan-beam geometry with source and detector radii at twice the image
    /// half-diagonal and a flat detector wide enough to catch every ray that
    /// crosses the image circumcircle.
    pub fn fan(image_side: usize, n_angles: usize) -> Self {
        let half_diag = image_side as f64 * std::f64::consts::SQRT_2 / 2.0;
        let rs = 2.0 * half_diag;
        let rd = 2.0 * half_diag;
        let n_detector = auto_detector_count(image_side).max(1);
        let half_fan = (half_diag / rs).asin();
        let width = 2.0 * (rs + rd) * half_fan.tan();
        Self {
            mode: BeamMode::Fan,
            image_side,
            n_angles,
            angles: even_angles(n_angles),
            n_detector,
            detector_spacing: width / n_detector as f64,
            source_radius: Some(rs),
            detector_radius: Some(rd),
        }
    }

    pub fn with_angles(mut self, angles: Vec<f64>) -> Self {
        self.n_angles = angles.len();
        self.angles = angles;
        self
    }

    pub fn with_detector(mut self, n_detector: usize, spacing: f64) -> Self {
        self.n_detector = n_detector;
        self.detector_spacing = spacing;
        self
    }

    pub fn n_pixels(&self) -> usize {
        self.image_side * self.image_side
    }

    pub fn n_rays(&self) -> usize {
        self.n_detector * self.n_angles
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Geometry(msg));
        if self.image_side == 0 {
            return bad("image_side must be positive".into());
        }
        if self.n_angles == 0 || self.n_angles != self.angles.len() {
            return bad(format!(
                "n_angles = {} but {} angles listed",
                self.n_angles,
                self.angles.len()
            ));
        }
        if self
            .angles
            .iter()
            .any(|a| !a.is_finite() || *a < 0.0 || *a > MAX_ANGLE_DEG)
        {
            return bad("angles must lie in [0, 179] degrees".into());
        }
        if self.angles.windows(2).any(|w| w[1] <= w[0]) {
            return bad("angles must be strictly increasing".into());
        }
        if self.n_detector == 0 {
            return bad("n_detector must be positive".into());
        }
        if !(self.detector_spacing.is_finite() && self.detector_spacing > 0.0) {
            return bad("detector_spacing must be positive".into());
        }
        if self.mode == BeamMode::Fan {
            let half_diag = self.image_side as f64 * std::f64::consts::SQRT_2 / 2.0;
            match (self.source_radius, self.detector_radius) {
                (Some(rs), Some(rd)) => {
                    if !(rs.is_finite() && rs > half_diag) {
                        return bad(format!(
                            "fan source radius {rs} lies inside the image support (half-diagonal {half_diag:.3})"
                        ));
                    }
                    if !(rd.is_finite() && rd > 0.0) {
                        return bad("detector_radius must be positive".into());
                    }
                }
                _ => return bad("fan mode needs source_radius and detector_radius".into()),
            }
        }
        Ok(())
    }

    fn detector_offset(&self, k: usize) -> f64 {
        (k as f64 - (self.n_detector as f64 - 1.0) / 2.0) * self.detector_spacing
    }

    /// Ray `(point, unit direction)` for sinogram row `row`.
    pub fn ray(&self, row: usize) -> ([f64; 2], [f64; 2]) {
        let a = row / self.n_detector;
        let k = row % self.n_detector;
        let theta = self.angles[a].to_radians();
        let e_s = [snap(theta.cos()), snap(theta.sin())];
        let d = [-e_s[1], e_s[0]];
        let s = self.detector_offset(k);
        match self.mode {
            BeamMode::Parallel => ([s * e_s[0], s * e_s[1]], d),
            BeamMode::Fan => {
                let rs = self.source_radius.unwrap_or_default();
                let rd = self.detector_radius.unwrap_or_default();
                let src = [-rs * d[0], -rs * d[1]];
                let det = [rd * d[0] + s * e_s[0], rd * d[1] + s * e_s[1]];
                let dir = [det[0] - src[0], det[1] - src[1]];
                let len = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
                let u = [snap(dir[0] / len), snap(dir[1] / len)];
                (src, u)
            }
        }
    }
}

fn snap(v: f64) -> f64 {
    if v.abs() < 1e-12 {
        0.0
    } else {
        v
    }
}

/// Siddon traversal of the line `p + t d` (with `d` a unit vector) through
/// an `side x side` unit-pixel grid centred at the origin. Returns
/// `(pixel index, intersection length)` pairs with strictly positive lengths.
pub fn trace_ray(side: usize, p: [f64; 2], d: [f64; 2]) -> Vec<(usize, f64)> {
    let half = side as f64 / 2.0;
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    for ax in 0..2 {
        if d[ax] == 0.0 {
            // half-open slab so a ray on the far boundary misses
            if p[ax] < -half || p[ax] >= half {
                return Vec::new();
            }
        } else {
            let t0 = (-half - p[ax]) / d[ax];
            let t1 = (half - p[ax]) / d[ax];
            t_enter = t_enter.max(t0.min(t1));
            t_exit = t_exit.min(t0.max(t1));
        }
    }
    if !(t_exit - t_enter > MIN_SEGMENT) {
        return Vec::new();
    }

    let mut ts = Vec::with_capacity(2 * side + 2);
    ts.push(t_enter);
    for ax in 0..2 {
        if d[ax] == 0.0 {
            continue;
        }
        for k in 1..side {
            let t = (-half + k as f64 - p[ax]) / d[ax];
            if t > t_enter && t < t_exit {
                ts.push(t);
            }
        }
    }
    ts.push(t_exit);
    ts.sort_by(f64::total_cmp);

    let last = side as isize - 1;
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(ts.len());
    for w in ts.windows(2) {
        let len = w[1] - w[0];
        if len <= MIN_SEGMENT {
            continue;
        }
        let tm = 0.5 * (w[0] + w[1]);
        let x = p[0] + tm * d[0];
        let y = p[1] + tm * d[1];
        let j = ((x + half).floor() as isize).clamp(0, last) as usize;
        let i = ((half - y).floor() as isize).clamp(0, last) as usize;
        let idx = i * side + j;
        match out.last_mut() {
            Some((prev, l)) if *prev == idx => *l += len,
            _ => out.push((idx, len)),
        }
    }
    out
}

/// The sparse discrete Radon operator `K` of a scan geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorMatrix {
    geometry: ScanGeometry,
    matrix: CsrMatrix,
}

/// Assembles `K` row by row with exact ray-pixel intersection lengths.
pub fn build_projector(geom: &ScanGeometry) -> Result<ProjectorMatrix> {
    geom.validate()?;
    let side = geom.image_side;
    let rows = (0..geom.n_rays())
        .map(|r| {
            let (p, d) = geom.ray(r);
            trace_ray(side, p, d)
        })
        .collect();
    let matrix = CsrMatrix::from_rows(geom.n_pixels(), rows)?;
    Ok(ProjectorMatrix {
        geometry: geom.clone(),
        matrix,
    })
}

impl ProjectorMatrix {
    pub fn geometry(&self) -> &ScanGeometry {
        &self.geometry
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// `y = K x` as a clean sinogram.
    pub fn project(&self, x: &ImageGrid) -> Result<Sinogram> {
        let side = self.geometry.image_side;
        if x.shape() != (side, side) {
            return Err(Error::DimensionMismatch {
                context: "projector input image",
                expected: self.cols(),
                actual: x.len(),
            });
        }
        Ok(Sinogram::clean(self.apply(x.as_slice()), self.geometry.clone()))
    }

    /// `K^T s` as an image.
    pub fn back_project(&self, s: &Sinogram) -> Result<ImageGrid> {
        if s.values.len() != self.rows() {
            return Err(Error::DimensionMismatch {
                context: "sinogram for back projection",
                expected: self.rows(),
                actual: s.values.len(),
            });
        }
        let side = self.geometry.image_side;
        ImageGrid::square(side, self.apply_transpose(&s.values))
    }

    /// Operator 2-norm estimate by power iteration on `K^T K`.
    pub fn norm_estimate(&self, iterations: usize) -> f64 {
        operator_norm(self, iterations)
    }
}

/// Power-iteration estimate of `||A||_2`, started from the ones vector.
pub fn operator_norm(a: &dyn LinearOperator, iterations: usize) -> f64 {
    let mut v = vec![1.0 / (a.cols() as f64).sqrt(); a.cols()];
    let mut sigma = 0.0;
    for _ in 0..iterations.max(1) {
        let w = a.apply_transpose(&a.apply(&v));
        let nw = norm2(&w);
        if nw == 0.0 {
            return 0.0;
        }
        sigma = nw.sqrt();
        v = w.into_iter().map(|x| x / nw).collect();
    }
    sigma
}

impl LinearOperator for ProjectorMatrix {
    fn rows(&self) -> usize {
        self.matrix.rows()
    }

    fn cols(&self) -> usize {
        self.matrix.cols()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        self.matrix.apply_into(x, out)
    }

    fn apply_transpose_into(&self, y: &[f64], out: &mut [f64]) {
        self.matrix.apply_transpose_into(y, out)
    }
}

/// Measured (or simulated) projection data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sinogram {
    pub values: Vec<f64>,
    pub geometry: ScanGeometry,
    /// Relative noise level `delta`.
    pub noise_level: f64,
    /// Absolute noise norm `delta * ||y||_2`.
    pub noise_norm: f64,
}

impl Sinogram {
    pub fn clean(values: Vec<f64>, geometry: ScanGeometry) -> Self {
        Self {
            values,
            geometry,
            noise_level: 0.0,
            noise_norm: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Writes `<path>` as raw little-endian f64 and `<path>.json` beside it.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, encode_values(&self.values))?;
        std::fs::write(sidecar_path(path), encode_sidecar(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let side = sidecar_path(path);
        for p in [path, side.as_path()] {
            if !p.exists() {
                return Err(Error::MissingFile(p.to_path_buf()));
            }
        }
        let bin = std::fs::read(path)?;
        let meta = std::fs::read_to_string(side)?;
        decode_sinogram(&bin, &meta)
    }
}

/// Returns `y + delta ||y|| xi / ||xi||` with `xi` standard Gaussian drawn
/// from a ChaCha8 stream seeded with `seed`.
pub fn add_noise(y: &Sinogram, delta: f64, seed: u64) -> Result<Sinogram> {
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise level must be finite and non-negative, got {delta}"
        )));
    }
    let y_norm = norm2(&y.values);
    if delta == 0.0 || y_norm == 0.0 {
        return Ok(Sinogram {
            noise_level: delta,
            noise_norm: 0.0,
            ..y.clone()
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xi: Vec<f64> = (0..y.values.len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let scale = delta * y_norm / norm2(&xi);
    let values = y
        .values
        .iter()
        .zip(&xi)
        .map(|(v, e)| v + scale * e)
        .collect();
    Ok(Sinogram {
        values,
        geometry: y.geometry.clone(),
        noise_level: delta,
        noise_norm: delta * y_norm,
    })
}

#[derive(Serialize, Deserialize)]
struct SinogramSidecar {
    geometry: ScanGeometry,
    noise_level: f64,
    noise_norm: f64,
    len: usize,
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

pub fn encode_values(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn encode_sidecar(s: &Sinogram) -> Result<String> {
    Ok(serde_json::to_string_pretty(&SinogramSidecar {
        geometry: s.geometry.clone(),
        noise_level: s.noise_level,
        noise_norm: s.noise_norm,
        len: s.values.len(),
    })?)
}

/// Parses a raw little-endian f64 sinogram together with its JSON sidecar.
pub fn decode_sinogram(bin: &[u8], sidecar: &str) -> Result<Sinogram> {
    let meta: SinogramSidecar = serde_json::from_str(sidecar)?;
    meta.geometry.validate()?;
    let expected = meta
        .geometry
        .n_detector
        .checked_mul(meta.geometry.n_angles)
        .ok_or_else(|| Error::format("sinogram", "ray count overflows"))?;
    if meta.len != expected {
        return Err(Error::format(
            "sinogram",
            format!("sidecar len {} but geometry has {} rays", meta.len, expected),
        ));
    }
    if Some(bin.len()) != expected.checked_mul(8) {
        return Err(Error::format(
            "sinogram",
            format!("expected {} bytes, found {}", expected.saturating_mul(8), bin.len()),
        ));
    }
    if !(meta.noise_level.is_finite() && meta.noise_level >= 0.0)
        || !(meta.noise_norm.is_finite() && meta.noise_norm >= 0.0)
    {
        return Err(Error::format("sinogram", "noise metadata must be finite and non-negative"));
    }
    let values = bin
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(Sinogram {
        values,
        geometry: meta.geometry,
        noise_level: meta.noise_level,
        noise_norm: meta.noise_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_scale_dimensions() {
        let g = ScanGeometry::fan(256, 60);
        assert_eq!(g.n_detector, 362);
        assert_eq!(g.n_rays(), 21720);
        assert_eq!(g.n_pixels(), 65536);
    }

    #[test]
    fn single_pixel_single_ray() {
        let g = ScanGeometry::parallel(1, 1);
        assert_eq!(g.n_detector, 1);
        let k = build_projector(&g).unwrap();
        let row: Vec<_> = k.matrix().row(0).collect();
        assert_eq!(row, vec![(0, 1.0)]);
    }

    #[test]
    fn even_angles_cover_closed_interval() {
        let a = even_angles(60);
        assert_eq!(a.len(), 60);
        assert_eq!(a[0], 0.0);
        assert_eq!(*a.last().unwrap(), 179.0);
        assert!(a.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn row_layout_is_angle_major() {
        let g = ScanGeometry::parallel(4, 2)
            .with_angles(vec![0.0, 90.0])
            .with_detector(4, 1.0);
        let k = build_projector(&g).unwrap();
        // angle 0: vertical ray through column 0 (x in [-2,-1])
        let cols: Vec<usize> = k.matrix().row(0).map(|(c, _)| c).collect();
        assert_eq!(cols, vec![0, 4, 8, 12]);
        // angle 90, detector 0: horizontal ray at s = -1.5 along -x direction
        // e_s = (0, 1) so the ray sits at y = -1.5, i.e. the bottom row
        let cols: Vec<usize> = k.matrix().row(4).map(|(c, _)| c).collect();
        assert_eq!(cols, vec![12, 13, 14, 15]);
    }

    #[test]
    fn fan_source_inside_support_is_rejected() {
        let mut g = ScanGeometry::fan(16, 4);
        g.source_radius = Some(5.0);
        assert!(matches!(build_projector(&g), Err(Error::Geometry(_))));
    }

    #[test]
    fn invalid_angles_are_rejected() {
        let g = ScanGeometry::parallel(8, 2).with_angles(vec![10.0, 5.0]);
        assert!(g.validate().is_err());
        let g = ScanGeometry::parallel(8, 1).with_angles(vec![180.0]);
        assert!(g.validate().is_err());
    }

    #[test]
    fn missing_rays_give_empty_rows() {
        let g = ScanGeometry::parallel(4, 1).with_detector(3, 10.0);
        let k = build_projector(&g).unwrap();
        assert_eq!(k.rows(), 3);
        assert_eq!(k.matrix().row(0).count(), 0);
        assert_eq!(k.matrix().row(1).count(), 4);
    }

    #[test]
    fn noise_is_exact_and_seeded() {
        let g = ScanGeometry::parallel(8, 5);
        let k = build_projector(&g).unwrap();
        let x = ImageGrid::filled(8, 8, 0.5);
        let y = k.project(&x).unwrap();
        let a = add_noise(&y, 0.02, 7).unwrap();
        let b = add_noise(&y, 0.02, 7).unwrap();
        assert_eq!(a, b);
        let rel = crate::linalg::dist2(&a.values, &y.values) / norm2(&y.values);
        assert!((rel - 0.02).abs() < 1e-12);
        assert!((a.noise_norm - 0.02 * norm2(&y.values)).abs() < 1e-12);
        let z = add_noise(&y, 0.0, 7).unwrap();
        assert_eq!(z.values, y.values);
        assert!(add_noise(&y, -0.1, 7).is_err());
    }

    #[test]
    fn sinogram_decode_checks_lengths() {
        let g = ScanGeometry::parallel(4, 2);
        let s = Sinogram::clean(vec![1.0; g.n_rays()], g);
        let bin = encode_values(&s.values);
        let meta = encode_sidecar(&s).unwrap();
        assert_eq!(decode_sinogram(&bin, &meta).unwrap(), s);
        assert!(decode_sinogram(&bin[..bin.len() - 8], &meta).is_err());
        assert!(decode_sinogram(&bin, "{}").is_err());
    }
}
