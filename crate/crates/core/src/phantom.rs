//! Synthetic test objects: piecewise-constant ellipses and lines on a dark
//! background, plus a Shepp-Logan style head phantom.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    Ellipses,
    SheppLoganLike,
}

/// Ellipse in normalized coordinates `[-1, 1]^2` (y up).
#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    /// rotation, radians
    phi: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.phi.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

// Modified Shepp-Logan table (Toft's contrast-enhanced intensities).
const SHEPP_LOGAN: [(f64, f64, f64, f64, f64, f64); 10] = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

/// Renders a phantom of `side x side` pixels with values in `[0, 1]`.
/// `seed` drives the random ellipse layout; the Shepp-Logan phantom ignores it.
pub fn make_phantom(kind: PhantomKind, side: usize, seed: u64) -> Result<ImageGrid> {
    if side < 8 {
        return Err(Error::InvalidParameter(format!(
            "phantom side must be at least 8, got {side}"
        )));
    }
    let mut img = ImageGrid::zeros(side, side);
    match kind {
        PhantomKind::SheppLoganLike => {
            let ellipses: Vec<Ellipse> = SHEPP_LOGAN
                .iter()
                .map(|&(value, a, b, cx, cy, deg)| Ellipse {
                    cx,
                    cy,
                    a,
                    b,
                    phi: f64::to_radians(deg),
                    value,
                })
                .collect();
            rasterize(&mut img, |x, y| {
                ellipses
                    .iter()
                    .filter(|e| e.contains(x, y))
                    .map(|e| e.value)
                    .sum::<f64>()
            });
        }
        PhantomKind::Ellipses => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (ellipses, lines) = random_layout(&mut rng);
            rasterize(&mut img, |x, y| {
                // later shapes paint over earlier ones
                let mut v = 0.0;
                for e in &ellipses {
                    if e.contains(x, y) {
                        v = e.value;
                    }
                }
                for l in &lines {
                    if l.contains(x, y) {
                        v = l.value;
                    }
                }
                v
            });
        }
    }
    img.clip_unit();
    Ok(img)
}

/// Thick line segment.
struct Line {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    half_width: f64,
    value: f64,
}

impl Line {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (self.x1 - self.x0, self.y1 - self.y0);
        let len2 = dx * dx + dy * dy;
        let t = (((x - self.x0) * dx + (y - self.y0) * dy) / len2).clamp(0.0, 1.0);
        let (px, py) = (self.x0 + t * dx, self.y0 + t * dy);
        (x - px).hypot(y - py) <= self.half_width
    }
}

fn random_layout(rng: &mut ChaCha8Rng) -> (Vec<Ellipse>, Vec<Line>) {
    // a fixed, well separated palette guarantees several distinct gray levels
    const LEVELS: [f64; 6] = [0.25, 0.4, 0.55, 0.7, 0.85, 1.0];
    let n_ellipses = rng.random_range(4..=7);
    let mut ellipses = Vec::with_capacity(n_ellipses);
    for k in 0..n_ellipses {
        // staying inside radius 0.8 keeps the corners empty
        let r = rng.random_range(0.0..0.35);
        let ang = rng.random_range(0.0..std::f64::consts::TAU);
        let a = rng.random_range(0.12..0.4);
        let b = rng.random_range(0.08..0.3);
        ellipses.push(Ellipse {
            cx: r * ang.cos(),
            cy: r * ang.sin(),
            a,
            b,
            phi: rng.random_range(0.0..std::f64::consts::PI),
            value: LEVELS[(k + rng.random_range(0..LEVELS.len())) % LEVELS.len()],
        });
    }
    // the bottom shape is too large to be covered and the top one is drawn
    // last, so both of their distinct levels always survive
    let top = n_ellipses - 1;
    ellipses[0].value = LEVELS[0];
    ellipses[0].a = ellipses[0].a.max(0.45);
    ellipses[0].b = ellipses[0].b.max(0.35);
    ellipses[top].value = LEVELS[3];
    ellipses[top].a = ellipses[top].a.min(0.18);
    ellipses[top].b = ellipses[top].b.min(0.14);

    let n_lines = rng.random_range(1..=2);
    let mut lines = Vec::with_capacity(n_lines);
    for _ in 0..n_lines {
        let ang = rng.random_range(0.0..std::f64::consts::PI);
        let half = rng.random_range(0.2..0.45);
        let (cx, cy) = (rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
        lines.push(Line {
            x0: cx - half * ang.cos(),
            y0: cy - half * ang.sin(),
            x1: cx + half * ang.cos(),
            y1: cy + half * ang.sin(),
            half_width: rng.random_range(0.015..0.035),
            value: LEVELS[rng.random_range(0..LEVELS.len())],
        });
    }
    (ellipses, lines)
}

fn rasterize(img: &mut ImageGrid, f: impl Fn(f64, f64) -> f64) {
    let side = img.height();
    let s = side as f64;
    for i in 0..side {
        let y = 1.0 - 2.0 * (i as f64 + 0.5) / s;
        for j in 0..side {
            let x = 2.0 * (j as f64 + 0.5) / s - 1.0;
            img.set(i, j, f(x, y));
        }
    }
}
