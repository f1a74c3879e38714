//! Majorization-minimization on a restarted generalized Krylov subspace for
//!
//! ```text
//! min_x  1/2 ||K x - y||^2 + alpha ||L x||_1
//! ```
//!
//! The l1 term is smoothed to `sum_i sqrt(t_i^2 + eps^2)`, `t = L x`, and
//! majorized at the current iterate by a weighted quadratic. Each outer step
//! minimizes the majorant over `span V`, picks `alpha` if requested by the
//! discrepancy principle on the projected residual, then grows `V` by the
//! gradient of the smoothed functional at the new iterate.

use std::io::Write;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm1, norm2, scale, sub};
use crate::sparse::LinearOperator;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum AlphaRule {
    Fixed { alpha: f64 },
    /// Residual driven to `tau * noise_norm`.
    Discrepancy { tau: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub alpha_rule: AlphaRule,
    pub smoothing_eps: f64,
    pub max_outer: usize,
    pub basis_cap: usize,
    /// Stop once `||x_{j+1} - x_j|| / ||x_j||` falls below this.
    pub tol: f64,
    /// Bisection interval for `log10(alpha)`.
    pub log10_alpha_range: [f64; 2],
    pub bisection_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            alpha_rule: AlphaRule::Discrepancy { tau: 1.01 },
            smoothing_eps: 1e-4,
            max_outer: 200,
            basis_cap: 30,
            tol: 1e-4,
            log10_alpha_range: [-12.0, 4.0],
            bisection_steps: 40,
        }
    }
}

impl SolverOptions {
    pub fn fixed(alpha: f64) -> Self {
        Self {
            alpha_rule: AlphaRule::Fixed { alpha },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        match self.alpha_rule {
            AlphaRule::Fixed { alpha } if !(alpha.is_finite() && alpha >= 0.0) => {
                return bad(format!("fixed alpha must be finite and >= 0, got {alpha}"))
            }
            AlphaRule::Discrepancy { tau } if !(tau.is_finite() && tau >= 1.0) => {
                return bad(format!("discrepancy tau must be >= 1, got {tau}"))
            }
            _ => {}
        }
        if !(self.smoothing_eps.is_finite() && self.smoothing_eps > 0.0) {
            return bad(format!("smoothing eps must be > 0, got {}", self.smoothing_eps));
        }
        if self.basis_cap < 2 {
            return bad(format!("basis cap must be >= 2, got {}", self.basis_cap));
        }
        let [lo, hi] = self.log10_alpha_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return bad(format!("invalid alpha range [{lo}, {hi}]"));
        }
        if !(self.tol >= 0.0) {
            return bad("tolerance must be >= 0".into());
        }
        Ok(())
    }
}

/// Data of one instance of the variational problem.
pub struct VariationalProblem<'a> {
    pub k: &'a dyn LinearOperator,
    pub l: &'a dyn LinearOperator,
    pub y: &'a [f64],
    /// Absolute noise norm, the discrepancy target before the factor `tau`.
    pub noise_norm: f64,
    pub options: SolverOptions,
}

impl<'a> VariationalProblem<'a> {
    pub fn new(
        k: &'a dyn LinearOperator,
        l: &'a dyn LinearOperator,
        y: &'a [f64],
        noise_norm: f64,
        options: SolverOptions,
    ) -> Result<Self> {
        let p = Self {
            k,
            l,
            y,
            noise_norm,
            options,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.k.cols()
    }

    pub fn validate(&self) -> Result<()> {
        self.options.validate()?;
        if self.y.len() != self.k.rows() {
            return Err(Error::DimensionMismatch {
                context: "data vector",
                expected: self.k.rows(),
                actual: self.y.len(),
            });
        }
        if self.l.cols() != self.k.cols() {
            return Err(Error::DimensionMismatch {
                context: "regularization operator columns",
                expected: self.k.cols(),
                actual: self.l.cols(),
            });
        }
        if matches!(self.options.alpha_rule, AlphaRule::Discrepancy { .. })
            && !(self.noise_norm.is_finite() && self.noise_norm > 0.0)
        {
            return Err(Error::InvalidParameter(
                "discrepancy rule needs a positive noise norm".into(),
            ));
        }
        Ok(())
    }

    /// Objective terms at `x` for the given `alpha`.
    pub fn objective(&self, x: &[f64], alpha: f64) -> Objective {
        let r = sub(&self.k.apply(x), self.y);
        let t = self.l.apply(x);
        let eps = self.options.smoothing_eps;
        let fidelity = 0.5 * dot(&r, &r);
        let l1 = norm1(&t);
        let smooth: f64 = t.iter().map(|v| v.hypot(eps)).sum();
        Objective {
            gamma: fidelity + alpha * l1,
            fidelity,
            l1_term: l1,
            smoothed_gamma: fidelity + alpha * smooth,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Objective {
    /// `1/2 ||Kx - y||^2 + alpha ||Lx||_1`
    pub gamma: f64,
    /// `1/2 ||Kx - y||^2`
    pub fidelity: f64,
    /// `||Lx||_1`
    pub l1_term: f64,
    /// Same with `|t|` replaced by `sqrt(t^2 + eps^2)`.
    pub smoothed_gamma: f64,
}

pub fn objective(p: &VariationalProblem<'_>, x: &[f64], alpha: f64) -> Objective {
    p.objective(x, alpha)
}

/// Evaluated form of the inequality
/// `G1(x) <= 2 G2(x) + ||y1 - y2||^2 + max(alpha, 1) ||(L1 - L2) x||_1`
/// between two problems sharing `K` and `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaInequality {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl GammaInequality {
    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs
    }
}

pub fn gamma_inequality(
    p1: &VariationalProblem<'_>,
    p2: &VariationalProblem<'_>,
    x: &[f64],
    alpha: f64,
) -> GammaInequality {
    let g1 = p1.objective(x, alpha).gamma;
    let g2 = p2.objective(x, alpha).gamma;
    let dy = sub(p1.y, p2.y);
    let dl = sub(&p1.l.apply(x), &p2.l.apply(x));
    let lhs = g1;
    let rhs = 2.0 * g2 + dot(&dy, &dy) + alpha.max(1.0) * norm1(&dl);
    // both sides are sums of the same rounded terms; allow a few ulps
    let slack = 1e-12 * rhs.abs().max(lhs.abs());
    GammaInequality {
        lhs,
        rhs,
        holds: lhs <= rhs + slack,
    }
}

pub fn gamma_inequality_check(
    p1: &VariationalProblem<'_>,
    p2: &VariationalProblem<'_>,
    x: &[f64],
    alpha: f64,
) -> bool {
    gamma_inequality(p1, p2, x, alpha).holds
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Tolerance,
    MaxOuter,
    ZeroExpansion,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub alpha: f64,
    /// Smoothed objective at the previous iterate, with this step's alpha.
    pub objective_before: f64,
    /// Smoothed objective at the new iterate.
    pub objective_after: f64,
    pub gamma: f64,
    pub residual: f64,
    pub relative_change: f64,
    pub basis_dim: usize,
    pub restarts: usize,
    /// `||V^T g||` for the majorant gradient `g` at the new iterate (old
    /// weights), relative to the summed norms of the terms of `g`.
    pub projected_gradient: f64,
    pub alpha_feasible: bool,
}

#[derive(Debug, Clone)]
pub struct SolverState {
    pub basis: Vec<Vec<f64>>,
    pub x: Vec<f64>,
    pub weights: Vec<f64>,
    pub history: Vec<IterationRecord>,
    pub restarts: usize,
    pub stop: StopReason,
    /// Worst `|<v_i, v_j> - delta_ij|` seen when adding basis vectors.
    pub max_orthonormality_error: f64,
}

impl SolverState {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    pub fn alpha_trace(&self) -> Vec<f64> {
        self.history.iter().map(|h| h.alpha).collect()
    }

    pub fn objective_trace(&self) -> Vec<f64> {
        self.history.iter().map(|h| h.objective_after).collect()
    }

    pub fn residual_trace(&self) -> Vec<f64> {
        self.history.iter().map(|h| h.residual).collect()
    }

    pub fn final_alpha(&self) -> f64 {
        self.history.last().map_or(0.0, |h| h.alpha)
    }

    pub fn final_residual(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |h| h.residual)
    }

    /// Largest relative increase of the smoothed objective over a single
    /// step at fixed alpha and weights. Non-positive means monotone.
    pub fn worst_monotonicity_violation(&self) -> f64 {
        self.history
            .iter()
            .map(|h| (h.objective_after - h.objective_before) / h.objective_before.abs().max(f64::MIN_POSITIVE))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `max |V^T V - I|` over the current basis.
    pub fn orthonormality_error(&self) -> f64 {
        let k = self.basis.len();
        let mut worst: f64 = 0.0;
        for i in 0..k {
            for j in 0..=i {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(&self.basis[i], &self.basis[j]) - target).abs());
            }
        }
        worst
    }

    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "iteration,alpha,objective,gamma,residual,relative_change,basis_dim,restarts,alpha_feasible"
        )?;
        for h in &self.history {
            writeln!(
                w,
                "{},{:.10e},{:.10e},{:.10e},{:.10e},{:.6e},{},{},{}",
                h.iteration,
                h.alpha,
                h.objective_after,
                h.gamma,
                h.residual,
                h.relative_change,
                h.basis_dim,
                h.restarts,
                h.alpha_feasible
            )?;
        }
        Ok(())
    }
}

/// Orthonormal basis together with its images under `K` and `L`.
struct Subspace {
    v: Vec<Vec<f64>>,
    kv: Vec<Vec<f64>>,
    lv: Vec<Vec<f64>>,
    max_err: f64,
}

impl Subspace {
    fn new() -> Self {
        Self {
            v: Vec::new(),
            kv: Vec::new(),
            lv: Vec::new(),
            max_err: 0.0,
        }
    }

    fn dim(&self) -> usize {
        self.v.len()
    }

    /// Twice-iterated Gram-Schmidt. Returns false when `w` is numerically
    /// inside the span already.
    fn push(&mut self, p: &VariationalProblem<'_>, mut w: Vec<f64>) -> bool {
        let norm0 = norm2(&w);
        if !(norm0 > 0.0) || !norm0.is_finite() {
            return false;
        }
        for _ in 0..2 {
            for v in &self.v {
                let c = dot(v, &w);
                axpy(-c, v, &mut w);
            }
        }
        let nw = norm2(&w);
        if nw <= 1e-12 * norm0 {
            return false;
        }
        scale(1.0 / nw, &mut w);
        let mut err = (dot(&w, &w) - 1.0).abs();
        for v in &self.v {
            err = err.max(dot(v, &w).abs());
        }
        self.max_err = self.max_err.max(err);
        self.kv.push(p.k.apply(&w));
        self.lv.push(p.l.apply(&w));
        self.v.push(w);
        true
    }

    fn combine(cols: &[Vec<f64>], z: &DVector<f64>, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        for (c, zi) in cols.iter().zip(z.iter()) {
            axpy(*zi, c, &mut out);
        }
        out
    }
}

/// Reduced problem `min ||A z - y||^2 + alpha ||B z||^2` after thin QR of
/// `A = K V` and `B = U^{1/2} L V`.
struct Projected {
    ra: DMatrix<f64>,
    rb: DMatrix<f64>,
    c: DVector<f64>,
    /// `||(I - Q_A Q_A^T) y||^2`
    y_perp2: f64,
}

fn columns_to_matrix(cols: &[Vec<f64>], rows: usize, row_scale: Option<&[f64]>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols.len());
    for (j, c) in cols.iter().enumerate() {
        for (i, v) in c.iter().enumerate() {
            m[(i, j)] = match row_scale {
                Some(s) => s[i] * v,
                None => *v,
            };
        }
    }
    m
}

fn thin_r(m: DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = m.qr();
    (qr.q(), qr.r())
}

impl Projected {
    fn new(space: &Subspace, y: &[f64], sqrt_u: &[f64]) -> Self {
        let a = columns_to_matrix(&space.kv, y.len(), None);
        let b = columns_to_matrix(&space.lv, sqrt_u.len(), Some(sqrt_u));
        let (qa, ra) = thin_r(a);
        let yv = DVector::from_column_slice(y);
        let c = qa.transpose() * &yv;
        let y_perp = &yv - &qa * &c;
        let rb = if b.nrows() == 0 {
            DMatrix::zeros(0, space.dim())
        } else {
            thin_r(b).1
        };
        Self {
            ra,
            rb,
            y_perp2: y_perp.norm_squared(),
            c,
        }
    }

    /// Minimizer and data residual norm for a given `alpha`.
    fn solve(&self, alpha: f64) -> (DVector<f64>, f64) {
        let k = self.ra.ncols();
        let (ka, kb) = (self.ra.nrows(), self.rb.nrows());
        let mut m = DMatrix::zeros(ka + kb, k);
        m.view_mut((0, 0), (ka, k)).copy_from(&self.ra);
        let s = alpha.sqrt();
        m.view_mut((ka, 0), (kb, k)).copy_from(&(&self.rb * s));
        let mut rhs = DVector::zeros(ka + kb);
        rhs.rows_mut(0, ka).copy_from(&self.c);
        let svd = m.svd(true, true);
        let smax = svd.singular_values.max();
        let z = svd
            .solve(&rhs, smax * 1e-14 * (k as f64))
            .unwrap_or_else(|_| DVector::zeros(k));
        let r = &self.ra * &z - &self.c;
        (z, (r.norm_squared() + self.y_perp2).max(0.0).sqrt())
    }
}

/// Result of the alpha choice in one outer step.
struct AlphaChoice {
    alpha: f64,
    z: DVector<f64>,
    feasible: bool,
}

fn choose_alpha(proj: &Projected, p: &VariationalProblem<'_>) -> AlphaChoice {
    match p.options.alpha_rule {
        AlphaRule::Fixed { alpha } => AlphaChoice {
            z: proj.solve(alpha).0,
            alpha,
            feasible: true,
        },
        AlphaRule::Discrepancy { tau } => {
            let target = tau * p.noise_norm;
            let [mut lo, mut hi] = p.options.log10_alpha_range;
            let (z_lo, r_lo) = proj.solve(10f64.powf(lo));
            if r_lo > target {
                // even the least regularized solution misfits: the subspace
                // is still too small, or the bracket is too narrow
                return AlphaChoice {
                    alpha: 10f64.powf(lo),
                    z: z_lo,
                    feasible: false,
                };
            }
            let (z_hi, r_hi) = proj.solve(10f64.powf(hi));
            if r_hi <= target {
                return AlphaChoice {
                    alpha: 10f64.powf(hi),
                    z: z_hi,
                    feasible: false,
                };
            }
            let mut z = z_lo;
            for _ in 0..p.options.bisection_steps {
                let mid = 0.5 * (lo + hi);
                let (zm, rm) = proj.solve(10f64.powf(mid));
                if rm > target {
                    hi = mid;
                } else {
                    lo = mid;
                    z = zm;
                }
            }
            AlphaChoice {
                alpha: 10f64.powf(lo),
                z,
                feasible: true,
            }
        }
    }
}

/// `K^T (K x - y) + alpha L^T diag(u) L x`
fn majorant_gradient(p: &VariationalProblem<'_>, x: &[f64], t: &[f64], u: &[f64], alpha: f64) -> Vec<f64> {
    let r = sub(&p.k.apply(x), p.y);
    let mut g = p.k.apply_transpose(&r);
    if alpha != 0.0 {
        let ut: Vec<f64> = t.iter().zip(u).map(|(a, b)| a * b).collect();
        axpy(alpha, &p.l.apply_transpose(&ut), &mut g);
    }
    g
}

/// Majorant gradient together with the sum of the norms of its three terms,
/// the scale against which its rounding error is measured.
fn majorant_gradient_scaled(
    p: &VariationalProblem<'_>,
    x: &[f64],
    t: &[f64],
    u: &[f64],
    alpha: f64,
) -> (Vec<f64>, f64) {
    let ktkx = p.k.apply_transpose(&p.k.apply(x));
    let kty = p.k.apply_transpose(p.y);
    let ut: Vec<f64> = t.iter().zip(u).map(|(a, b)| a * b).collect();
    let reg = p.l.apply_transpose(&ut);
    let scale = norm2(&ktkx) + norm2(&kty) + alpha * norm2(&reg);
    let mut g = sub(&ktkx, &kty);
    axpy(alpha, &reg, &mut g);
    (g, scale)
}

fn mm_weights(t: &[f64], eps: f64) -> Vec<f64> {
    t.iter().map(|v| 1.0 / v.hypot(eps)).collect()
}

/// Runs MM-GKS from `x_init`.
pub fn solve(p: &VariationalProblem<'_>, x_init: &[f64]) -> Result<(Vec<f64>, SolverState)> {
    p.validate()?;
    let n = p.n();
    if x_init.len() != n {
        return Err(Error::DimensionMismatch {
            context: "initial iterate",
            expected: n,
            actual: x_init.len(),
        });
    }
    let opts = &p.options;
    let eps = opts.smoothing_eps;

    let mut space = Subspace::new();
    space.push(p, x_init.to_vec());
    let kty = p.k.apply_transpose(p.y);
    space.push(p, kty.clone());
    space.push(p, p.k.apply_transpose(&p.k.apply(&kty)));
    if space.dim() == 0 {
        // y orthogonal to range(K) and x_init = 0: the solution is 0
        let x = vec![0.0; n];
        let t = p.l.apply(&x);
        let state = SolverState {
            basis: Vec::new(),
            weights: mm_weights(&t, eps),
            x: x.clone(),
            history: Vec::new(),
            restarts: 0,
            stop: StopReason::ZeroExpansion,
            max_orthonormality_error: 0.0,
        };
        return Ok((x, state));
    }

    let mut x = x_init.to_vec();
    let mut t = p.l.apply(&x);
    let mut u = mm_weights(&t, eps);
    let mut history = Vec::new();
    let mut restarts = 0;
    let mut stop = StopReason::MaxOuter;

    for iteration in 1..=opts.max_outer {
        let sqrt_u: Vec<f64> = u.iter().map(|v| v.sqrt()).collect();
        let proj = Projected::new(&space, p.y, &sqrt_u);
        let choice = choose_alpha(&proj, p);
        let alpha = choice.alpha;
        let before = p.objective(&x, alpha).smoothed_gamma;

        let x_new = Subspace::combine(&space.v, &choice.z, n);
        let kx = Subspace::combine(&space.kv, &choice.z, p.y.len());
        let residual = norm2(&sub(&kx, p.y));
        let t_new = Subspace::combine(&space.lv, &choice.z, t.len());

        // stationarity of the step in the subspace, with the old weights
        let (g_old, g_scale) = majorant_gradient_scaled(p, &x_new, &t_new, &u, alpha);
        let vg: f64 = space.v.iter().map(|v| dot(v, &g_old).powi(2)).sum::<f64>().sqrt();

        let change = norm2(&sub(&x_new, &x)) / norm2(&x).max(f64::MIN_POSITIVE);
        let obj = p.objective(&x_new, alpha);
        history.push(IterationRecord {
            iteration,
            alpha,
            objective_before: before,
            objective_after: obj.smoothed_gamma,
            gamma: obj.gamma,
            residual,
            relative_change: change,
            basis_dim: space.dim(),
            restarts,
            projected_gradient: if g_scale > 0.0 { vg / g_scale } else { 0.0 },
            alpha_feasible: choice.feasible,
        });
        debug!(
            "mm-gks {iteration}: alpha={alpha:.3e} obj={:.6e} res={residual:.6e} dx={change:.3e} k={}",
            obj.smoothed_gamma,
            space.dim()
        );

        x = x_new;
        t = t_new;
        u = mm_weights(&t, eps);
        if change < opts.tol {
            stop = StopReason::Tolerance;
            break;
        }

        let r = majorant_gradient(p, &x, &t, &u, alpha);
        if norm2(&r) <= 1e-14 * norm2(&x) {
            stop = StopReason::ZeroExpansion;
            break;
        }
        if space.dim() >= opts.basis_cap {
            restarts += 1;
            let mut fresh = Subspace::new();
            fresh.max_err = space.max_err;
            fresh.push(p, x.clone());
            fresh.push(p, r);
            space = fresh;
        } else if space.dim() < n {
            space.push(p, r);
        }
    }

    if let Some(last) = history.last() {
        if !last.alpha_feasible {
            warn!(
                "discrepancy target not bracketed at the final step; alpha clamped to {:.3e}",
                last.alpha
            );
        }
    }
    let state = SolverState {
        basis: space.v,
        x: x.clone(),
        weights: u,
        history,
        restarts,
        stop,
        max_orthonormality_error: space.max_err,
    };
    Ok((x, state))
}

/// Conjugate gradients on the normal equations, at most `iterations` steps
/// from 0.
pub fn cgls(k: &dyn LinearOperator, y: &[f64], iterations: usize) -> Vec<f64> {
    let n = k.cols();
    let mut x = vec![0.0; n];
    let mut r = y.to_vec();
    let mut s = k.apply_transpose(&r);
    let mut p = s.clone();
    let mut gamma = dot(&s, &s);
    // past this the recurrence only amplifies rounding
    let floor = (1e-15 * gamma.sqrt()).powi(2);
    for _ in 0..iterations {
        if gamma <= floor {
            break;
        }
        let q = k.apply(&p);
        let qq = dot(&q, &q);
        if qq == 0.0 {
            break;
        }
        let a = gamma / qq;
        axpy(a, &p, &mut x);
        axpy(-a, &q, &mut r);
        s = k.apply_transpose(&r);
        let g_new = dot(&s, &s);
        let beta = g_new / gamma;
        gamma = g_new;
        for (pi, si) in p.iter_mut().zip(&s) {
            *pi = si + beta * *pi;
        }
    }
    x
}
