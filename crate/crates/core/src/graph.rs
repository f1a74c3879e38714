//! Image-induced graphs and their graph Laplacians.
//!
//! Pixels are nodes. Two pixels are adjacent when their grid distance lies in
//! `(0, R]`, and the edge carries the intensity similarity
//! `exp(-|x(p) - x(q)|^2 / sigma^2)` of the guiding image. The node measure is
//! the single scalar `mu = ||W||_F`, shared by every node.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::sparse::{CsrMatrix, LinearOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceNorm {
    #[default]
    Linf,
    L1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    /// Neighborhood radius in pixels.
    pub radius: usize,
    /// Width of the Gaussian intensity kernel.
    pub sigma: f64,
    #[serde(default)]
    pub distance_norm: DistanceNorm,
}

impl GraphParams {
    pub fn new(radius: usize, sigma: f64) -> Self {
        Self {
            radius,
            sigma,
            distance_norm: DistanceNorm::Linf,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.radius < 1 {
            return Err(Error::InvalidParameter("graph radius must be >= 1".into()));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "graph sigma must be positive, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    /// Integer offsets `(di, dj)` of the neighborhood, excluding the origin.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let r = self.radius as isize;
        let mut out = Vec::new();
        for di in -r..=r {
            for dj in -r..=r {
                if di == 0 && dj == 0 {
                    continue;
                }
                let inside = match self.distance_norm {
                    DistanceNorm::Linf => true,
                    DistanceNorm::L1 => di.abs() + dj.abs() <= r,
                };
                if inside {
                    out.push((di, dj));
                }
            }
        }
        out
    }
}

/// Gaussian intensity similarity `h(t) = exp(-t^2 / sigma^2)`.
#[inline]
pub fn intensity_weight(t: f64, sigma: f64) -> f64 {
    (-(t * t) / (sigma * sigma)).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageGraph {
    height: usize,
    width: usize,
    /// Structural pattern comes from the geometric indicator only; stored
    /// values may underflow to zero but are never dropped.
    weights: CsrMatrix,
    mu: f64,
    params: GraphParams,
    pattern_hash: String,
}

/// Builds the graph induced by `x`.
pub fn build_graph(x: &ImageGrid, params: &GraphParams) -> Result<ImageGraph> {
    params.validate()?;
    if x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("guide image has non-finite values".into()));
    }
    let (h, w) = x.shape();
    let offsets = params.offsets();
    let mut rows = Vec::with_capacity(h * w);
    let mut sum_sq = 0.0;
    for i in 0..h {
        for j in 0..w {
            let xp = x.get(i, j);
            let mut row = Vec::with_capacity(offsets.len());
            for &(di, dj) in &offsets {
                let (qi, qj) = (i as isize + di, j as isize + dj);
                if qi < 0 || qj < 0 || qi >= h as isize || qj >= w as isize {
                    continue;
                }
                let (qi, qj) = (qi as usize, qj as usize);
                let wt = intensity_weight(xp - x.get(qi, qj), params.sigma);
                sum_sq += wt * wt;
                row.push((qi * w + qj, wt));
            }
            rows.push(row);
        }
    }
    let weights = CsrMatrix::from_rows(h * w, rows)?;
    let mu = sum_sq.sqrt();
    if !(mu > 0.0) {
        return Err(Error::DegenerateGraph(format!(
            "every edge weight underflows at sigma = {:e}; node measure would be 0",
            params.sigma
        )));
    }
    let pattern_hash = pattern_digest(h * w, &weights);
    Ok(ImageGraph {
        height: h,
        width: w,
        weights,
        mu,
        params: *params,
        pattern_hash,
    })
}

fn pattern_digest(n: usize, weights: &CsrMatrix) -> String {
    let mut hasher = Sha256::new();
    hasher.update((n as u64).to_le_bytes());
    for p in 0..n {
        for (q, _) in weights.row(p) {
            hasher.update((p as u64).to_le_bytes());
            hasher.update((q as u64).to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl ImageGraph {
    pub fn n(&self) -> usize {
        self.weights.rows()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn weights(&self) -> &CsrMatrix {
        &self.weights
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn params(&self) -> &GraphParams {
        &self.params
    }

    pub fn pattern_hash(&self) -> &str {
        &self.pattern_hash
    }

    /// Number of directed positive-or-structural edges `(p, q)`.
    pub fn n_directed_edges(&self) -> usize {
        self.weights.nnz()
    }

    pub fn weight(&self, p: usize, q: usize) -> f64 {
        self.weights.get(p, q).unwrap_or(0.0)
    }

    /// `W = W^T` and `diag(W) = 0`, checked entry by entry.
    pub fn is_symmetric_without_loops(&self) -> bool {
        (0..self.n()).all(|p| {
            self.weights
                .row(p)
                .all(|(q, w)| q != p && self.weights.get(q, p) == Some(w))
        })
    }

    pub fn laplacian(&self) -> GraphLaplacianOp {
        laplacian(self)
    }

    /// Removes the `(q, p)` mirror of the first stored edge, leaving `(p, q)`
    /// in place. Used by self-tests that must observe a broken graph.
    pub(crate) fn break_symmetry(&mut self) {
        let Some((q, _)) = self.weights.row(0).next() else {
            return;
        };
        let n = self.n();
        let rows = (0..n)
            .map(|r| {
                self.weights
                    .row(r)
                    .filter(|&(c, _)| !(r == q && c == 0))
                    .collect()
            })
            .collect();
        self.weights = CsrMatrix::from_rows(n, rows).expect("same shape");
        self.pattern_hash = pattern_digest(n, &self.weights);
    }
}

/// `Delta x (p) = (1/mu(p)) sum_q w(p,q) (x(p) - x(q))`.
#[derive(Debug, Clone)]
pub struct GraphLaplacianOp {
    graph: ImageGraph,
    inv_mu: Vec<f64>,
}

pub fn laplacian(g: &ImageGraph) -> GraphLaplacianOp {
    GraphLaplacianOp {
        inv_mu: vec![1.0 / g.mu; g.n()],
        graph: g.clone(),
    }
}

impl GraphLaplacianOp {
    /// Laplacian with an arbitrary positive per-node measure.
    pub fn with_node_measure(g: &ImageGraph, mu: &[f64]) -> Result<Self> {
        if mu.len() != g.n() {
            return Err(Error::DimensionMismatch {
                context: "node measure",
                expected: g.n(),
                actual: mu.len(),
            });
        }
        if mu.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::InvalidParameter("node measure must be positive".into()));
        }
        Ok(Self {
            graph: g.clone(),
            inv_mu: mu.iter().map(|m| 1.0 / m).collect(),
        })
    }

    pub fn graph(&self) -> &ImageGraph {
        &self.graph
    }

    /// Explicit sparse matrix with diagonal, e.g. for Matrix Market export.
    pub fn to_csr(&self) -> CsrMatrix {
        let w = self.graph.weights();
        let rows = (0..self.graph.n())
            .map(|p| {
                let s = self.inv_mu[p];
                let mut row: Vec<(usize, f64)> = w.row(p).map(|(q, v)| (q, -s * v)).collect();
                row.push((p, s * w.row_sum(p)));
                row
            })
            .collect();
        CsrMatrix::from_rows(self.graph.n(), rows).expect("square pattern")
    }
}

impl LinearOperator for GraphLaplacianOp {
    fn rows(&self) -> usize {
        self.graph.n()
    }

    fn cols(&self) -> usize {
        self.graph.n()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.graph.n(), "operand length");
        let w = self.graph.weights();
        for (p, o) in out.iter_mut().enumerate() {
            let xp = x[p];
            // differences, not D - W, so constants map to exactly zero
            let acc: f64 = w.row(p).map(|(q, wt)| wt * (xp - x[q])).sum();
            *o = self.inv_mu[p] * acc;
        }
    }

    fn apply_transpose_into(&self, y: &[f64], out: &mut [f64]) {
        assert_eq!(y.len(), self.graph.n(), "operand length");
        let w = self.graph.weights();
        for (q, o) in out.iter_mut().enumerate() {
            *o = self.inv_mu[q] * w.row_sum(q) * y[q];
        }
        for p in 0..self.graph.n() {
            let s = self.inv_mu[p] * y[p];
            for (q, wt) in w.row(p) {
                out[q] -= s * wt;
            }
        }
    }
}

/// Node partition into connected components over positive-weight edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    /// Component label per node; labels are numbered by first appearance.
    pub labels: Vec<usize>,
    pub count: usize,
}

pub fn connected_components(g: &ImageGraph) -> Components {
    let n = g.n();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut a: usize) -> usize {
        while parent[a] != a {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        a
    }
    for p in 0..n {
        for (q, w) in g.weights().row(p) {
            if w > 0.0 {
                let (rp, rq) = (find(&mut parent, p), find(&mut parent, q));
                if rp != rq {
                    parent[rp.max(rq)] = rp.min(rq);
                }
            }
        }
    }
    let mut label_of_root = vec![usize::MAX; n];
    let mut labels = vec![0; n];
    let mut count = 0;
    for p in 0..n {
        let r = find(&mut parent, p);
        if label_of_root[r] == usize::MAX {
            label_of_root[r] = count;
            count += 1;
        }
        labels[p] = label_of_root[r];
    }
    Components { labels, count }
}

/// Constants of the Lipschitz analysis for the Gaussian edge weights and the
/// Frobenius node measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LipschitzConstants {
    /// `sup |h'| = sqrt(2/e) / sigma`.
    pub l_prime: f64,
    /// Lipschitz constant of `x -> mu_x`: `2 L' kappa sqrt(n)`.
    pub l_doubleprime: f64,
    /// Neighborhood bound `(2R + 1)^2`.
    pub kappa_bar: f64,
    /// Laplacian-difference constant, `+inf` when unusable.
    pub c_laplacian: f64,
    /// False when `exp(-2/sigma^2)` underflows and the bound is vacuous.
    pub usable: bool,
}

pub fn lipschitz_constants(params: &GraphParams, n: usize) -> LipschitzConstants {
    let sigma = params.sigma;
    let l_prime = (2.0 / std::f64::consts::E).sqrt() / sigma;
    let kappa_bar = ((2 * params.radius + 1) as f64).powi(2);
    let nf = n as f64;
    let sqrt_n = nf.sqrt();
    let l_doubleprime = 2.0 * l_prime * kappa_bar * sqrt_n;
    let floor = (-2.0 / (sigma * sigma)).exp();
    let c = 2.0 * kappa_bar * (2.0 * nf * l_prime + 2.0 * l_prime * kappa_bar * sqrt_n)
        / (nf * nf * floor);
    let usable = floor > 0.0 && c.is_finite();
    LipschitzConstants {
        l_prime,
        l_doubleprime,
        kappa_bar,
        c_laplacian: if usable { c } else { f64::INFINITY },
        usable,
    }
}
