//! Sparse-view CT reconstruction with image-induced graph Laplacian
//! regularization.
//!
//! A preliminary reconstruction `psi` of the data is turned into a weighted
//! pixel graph; its Laplacian then serves as the sparsifying operator in
//! `min 1/2 ||Kx - y||^2 + alpha ||L x||_1`, solved by majorization-minimization
//! on a restarted generalized Krylov subspace.

pub mod error;
pub mod geometry;
pub mod graph;
pub mod image;
pub mod linalg;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod reconstruct;
pub mod solver;
pub mod theory;
pub mod sparse;

pub use error::{Error, Result};
pub use geometry::{add_noise, build_projector, BeamMode, ProjectorMatrix, ScanGeometry, Sinogram};
pub use graph::{build_graph, laplacian, DistanceNorm, GraphLaplacianOp, GraphParams, ImageGraph};
pub use image::ImageGrid;
pub use phantom::{make_phantom, PhantomKind};
pub use sparse::{CsrMatrix, LinearOperator, ZeroOperator};
pub use solver::{solve, AlphaRule, SolverOptions, SolverState, VariationalProblem};
pub use reconstruct::{fbp, tikhonov, tikhonov_discrepancy, tv, GradientOp, Reconstructor};
pub use metrics::{psnr, rre, ssim, MetricsReport};
pub use theory::{run_all, CheckResult, CheckStatus, TheoryConfig};
pub use pipeline::{ExperimentConfig, PhantomSpec, SweepSpec};
