//! Space-time finite element discretizations of the heat equation and the
//! incompressible Navier-Stokes equations on triangulated rectangles, solved
//! monolithically over the whole time slab.
//!
//! Space is discretized with continuous Lagrange elements (Taylor-Hood pairs
//! for flow problems), time with discontinuous Galerkin elements coupled by
//! upwind jumps, so the global system is block lower bidiagonal in time. The
//! headline solver is FGMRES preconditioned by a multigrid V-cycle that
//! coarsens in space only and smooths with Chebyshev-accelerated additive
//! patch relaxation over space-time patch trajectories (waveform relaxation
//! multigrid). A block-triangular sparse direct solver and a sequential
//! timestepping driver are included as oracles and baselines.
//!
//! Modules follow the pipeline: [`mesh`] -> [`spaces`] -> [`forms`] ->
//! ([`transfer`], [`relax`]) -> [`solver`], with [`problems`] supplying the
//! benchmark setups and [`bench`] the reporting layer used by the CLI.

pub mod bench;
pub mod forms;
pub mod linalg;
pub mod mesh;
pub mod problems;
pub mod relax;
pub mod solver;
pub mod spaces;
pub mod transfer;

/// Errors produced by solvers and the benchmark layer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A dense or banded factorization hit a zero (or numerically zero) pivot.
    #[error("singular matrix: zero pivot at row {row}")]
    SingularMatrix { row: usize },
    /// An iterative solver exhausted its iteration budget.
    #[error("{solver} did not converge in {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        solver: String,
        iterations: usize,
        residual: f64,
    },
    /// A configuration value is out of the supported range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
