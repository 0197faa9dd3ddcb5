//! Indirect collocation for one-sided variable-order space-fractional
//! diffusion on `(0, 1)` with homogeneous Dirichlet conditions.
//!
//! The unknown `v = u''` is collocated on a uniform grid, giving a
//! lower-triangular system. It can be solved densely ([`SolverKind::Fs`]) or
//! with a divide-and-conquer recursion whose off-diagonal blocks are sums of
//! diagonal-times-Toeplitz matrices applied with FFTs ([`SolverKind::Fdac`]).
//! `u` is then recovered in `O(N)`.

pub mod assembly;
pub mod error;
pub mod experiments;
pub mod model;
pub mod postprocess;
pub mod solver;
pub mod structured;

pub use assembly::{assemble_dense, assemble_rhs, exact_entry, t_exact, DenseLowerSystem, RowCoefficients};
pub use error::{Error, Result};
pub use experiments::{
    convergence_study, experiment1, experiment2, max_nodal_error, scaling_benchmark,
    ManufacturedProblem, ParamsPolicy, StudyOptions, StudyRow,
};
pub use model::{
    binom_real, gamma_fn, make_grid, ApproxParams, Coefficient, Grid, Problem, Solution, Source,
};
pub use postprocess::{reconstruct_u, u_h_at, weighted_integral_i, with_v0};
pub use solver::{
    fdac_solve, forward_substitution, solve, solve_with_rhs, SolveReport, SolverKind,
    DEFAULT_DENSE_LIMIT,
};
pub use structured::{
    block_matvec, precompute_tables, t_approx, toeplitz_matvec, BlockSpec, StructuredTables,
};
