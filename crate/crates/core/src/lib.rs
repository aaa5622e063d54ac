//! Probabilistic solvers for parabolic boundary problems with a nonlocal
//! terminal condition.
//!
//! The solution of `u_t + A u = 0` in a bounded domain, with zero boundary
//! values and terminal data `ξ`, is represented as an expectation over the
//! characteristic diffusion killed at the boundary. The crate estimates it by
//! Monte Carlo, cross-checks it against a finite-difference solver, solves
//! non-local terminal conditions by fixed-point iteration, and applies the
//! machinery to a barrier hedging problem.

pub mod characteristics;
pub mod csvfmt;
pub mod exit_stats;
pub mod expr;
pub mod model;
pub mod nonlocal;
pub mod pde_oracle;
pub mod portfolio;
pub mod rng;
pub mod solver;

pub use characteristics::{simulate_batch, simulate_path, simulate_path_segment, PathOutcome, SimConfig, SimError};
pub use model::{
    check_boundary_vanishing, complete_diffusion, presets, validate_coercivity, CoefficientSet, Domain, ModelError,
    ProbeGrid,
};
pub use nonlocal::{apply_gamma, gamma_norm_bound, solve_nonlocal, GammaKernel, NonlocalError, NonlocalOptions};
pub use pde_oracle::{compare_fields, solve_backward_pde, FdGrid, OracleError};
pub use solver::{martingale_check, solve_cauchy, GridSpec, SolutionField, SolverError, TerminalData};
