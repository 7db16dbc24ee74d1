//! Subproblem solvers for the trajectory / bit-allocation / offloading
//! stages of the SAGIN-MEC optimizer.
//!
//! Two solvers live here:
//!
//! * [`lp::solve_lp`]: a dense two-phase simplex method (Bland's rule) for
//!   small linear programs with bounds, `<=` rows and `=` rows.
//! * [`convex::solve_convex`]: a log-barrier interior-point method for
//!   smooth convex programs assembled from a fixed catalogue of atoms
//!   (cubic norm, reciprocal, quadratic-over-linear, convex quadratics and
//!   bit-over-rate latency rows). A phase-I search recovers a strictly
//!   interior point when the supplied start lies on the boundary.
//!
//! Both are deterministic: identical inputs give bit-identical outputs.

pub mod affine;
pub mod convex;
pub mod lp;

pub use affine::{Affine, SparseRow};
pub use convex::{
    solve_convex, ConcaveRate, Constraint, ConvexProblem, ConvexSettings, ConvexSolution,
    ObjectiveTerm,
};
pub use lp::{solve_lp, LinearProgram, LpSettings, LpSolution, Sense};

use thiserror::Error;

/// Termination status shared by both solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

impl Status {
    pub fn is_optimal(self) -> bool {
        self == Status::Optimal
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Status::Optimal => "optimal",
            Status::Infeasible => "infeasible",
            Status::Unbounded => "unbounded",
            Status::IterationLimit => "iteration_limit",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("malformed problem: {0}")]
    Malformed(String),
    #[error("start point is infeasible (max violation {violation:.3e})")]
    InfeasibleStart { violation: f64 },
    #[error("start point outside the domain of the objective or constraints")]
    DomainViolation,
}
