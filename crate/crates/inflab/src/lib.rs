//! Numerical laboratory for infinity-harmonic functions on exterior domains.
//!
//! The crate discretizes the infinity Laplacian with wide max/min stencils,
//! solves truncated-exterior Dirichlet problems by an exhaustion of growing
//! outer radii, extracts far-field structure (growth slopes, blow-down
//! limits, asymptotic class), and cross-checks solutions against the maximum
//! principle, cone comparison, and sharp growth envelopes.

pub mod asymptotics;
pub mod config;
pub mod expr;
pub mod grid;
pub mod io;
pub mod pipeline;
pub mod solver;
pub mod verify;

pub use grid::{build_domain, Domain, GridError, GridSpec, NodeClass, ObstacleShape, OuterShape};
pub use solver::{
    discrete_inf_laplacian, solve_dirichlet, solve_exterior, BoundaryCondition, SolveError,
    SolutionField, SolverOptions,
};
