//! Optimal control of stochastic differential equations whose cost and
//! inequality constraints depend on the law of the final state.
//!
//! The state equation is replaced by a controlled Markov chain on a grid
//! ([`lattice`]), on which standard problems, linear in the law, are solved
//! by backward dynamic programming ([`dp`]). The constrained problem is
//! handled by an augmented Lagrangian whose inner loop mixes final-time
//! laws ([`alm`]). [`diagnostics`] turns a solution into checkable
//! optimality certificates and [`simulate`] provides Monte-Carlo paths.

// `!(a < b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alm;
pub mod cli;
pub mod diagnostics;
pub mod dp;
pub mod error;
pub mod functionals;
pub mod lattice;
pub mod measure;
pub mod simulate;

pub use alm::{outer_loop, AlmConfig, AlmReport, AlmSolution, BranchTest, ControlProblem};
pub use diagnostics::{certify, OptimalityCertificate};
pub use dp::{hjb_backward, push_forward, solve_standard, ControlField, ValueField};
pub use error::{Error, Result};
pub use functionals::{MomentFunctional, Objective};
pub use lattice::{build_stencils, ControlledDrift, Dynamics, Grid, Lattice, StencilTable};
pub use measure::DiscreteMeasure;
