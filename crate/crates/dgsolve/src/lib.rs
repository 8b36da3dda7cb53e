//! Solver and verification toolkit for zero-sum differential games whose
//! play terminates on a union of target sets.
//!
//! The crate computes upper value functions as grid-based viscosity-solution
//! approximations of the Hamilton-Jacobi-Isaacs equation, builds the
//! lower-envelope decomposition `ū = min_j u_j` from per-target reduced
//! solves, and tests numerically whether that decomposition is a valid
//! viscosity solution via convexity-type conditions on convex combinations
//! of active-branch supergradients.
//!
//! Module map:
//!
//! * [`model`] — game definitions and Hamiltonians
//! * [`grid`] — lattices, fields, interpolation, differential estimation
//! * [`solver`] — semi-Lagrangian fixed-point solver
//! * [`envelope`] — lower envelopes, crossing sets, condition checks
//! * [`synthesis`] — feedback strategies and closed-loop simulation
//! * [`games`] — the registered pursuit/evasion families and their oracles
//! * [`cli`] — command-line front end

pub mod cli;
pub mod envelope;
pub mod error;
pub mod games;
pub mod grid;
pub mod model;
pub mod solver;
pub mod synthesis;

pub use error::{DgError, Result};
