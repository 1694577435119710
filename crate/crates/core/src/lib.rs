//! Finite-volume simulator for the signal-dependent motility system
//! `u_t = Δ(γ(v) u)`, `τ v_t = Δv - v + u` with no-flux boundaries, together
//! with the diagnostics that check its comparison bounds and energy identity.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod linalg;
pub mod motility;
pub mod rundir;
pub mod solver;

pub use diagnostics::{Boundedness, ComparisonSetup, DiagnosticsRecord};
pub use error::{Error, Result};
pub use grid::{DomainKind, DomainSpec, Field, Grid};
pub use motility::{AssumptionReport, Family, Motility, Table, Ternary};
pub use solver::{RunOutcome, RunSettings, SimState};
