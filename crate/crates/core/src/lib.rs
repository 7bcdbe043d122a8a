//! Optimal distributed control of a conserved phase-field system: forward,
//! tangent and adjoint solvers, a projected-gradient optimizer over a control
//! box, and verification probes.

pub mod adjoint;
pub mod cli;
pub mod config;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod harness;
pub mod linalg;
pub mod output;
pub mod potential;
pub mod problem;

pub use error::{Error, Result};
