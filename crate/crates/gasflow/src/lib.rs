//! Transient gas-network simulation and optimal gas flow.
//!
//! The crate solves the isothermal gas-flow equations on a pipe network with
//! a conservative staggered-grid method-of-lines discretization, integrates
//! them in time with an SSP Runge-Kutta scheme under a CFL step limit, and
//! computes exact discrete-adjoint gradients of a time-integrated operational
//! cost with respect to piecewise-constant nodal flow controls. A projected
//! LBFGS optimizer minimizes that cost under box constraints, optionally as a
//! sample average over perturbed consumption scenarios.
//!
//! Sign convention used throughout: nodal flow `q > 0` is injection into the
//! network, `q < 0` is withdrawal. All internal units are SI (Pa, kg, m, s);
//! bar appears only at file I/O boundaries.

pub mod adjoint;
pub mod cost;
pub mod grid;
pub mod model;
pub mod opt;
pub mod sim;

mod error;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
