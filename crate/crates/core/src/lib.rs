//! Effective jump kernels and homogenization experiments for nonlocal
//! Lévy-type operators with oscillating coefficients.
//!
//! The crate is organised bottom-up:
//!
//! * [`fields`] – periodic and stationary random scalar fields,
//! * [`kernels`] – the five oscillating kernel families and their checks,
//! * [`effective`] – effective kernels, including the non-symmetric cell problem,
//! * [`operator`] – grid discretisation of the nonlocal operators,
//! * [`solvers`] – resolvent and fractional p-Laplace solvers,
//! * [`experiments`] – ε-sweeps, Γ-values and ergodic averages,
//! * [`cli`] – the config-driven `levyhom` command line.

pub mod cli;
pub mod config;
pub mod effective;
pub mod error;
pub mod experiments;
pub mod fields;
pub mod io;
pub mod kernels;
pub mod operator;
pub mod quadrature;
pub mod solvers;

pub use error::{Error, Result};
