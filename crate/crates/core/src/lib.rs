//! Symbolic decision trees for distilling model predictive control laws.
//!
//! A symbolic decision tree routes an input through axis-aligned splits and
//! evaluates a linear combination of nonlinear basis functions in the leaf
//! it lands in. This crate learns such trees to global optimality over
//! data-induced split thresholds, materializes the equivalent mixed-integer
//! program for external solvers, and evaluates learned controllers on a
//! CSTR case study against an MPC oracle and classic baselines.

pub mod baselines;
pub mod basis;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod learner;
pub mod lp;
pub mod milp;
pub mod mpc;
pub mod sim;
pub mod tree;

pub use error::{Error, Result};
