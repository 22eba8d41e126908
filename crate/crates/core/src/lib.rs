//! Stability certification and closed-loop simulation for time-distributed
//! optimization in input-constrained linear MPC.
//!
//! A finite-horizon LQ problem is condensed into a box-constrained QP
//! parameterized by the measured state ([`ocp`]). A fixed budget of
//! projected-gradient or accelerated projected-gradient iterations is spent
//! per sampling instant ([`solvers`]), warmstarted from the previous estimate.
//! [`certify`] evaluates closed-form ISS gains and small-gain iteration
//! bounds for that coupled plant/optimizer loop, and [`sim`] runs it.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod linalg;
pub mod tolerance;

pub use linalg::{Matrix, Vector};
pub mod ocp;
pub mod solvers;

pub mod bench;
pub mod certify;
pub mod sim;
