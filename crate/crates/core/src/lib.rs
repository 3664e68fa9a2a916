//! Privacy-aware kickstarting: a student policy learns from a teacher whose
//! answers pass through a Dirichlet mechanism with a tracked privacy budget.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod budget;
pub mod env;
pub mod experiment;
pub mod mechanism;
pub mod nn;
pub mod ppo;
pub mod privacy;
pub mod rng;
pub mod simplex;
pub mod special;
pub mod student;
