//! Deep Q-learning placement of a UAV access point serving a ground user
//! of unknown location, over synthetic urban SINR fields.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cli;
pub mod env;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gridmap;
pub mod propagation;
pub mod qnet;
pub mod render;
pub mod rl;
pub mod scenario;

pub use error::{Error, Result};
