#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod diffusion;
pub mod driver;
pub mod error;
pub mod harness;
pub mod imc;
pub mod io;
pub mod linalg;
pub mod macro_solver;
pub mod mesh;
pub mod physics;
pub mod problem;
pub mod rng;
pub mod transport;
