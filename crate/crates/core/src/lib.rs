//! Functional calculus for sectorial matrices, discrete conic Laplacians and a
//! fractional porous medium solver built on them.

pub mod cli;
pub mod cone;
pub mod config;
pub mod fpme;
pub mod funcalc;
pub mod linop;
pub mod sectorial;
pub mod verify;
