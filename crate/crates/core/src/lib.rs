//! Sampling toolkit for two-dimensional lattice φ⁴ theory built around an
//! equivariant continuous normalizing flow.
//!
//! The crate covers the lattice symmetry group and orbit tables
//! ([`lattice`]), the action ([`phi4`]), the continuous flow ([`cnf`]) and a
//! coupling-layer baseline ([`realnvp`]), reverse-KL training ([`training`]),
//! flow-proposal Metropolis-Hastings ([`sampler`]) and the observables used
//! to validate samples ([`observables`]). The `lflow` binary wraps these
//! behind a small command-line interface ([`cli`]).

pub mod cli;
pub mod cnf;
pub mod config;
pub mod error;
pub mod flow;
pub mod grad;
pub mod io;
pub mod lattice;
pub mod observables;
pub mod ode;
pub mod phi4;
pub mod realnvp;
pub mod rng;
pub mod sampler;
pub mod spectral;
pub mod training;
pub mod trig;

pub use error::{Error, Result};
