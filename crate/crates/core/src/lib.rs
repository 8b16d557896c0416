//! Feedforward networks trained with the stochastic delta rule (SDR).
//!
//! Each weight is a Gaussian `(μ, σ)`; every forward pass in training samples a concrete
//! network, both parameters follow the error gradient, and `σ` drains geometrically so
//! the model collapses onto its means. A Bernoulli dropout baseline, desk-scale paired
//! experiments and a flat config format for the command-line tool live alongside.
//!
//! Modules, bottom up:
//!
//! - [`linalg`]: row-major `f64` matrices and seeded splittable random streams.
//! - [`nnet`]: fully connected layers, losses and backpropagation.
//! - [`sdr`]: the stochastic delta rule and its spread schedules.
//! - [`dropout`]: hidden-unit dropout and drop-count statistics.
//! - [`bench`]: datasets, training loops and paired experiments.
//! - [`config`] and [`plots`]: the file formats used by the `sdrnet` binary.

pub mod bench;
pub mod config;
pub mod dropout;
pub mod error;
pub mod linalg;
pub mod nnet;
pub mod plots;
pub mod sdr;

pub use error::{Error, Result};
pub use linalg::{Matrix, Rng};
pub use nnet::{Activation, Loss, Mode, Network};
