//! Fully decentralized multi-agent actor-critic training with natural gradients.
//!
//! The crate is `no_std` (it needs `alloc`) and carries every numeric piece of
//! the system: consensus weights, Boltzmann policies and Fisher machinery,
//! linear critics, the four training engines, the abstract and traffic
//! environments, and exact oracles used for validation. File formats, the CLI
//! and experiment fan-out live in the `man-harness` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod algorithms;
pub mod analysis;
pub mod approx;
pub mod consensus;
pub mod env;
mod error;
pub mod linalg;
pub mod metrics;
pub mod policy;
pub mod rng;

pub use error::{Error, Result};

pub use nalgebra::{DMatrix, DVector};
