//! Input similarity from the gradients of a trained network.
//!
//! The central object is the parameter gradient `∇_θ f(x)`: two inputs are
//! similar, from the network's point of view, when a training step on one
//! moves the output on the other. This crate provides
//!
//! * a small dense MLP with forward, per-sample gradients, Hessian-vector
//!   products, and Adam training ([`nn`]);
//! * kernels over those gradients, scalar and matrix-valued ([`kernels`]);
//! * neighborhood density estimates over a dataset, with a fast
//!   linear-time variant ([`density`]);
//! * kernel-weighted label smoothing and the associated noise and
//!   smoothness diagnostics ([`denoise`]);
//! * auxiliary training losses that push chosen pairs or groups of inputs
//!   toward high similarity ([`enforce`]);
//! * reproducible experiment drivers behind the `gradsim` binary
//!   ([`experiments`]).
//!
//! Everything is deterministic given a seed: data generation, parameter
//! initialization, shuffling, and auxiliary batch picks each draw from their
//! own labeled random stream.

pub mod cli;
pub mod data;
pub mod denoise;
pub mod density;
pub mod enforce;
mod error;
pub mod experiments;
pub mod kernels;
pub mod nn;
pub mod report;
pub mod svg;

#[doc(hidden)]
pub mod testkit;

pub use error::{Error, Result};
