//! Multimodal infusion tuning on a frozen micro-transformer.
//!
//! This crate is the compute core: a dense f64 tensor engine with
//! reverse-mode autodiff, a frozen decoder-only transformer with per-layer
//! hook points, the infusion module that conditions attention keys/values
//! and feed-forward activations on an external modal embedding, modality
//! encoders, task heads and losses, seeded synthetic task generators, the
//! training loop, and an analytic cost model.
//!
//! The crate is `no_std`-compatible (with `alloc`); transcendental math
//! routes through `libm` when the `std` feature is disabled. All file
//! formats, CSV/PGM output, and the CLI live in the companion `mit-cli`
//! crate.

#![cfg_attr(not(feature = "std"), no_std)]

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("mit-core requires either the `std` or the `libm` feature");

extern crate alloc;

pub mod cost;
pub mod encoders;
pub mod gradcheck;
pub mod heads;
pub mod infusion;
pub mod lm;
pub mod loss;
pub mod mathx;
pub mod metrics;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use tensor::{Graph, NodeId, Tensor, TensorError};
