//! Learning latent representations invariant to a known sensitive or
//! nuisance factor.
//!
//! The crate provides, from the ground up:
//!
//! - [`tensor`]: dense f64 tensors with a define-by-run reverse-mode tape;
//! - [`distributions`]: reparameterized Gaussians, categoricals and the data
//!   likelihoods (Bernoulli, Poisson, sigmoid-mean Gaussian) with analytic
//!   KL divergences;
//! - [`mmd`]: exact and random-Fourier-feature Maximum Mean Discrepancy
//!   estimators plus the multi-group training penalty;
//! - [`model`]: the stacked encoder/decoder networks and both variational
//!   objectives (unsupervised and semi-supervised, with the MMD term);
//! - [`train`]: Adam, temporal parameter averaging, stratified minibatching
//!   and the full training loop with validation-driven penalty selection;
//! - [`eval`]: probe classifiers and invariance metrics (accuracy on the
//!   sensitive factor, discrimination scores, proxy A-distance);
//! - [`data`]: CSV ingestion with schema-driven encoding, deterministic
//!   splits, synthetic benchmark generation and embedding export.

#![allow(clippy::needless_range_loop)]

pub mod data;
pub mod distributions;
pub mod eval;
pub mod gradcheck;
pub mod mmd;
pub mod model;
pub mod seeds;
pub mod tensor;
pub mod train;

pub use tensor::{ParamId, ParamSet, Tape, Tensor, TensorError, Var};
