//! ChronoVAE-HOPE: a disentangled trend/seasonal variational autoencoder for
//! univariate time series whose encoder replaces attention with a dual-memory
//! block (per-sequence fast-weight memory plus a multi-timescale persistent
//! memory hierarchy).
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`] — dense f64 tensors, a reverse-mode autodiff graph, Adam.
//! - [`config`] — typed hyperparameters with defaults and validation.
//! - [`decomp`] — moving-average trend/seasonal decomposition.
//! - [`stem`], [`titans`], [`cms`], [`hope`] — the encoder building blocks.
//! - [`model`] — the full network: encoder, latent heads, dual decoders.
//! - [`loss`] — composite self-supervised objective.
//! - [`data`] — corpus generation, UCR-style loading, masking.
//! - [`train`] — pre-training loop with memory consolidation scheduling.
//! - [`classify`] — frozen-encoder downstream protocol and metrics.
//! - [`bench`] — empirical linear-vs-quadratic scaling probe.
//! - [`checkpoint`] — versioned binary checkpoints + JSON manifests.
//! - [`selfcheck`] — runtime invariant suite backing the `selfcheck` command.

pub mod bench;
pub mod checkpoint;
pub mod classify;
pub mod cms;
pub mod config;
pub mod data;
pub mod decomp;
pub mod error;
pub mod hope;
pub mod layers;
pub mod loss;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod selfcheck;
pub mod stem;
pub mod titans;
pub mod train;

pub use error::Error;
pub use rng::RngHandle;
