//! Damage detection for box-girder bridges from train-induced strain
//! responses.
//!
//! The pipeline learns per-(channel, speed bin) baselines from healthy
//! passages and scores new passages against them:
//!
//! 1. [`signals`] loads passage records and aligns them into matrices.
//! 2. [`pca`] fits the baseline transformation and removes the leading
//!    components that carry operational variation (train weight, track
//!    irregularity).
//! 3. [`ar`] fits an autoregressive model to the residual signals; the model
//!    order comes from an averaged BIC curve.
//! 4. [`detect`] turns AR residuals into fit ratios, the damage feature, and
//!    a Gaussian confidence boundary; features at or above the boundary are
//!    outliers, attributed to girder components through sensor affinity.
//! 5. [`simulate`] generates synthetic multi-channel passage datasets from a
//!    moving-load girder model with per-component stiffness-reduction damage,
//!    track roughness, and measurement noise.
//!
//! The `examples/` directory contains one runnable example per capability;
//! the `railstrain` binary wires the same steps into `simulate`, `baseline`,
//! `detect`, `report`, and `bic` subcommands.

pub mod ar;
pub mod cli;
pub mod detect;
pub mod error;
pub mod pca;
pub mod seed;
pub mod signals;
pub mod simulate;

pub use error::{Error, Result};
