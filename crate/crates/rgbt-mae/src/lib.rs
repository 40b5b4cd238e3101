//! Self-supervised pre-training for aligned RGB-thermal image pairs.
//!
//! The pipeline measures per-patch cross-modality information density,
//! fits a streaming Gaussian mixture to the resulting score distribution,
//! and drives an easy-to-hard curriculum that decides which patches a
//! Siamese masked autoencoder gets to see at every training step.
//!
//! Module map:
//! - [`patch`]: patch grids, the shared linear patch projection, per-patch
//!   normalized reconstruction targets
//! - [`cmss`]: the cross-modality structural sparsity metric and per-pair maps
//! - [`gmm`]: streaming EM estimate of the score distribution
//! - [`masking`]: the progressive sampling schedule and mask plans
//! - [`nn`] / [`model`]: transformer layers with manual backprop and the
//!   Siamese encoder / dual-decoder autoencoder
//! - [`train`]: the pre-training loop (augmentation, GMM update, masking,
//!   optimizer step, metrics, checkpoints)
//! - [`curate`]: SSIM quality filtering, temporal dedup, source balancing
//! - [`corpus`]: deterministic synthetic two-modality dataset generator
//! - [`analysis`]: fused feature extraction, linear probing, sliced
//!   Wasserstein object/background statistics

pub mod analysis;
pub mod checkpoint;
pub mod cmss;
pub mod config;
pub mod corpus;
pub mod curate;
pub mod error;
pub mod gmm;
pub mod imgio;
pub mod masking;
pub mod model;
pub mod nn;
pub mod optim;
pub mod patch;
pub mod plot;
pub mod train;
pub mod util;

pub use error::{Error, Result};
