//! noisylab: a self-contained laboratory for training classifiers on
//! datasets with corrupted labels.
//!
//! The crate provides, from scratch:
//!
//! - a small f64 feed-forward network engine with reverse-mode gradients,
//!   Adam (L2 weight decay), a milestone learning-rate schedule, and a
//!   finite-difference gradient checker ([`nn`]);
//! - label-noise transition matrices and seeded label corruption ([`noise`]);
//! - data augmentation policies producing the paired views used by the
//!   paired softmax divergence regularizer ([`augment`]);
//! - the loss family: cross entropy, forward-corrected cross entropy,
//!   per-sample weighting, the paired-view KL penalty, and their combination
//!   ([`losses`]);
//! - robust training strategies — normal, forward correction, decoupling,
//!   co-teaching — each composable with the KL regularizer ([`strategies`]);
//! - dataset generation/ingestion and a reproducible experiment harness
//!   with per-epoch CSV metrics and binary checkpoints ([`data`], [`cifar`],
//!   [`config`], [`experiment`]).
//!
//! Every random decision in a run derives from one master seed ([`rng`]),
//! so a configuration determines its outputs byte for byte.

pub mod augment;
pub mod cifar;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod nn;
pub mod noise;
pub mod rng;
pub mod strategies;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
