//! Noise-robust classification on vector data.
//!
//! `labelsift` trains a small two-headed network (a projection head producing
//! unit-norm embeddings and a classification head producing class
//! probabilities) on data whose labels are partially wrong. Wrong labels are
//! detected as out-of-distribution samples under a spherical Gaussian mixture
//! built over the embeddings, where the mixture responsibilities are taken
//! from the classifier's own predictions. A second, one-dimensional
//! two-component mixture over the resulting clean probabilities yields a
//! per-sample clean weight that gates a bootstrapped target: a convex
//! combination of the given label and the model's prediction. Training
//! alternates mixture refits (E-step) with SGD minibatch updates (M-step)
//! on a combined classification / entropy / contrastive / alignment loss.
//!
//! Module map:
//! - [`data`]: synthetic blob generation, label-noise injection, stochastic
//!   augmentation, mixup, dataset file I/O.
//! - [`model`]: the two-headed MLP, reverse-mode gradients, SGD with
//!   momentum, warmup + cosine learning-rate schedule, checkpoints.
//! - [`mixture`]: the embedding GMM with prediction-injected responsibilities
//!   and the two-component 1-D GMM fit by EM.
//! - [`objectives`]: the loss terms (cross-supervision, entropy
//!   regularization, InfoNCE, mixup alignment) and their gradients.
//! - [`trainer`]: the alternating E/M training loop and inference.
//! - [`eval`]: accuracy, detection AUC, k-NN evaluation, imbalance ratio,
//!   clean-probability histograms.
//! - [`cli`]: the `generate` / `train` / `eval` command front end.

// Validation guards are written `!(x > 0.0)` on purpose: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod eval;
pub mod mixture;
pub mod model;
pub mod objectives;
pub mod trainer;

mod error;

pub use error::{Error, Result};
