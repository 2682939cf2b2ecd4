//! Interaction-aware vehicle trajectory prediction on highway data.
//!
//! The crate implements a two-channel encoder--decoder: a shared GRU encodes
//! each vehicle's recent motion, a two-layer graph attention network encodes
//! inter-vehicle interaction over a star-shaped directed graph around the
//! predicted vehicle, and a two-layer LSTM decodes the future trajectory from
//! the concatenated dynamics and interaction features. Everything — including
//! the reverse-mode autodiff the training loop runs on — is self-contained.
//!
//! Top-level map:
//! - [`tensor`]: f64 tensors, the operation tape, gradient checking
//! - [`layers`]: linear / GRU / LSTM / graph-attention building blocks
//! - [`graph`]: neighbor selection and interaction-graph construction
//! - [`data`]: trajectory ingestion, sample extraction, codecs, synthesis
//! - [`model`]: the assembled predictor and its ablation variants
//! - [`train`]: Adam, the training loop, loss
//! - [`eval`]: RMSE metrics, baselines, reports
//! - [`checkpoint`]: binary parameter snapshots
//! - [`config`] / [`commands`]: the CLI surface

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod eval;
pub mod graph;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod train;

mod error;

pub use error::{Error, Result};
