//! Reference-free estimation of speech separation quality.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! - [`signal`]: audio containers, pseudo-speech synthesis, mixing, the
//!   separator degradation simulator and the SI-SNR oracle with
//!   permutation resolution.
//! - [`text`]: transcript normalization, the WER oracle and seeded
//!   transcript corruption.
//! - [`features`] and [`manifest`]: the RFQF feature interchange format and
//!   the JSONL corpus manifest.
//! - [`encoder`]: the learnable toy frame encoder and the file-backed
//!   extractor for externally computed features.
//! - [`nn`]: a small reverse-mode autodiff graph with exactly the operators
//!   the estimator needs, Adam and the warmup/decay schedule.
//! - [`estimator`]: the three-track concatenation model, its training loop,
//!   prediction and checkpoints.
//! - [`dataset`]: corpus generation, WER-bin balancing and statistics.
//! - [`eval`]: MAE / Pearson evaluation reports.

pub mod dataset;
pub mod encoder;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod features;
pub mod manifest;
pub mod nn;
pub mod rng;
pub mod signal;
pub mod text;
pub mod wav;

pub use error::{Error, Result};
