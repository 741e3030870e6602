//! Core library for a multi-modal, multi-task semantic communication
//! simulator.
//!
//! The crate is organized around a transmit/receive pipeline:
//!
//! - [`tensor`] / [`tape`] — dense f64 tensors with reverse-mode automatic
//!   differentiation; the substrate every network below is built on.
//! - [`encoders`] — per-modality semantic encoders (image, text, speech,
//!   video) producing `L x P` feature sequences.
//! - [`fusion`] — attention-based fusion of multi-modal feature sequences
//!   into a single `1 x P` vector.
//! - [`channel`] — MLP channel encoder/decoder and AWGN / Rayleigh fading
//!   channel simulation.
//! - [`tasks`] / [`metrics`] — lite task heads, losses (cross-entropy,
//!   multi-label BCE, CTC, MSE) and evaluation metrics (accuracy, word
//!   accuracy, BLEU, F1, PSNR).
//! - [`train`] — joint multi-task training with one Adam optimizer per task
//!   and SNR-sweep evaluation.
//! - [`data`] — deterministic synthetic dataset generators.
//! - [`checkpoint`] — bit-exact binary persistence of named parameters.
//!
//! The crate is `no_std`-compatible (requires `alloc`); file IO, CLI and
//! CSV emission live in the companion `semcomm-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod adam;
pub mod attention;
pub mod channel;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod fbank;
pub mod fusion;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod overhead;
pub mod params;
pub mod records;
pub mod rng;
pub mod tape;
pub mod tasks;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
