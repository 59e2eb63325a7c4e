//! Gesture classification engine for five-channel flex-sensor recordings.
//!
//! The crate is `no_std` (it needs `alloc`) and contains everything that does
//! not touch the filesystem or the clock:
//!
//! - [`tensor`] and [`autodiff`]: dense tensors and a reverse-mode tape.
//! - [`models`]: stacked RNN, dense RNN and pre-LN encoder classifiers.
//! - [`data`]: label vocabulary, recordings, padding, stratified folds and
//!   the synthetic generator.
//! - [`train`]: cross-entropy training with AdamW, the plateau scheduler and
//!   the k-fold evaluation protocol.
//! - [`stream`]: frame parsing, threshold segmentation and segment
//!   classification.
//!
//! IO, checkpoints, timing and the command-line tool live in the companion
//! `signspeak` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod data;
mod error;
pub mod gradcheck;
pub mod models;
pub mod rng;
mod scalar;
pub mod stream;
pub mod tensor;
pub mod train;

pub use crate::error::{Error, Result};
pub use crate::scalar::Real;
pub use crate::tensor::Tensor;
