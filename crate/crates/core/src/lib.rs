//! Desk-scale acoustic modeling laboratory.
//!
//! The crate provides, end to end: a double-precision tensor core with
//! backpropagation and a finite-difference gradient checker; an FBANK/MFCC
//! feature frontend; a catalog of very deep CNN acoustic-model architectures
//! with a shape-derivation engine; joint training with auxiliary features;
//! an LSTM-with-projection recurrent model trained by truncated BPTT; and a
//! hybrid decoder with state-level weighted log-likelihood fusion of two
//! systems, scored on a synthetic noisy-speech task.

pub mod arch;
pub mod archive;
pub mod checkpoint;
pub mod corpus;
pub mod decoder;
pub mod error;
pub mod frontend;
pub mod gradsuite;
pub mod joint;
pub mod lstmp;
pub mod report;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
