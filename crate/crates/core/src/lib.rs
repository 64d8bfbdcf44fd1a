//! Reflection-coefficient feature extraction for multi-channel EMG and
//! Extreme Value Machine gesture classification.
//!
//! The crate is organised bottom-up:
//!
//! * [`dataio`] loads recordings, windows them and generates synthetic fixtures.
//! * [`preprocess`] filters raw signals and standardises feature vectors.
//! * [`arburg`] estimates reflection coefficients with Burg's lattice method.
//! * [`evm`] fits, reduces and applies the Extreme Value Machine.
//! * [`baselines`] holds the brute-force k-nearest-neighbour classifier.
//! * [`evalkit`] turns predictions into confusion matrices and reports.
//! * [`pipeline`] wires everything into extract / train / eval runs.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arburg;
pub mod baselines;
pub mod dataio;
pub mod error;
pub mod evalkit;
pub mod evm;
pub mod pipeline;
pub mod preprocess;

mod feature;

pub use error::{Error, ErrorKind, Result};
pub use feature::{FeatureVector, LabeledDataset};
