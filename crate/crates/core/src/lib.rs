//! Self-supervised one-class anomaly detection with context contrasting and
//! content alignment.
//!
//! Normal training images are paired with a context-augmented copy
//! (invert, vertical flip or histogram equalization). An encoder with two
//! projection heads is trained so that representations cluster by context
//! while the four content views of each sample stay aligned across the two
//! contexts. Anomalies are then scored by nearest-neighbor cosine distance or
//! by a Gaussian likelihood over normalized representations, averaged over a
//! frozen set of test-time augmentations.
//!
//! This crate is `no_std` (with `alloc`); file formats, timing and the
//! command-line front end live in the `con2` crate.

#![no_std]

extern crate alloc;

pub mod assumptions;
pub mod augment;
pub mod dataprep;
pub mod error;
pub mod image;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod objective;
pub mod optim;
pub mod scoring;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
