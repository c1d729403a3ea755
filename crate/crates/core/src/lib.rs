//! Allocation-only inference core for a small embedded speech recognizer.
//!
//! Everything here is a pure function of its inputs: audio decoding from
//! bytes, log-spectral features, a five-hidden-layer bidirectional recurrent
//! acoustic model, CTC greedy and prefix-beam decoding, the binary model and
//! vocabulary trie layouts, and word/character error rates. Filesystem access,
//! memory mapping, profiling and the command-line front end live in the
//! `edgespeech` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod decoder;
pub mod eval;
pub mod features;
pub mod format;
pub mod model;
pub mod nn;
pub mod rng;
pub mod trie;
pub mod wav;

pub use decoder::{Alphabet, BeamConfig, Transcript, Vocabulary};
pub use features::{AudioBuffer, FeatureConfig, FeatureMatrix};
pub use model::{CharDistribution, ModelDims, ModelWeights};
pub use nn::{Activation, Matrix};
