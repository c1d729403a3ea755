//! Host side of the recognizer: model and trie files, the resource profiler,
//! the transcription pipeline and the `edgespeech` command line.

pub mod cli;
pub mod io;
pub mod parallel;
pub mod pipeline;
pub mod profiler;
pub mod store;

pub use edgespeech_core as core;
