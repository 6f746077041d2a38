//! Dual-encoder GRU sequence-to-sequence model for writing a five-sentence
//! story about a sequence of five images.
//!
//! An image-window encoder and a previous-sentence encoder each summarise
//! their input; their final states are concatenated to initialise a
//! two-layer GRU decoder that emits the next sentence. Generation feeds
//! every produced sentence back in as the next "previous sentence".

pub mod error;
pub mod datapipe;
pub mod numerics;
pub mod recurrent;
pub mod storymodel;
pub mod training;
pub mod inference;
pub mod metrics;

pub use error::{Error, Result};
