//! Domain-specific BSIF filters for iris recognition: patch corpora, ICA
//! filter training, encoding of normalized iris images, template matching
//! and evaluation tooling.

pub mod bits;
pub mod cli;
pub mod encoder;
pub mod evalkit;
pub mod error;
pub mod filtertrain;
pub mod imgio;
pub mod matcher;
pub mod patches;
pub mod seeds;
pub mod synth;

pub use error::{Error, Result};
