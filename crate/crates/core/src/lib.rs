//! GSViT: a vision transformer encoder with cascaded group attention and
//! sandwich blocks, an asymmetric reconstruction decoder, next-frame
//! pre-training, a phase-classification head, and an inference benchmark.

pub mod bench;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod io;
pub mod nn;
pub mod synthetic;
pub mod train;

pub use config::Config;
pub use error::{Error, Result};
