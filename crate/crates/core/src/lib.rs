//! Cascaded visual search: feature extraction, PCA + product quantization,
//! a sharded visual-word inverted index, and three-level ranking with a
//! LambdaMART model.

pub mod error;
pub mod eval;
pub mod feature;
pub mod index;
pub mod io;
pub mod math;
pub mod quantize;
pub mod rank;
pub mod retrieve;
pub mod synth;

pub use error::{Error, Result};
