//! Programming knowledge tracing with a double-sequence recurrent model.

pub mod artifact;
pub mod codeembed;
pub mod datamodel;
pub mod dsm;
pub mod embedding;
pub mod error;
pub mod graphembed;
pub mod numkernel;
pub mod skipgram;
pub mod trainer;

pub use error::{Error, Result};
