//! Standard-library companion to `iclorder-core`: HTTP and mock backends,
//! dataset and template loaders, the experiment harness and the CLI.

pub mod backend;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod template_file;

pub use error::{Error, Result};
