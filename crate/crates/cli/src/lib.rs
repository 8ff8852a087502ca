//! Configuration, data loading and the end-to-end runs behind the `hetode`
//! binary.

pub mod config;
pub mod dataset;
pub mod error;
pub mod pipeline;
pub mod study;

pub use config::{LikelihoodMode, RunConfig};
pub use error::{CliError, Stage};
