//! Command-line tools, file formats and IO around `slcmask-core`.
//!
//! The library half holds everything the `slcmask` binary does so that the
//! commands can be driven from tests: configuration resolution, the text
//! file formats, PNG IO, tile planning and the command implementations.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod imageio;
pub mod tiling;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
