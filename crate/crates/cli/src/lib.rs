//! Command-line front end: INI configuration, dispatch to the solvers, CSV
//! artifacts and a checksummed manifest.

pub mod config;
pub mod error;
pub mod manifest;
pub mod run;

pub use config::{Command, Overrides, RunConfig};
pub use error::{CliError, ExitClass};
