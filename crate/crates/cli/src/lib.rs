//! Library side of the `rcan` command: configuration parsing and the
//! subcommand implementations, kept separate from argument handling so they
//! can be driven from tests.

pub mod commands;
pub mod config;

pub use config::{ParseError, RunConfig};
