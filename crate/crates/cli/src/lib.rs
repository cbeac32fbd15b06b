//! Command-line front end: argument model, command implementations and the
//! annotation HTTP service.

pub mod args;
pub mod commands;
pub mod corpus;
pub mod error;
pub mod server;
pub mod setup;

pub use error::{CliError, CliResult};
