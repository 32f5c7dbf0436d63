//! Command line and HTTP service over a contraspec project directory.

pub mod actions;
pub mod cli;
pub mod server;

pub use cli::{run, EXIT_AWAITING, EXIT_DOMAIN, EXIT_OK, EXIT_USAGE};
