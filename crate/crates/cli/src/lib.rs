//! Library side of the `upet` command-line tool: configuration, the
//! subcommands and their exit codes.

pub mod commands;
pub mod config;
pub mod error;
pub mod pgm;
