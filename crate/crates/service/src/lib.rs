//! HTTP review service and the `reid` command line.

pub mod api;
pub mod cli;
pub mod config;
pub mod state;
