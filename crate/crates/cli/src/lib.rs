//! Command-line tools and the live streaming service.

pub mod cli;
pub mod config;
pub mod demo;
pub mod service;

pub use cli::run_cli;
