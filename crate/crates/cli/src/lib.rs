//! Command-line driver: data generation, GP training, closed-loop
//! simulation, controller comparison and plotting.

pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::CliError;
