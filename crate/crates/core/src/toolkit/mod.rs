//! Configuration, stage orchestration, replay rendering and the command line.

pub mod cli;
pub mod config;
pub mod pipeline;
pub mod replay;

pub use config::RunConfig;
