pub mod bev;
pub mod checkpoint;
pub mod command;
pub mod controller;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod microworld;
pub mod nn;
pub mod perception;
pub mod planner;
pub mod toolkit;
pub mod distill;

pub use error::{Error, Result};
