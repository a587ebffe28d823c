pub mod bridge;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod export;
pub mod model;
pub mod quad;
pub mod rng;
pub mod runner;
pub mod sample;
pub mod schedule;
pub mod solver;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
