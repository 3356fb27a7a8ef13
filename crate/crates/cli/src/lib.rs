//! Batch front end for the laplgm engine: configuration, data input, model
//! assembly and CSV artifacts.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod model;
pub mod output;

pub use error::{CliError, Result};
