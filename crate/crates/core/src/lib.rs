pub mod cli;
pub mod cnn;
pub mod dataset;
pub mod domain;
pub mod error;
pub mod eval;
pub mod io_util;
pub mod signal;
pub mod simgen;
pub mod train;

pub use error::{Error, Result};
