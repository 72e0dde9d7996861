pub mod cli;
pub mod config;
pub mod data;
pub mod decoder;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod graph;
pub mod nef;
pub mod walk;
pub mod tensor;
pub mod tgn;
pub mod train;

pub use error::{Error, Result};
