//! Job service, command-line tools and evaluation reports around the
//! colorization core.

pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod http;
pub mod jobs;
pub mod models;
pub mod ops;

pub use error::{Result, ServiceError};
