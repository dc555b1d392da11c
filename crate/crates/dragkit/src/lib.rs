//! Command-line tool and local HTTP service around `dragkit-core`.

pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod formats;
pub mod service;

pub use config::EngineConfig;
pub use engine::Engine;
pub use error::{AppError, PointIssue, Result};
