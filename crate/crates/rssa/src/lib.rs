//! Command-line driver, file formats and experiment runners on top of `rssa-core`.

pub mod bench;
pub mod commands;
pub mod config;
pub mod output;
pub mod robot;
