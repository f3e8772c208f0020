//! Command-line tools and the `/v1` HTTP service.

pub mod commands;
pub mod config;
pub mod service;
pub mod wire;
