//! Command-line tools and the `/v1` HTTP API for relightable Gaussian scenes.

pub mod api;
pub mod cli;
pub mod job;
