//! Command-line runner and HTTP control service for dstesim scenarios.

pub mod batch;
pub mod server;
