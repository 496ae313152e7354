//! Library surface of the `graphmark` binary: configuration resolution,
//! command implementations and the report aggregator. Kept as a library so
//! integration tests can drive the pipelines directly.

pub mod commands;
pub mod config;
pub mod report;
