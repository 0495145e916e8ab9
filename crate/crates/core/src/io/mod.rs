//! File formats and configuration.

pub mod config;
pub mod csv;
pub mod keyvalue;
pub mod preset;
pub mod report;
