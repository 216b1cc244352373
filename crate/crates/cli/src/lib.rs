//! Command implementations and configuration for the `deblur` binary.

pub mod commands;
pub mod config;
