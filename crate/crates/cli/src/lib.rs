//! Library surface of the harness, so integration tests can drive the
//! commands without spawning processes.

pub mod commands;
pub mod config;
pub mod explain;
pub mod synth;
