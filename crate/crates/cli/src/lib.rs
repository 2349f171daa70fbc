//! Library surface of the `segword` binary: run configuration, the pipeline
//! commands, and the kernel benchmark. Lets integration tests drive the same
//! code paths the binary dispatches to.

pub mod bench;
pub mod commands;
pub mod config;
