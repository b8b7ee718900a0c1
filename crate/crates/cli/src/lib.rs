//! Configuration files, checkpoints, metrics and traces for
//! `diffplast-core`, plus the command implementations behind the
//! `diffplast` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod output;
pub mod trace;
