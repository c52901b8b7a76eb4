//! Simulation driver for `treewave-core`: configuration files, on-disk
//! formats, parallel sampling and estimation, and the pipeline behind the
//! `treewave` command line.

pub mod config;
pub mod format;
pub mod parallel;
pub mod pipeline;

pub use treewave_core as core;
