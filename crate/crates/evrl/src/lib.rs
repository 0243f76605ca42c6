//! Std companion of `evrl-core`: file formats, the TCP action service,
//! recording, benchmarking, logs, and the command line.

pub mod bench;
pub mod cli;
pub mod config;
pub mod io;
pub mod log;
pub mod record;
pub mod service;
