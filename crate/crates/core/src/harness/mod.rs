//! Verification, benchmarking and I/O plumbing behind the CLI.

pub mod checkpoint;
pub mod config;
pub mod scene;
pub mod gradcheck;
pub mod oracle;
pub mod ablate;
pub mod metrics;
pub mod bench;
