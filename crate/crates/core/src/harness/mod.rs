//! Evaluation drivers: synthetic retrieval, latency benchmarks, sweeps and
//! report writers.

pub mod bench;
pub mod niah;
pub mod report;
pub mod sweep;
