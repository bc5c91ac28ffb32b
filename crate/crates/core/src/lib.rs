//! Trace-driven benchmarking harness for code-assistant inference servers.
//!
//! The crate replays recorded developer telemetry against a text-generation
//! endpoint (a real server or the built-in simulator), samples power while
//! the replay runs, and reduces the results to energy, latency, and
//! saturation metrics across configuration sweeps.

pub mod config;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod net;
pub mod num;
pub mod plan;
pub mod proto;
pub mod sim;
pub mod sweep;
pub mod trace;

pub use error::{Error, Result};

/// Default scalar type for power/energy computations.
pub type Scalar = f64;
