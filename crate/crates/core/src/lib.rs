//! Trace-driven epidemic simulation and mobility-based contagion risk.
//!
//! The crate ingests CDR-style mobility traces, learns per-user
//! time-allocation profiles, scores each user's contagion risk against
//! per-region infection levels, and evaluates targeted quarantine policies
//! inside a discrete-time stochastic SEIR metapopulation model driven by the
//! same traces. Synthetic trace generators and a seeded ensemble experiment
//! harness make every result reproducible from a config file; the `epitrace`
//! binary exposes the pipeline as CLI subcommands.

pub mod config;
pub mod epidemic;
pub mod error;
pub mod experiment;
pub mod intervention;
pub mod ode;
pub mod risk;
pub mod stats;
pub mod synthetic;
pub mod time;
pub mod trace;

pub use error::{Error, ErrorCategory, Result};
