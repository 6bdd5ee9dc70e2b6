//! Planning and simulation toolkit for serverless Mixture-of-Experts inference.
//!
//! Given a static model description, platform pricing, and latency SLOs, the
//! planner decides which experts run remotely in separate serverless
//! functions, how much memory each function gets, and how many replicas serve
//! each layer's remote experts during prefill. Plans are evaluated by a pure
//! analytic latency/cost model and validated against a trace-driven simulator
//! and brute-force oracles.
//!
//! Module map:
//! - [`config`]: model / platform / SLO / latency-profile inputs.
//! - [`trace`]: synthetic prompt corpora and token-to-expert routing traces.
//! - [`predict`]: activation prediction via a similarity clustering tree.
//! - [`perf`]: analytic latency and cost evaluation of a deployment plan.
//! - [`planner`]: the planning pipeline (pre-allocation, remote selection,
//!   memory optimization, replica partitioning).
//! - [`sim`]: trace-driven simulation, exhaustive oracles, baseline harness.

pub mod config;
pub mod curve;
pub mod error;
pub mod perf;
pub mod planner;
pub mod predict;
pub mod scalar;
pub mod sim;
pub mod trace;

pub use error::{Error, Result};

/// Default scalar for all concrete pipeline types. The numeric kernels in
/// [`scalar`], [`predict`], and [`planner`] are generic over
/// [`scalar::Real`]; everything serialized or configured uses this alias.
pub type Scalar = f64;

/// Seconds, in the default scalar.
pub type Seconds = f64;

/// Memory sizes are tracked in bytes everywhere except the pricing boundary
/// (prices are per MB-second) and the fitted latency curves (GB).
pub type Bytes = u64;

/// 1 MB = 10^6 bytes at the pricing boundary.
pub const BYTES_PER_MB: f64 = 1.0e6;

/// 1 GB = 10^9 bytes; fitted latency curves take memory in GB.
pub const BYTES_PER_GB: f64 = 1.0e9;
