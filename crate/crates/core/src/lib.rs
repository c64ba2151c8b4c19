//! Noise-aware mutation analysis of gate-level quantum programs.
//!
//! The crate covers the whole workflow: QASM parsing ([`circuit`]), mutant
//! generation ([`mutate`]), test inputs ([`inputs`]), density-matrix and
//! shot-based simulation under parametric noise ([`sim`]), the five output
//! divergence metrics ([`metrics`]), detection thresholds ([`thresholds`]),
//! scoring and statistics ([`analysis`]) and the on-disk pipeline
//! ([`pipeline`]).

pub mod analysis;
pub mod circuit;
mod error;
pub mod inputs;
pub mod linalg;
pub mod metrics;
pub mod mutate;
pub mod pipeline;
pub mod rng;
pub mod sim;
mod store;
pub mod thresholds;

pub use circuit::{characteristics, compose, emit_qasm, parse_qasm, Circuit, GateKind, GateOp};
pub use error::{Error, Result, SourcePos};
pub use metrics::MetricKind;
pub use sim::{DensityMatrix, NoiseModel, OutputDistribution};
