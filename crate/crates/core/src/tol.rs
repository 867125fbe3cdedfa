//! Numerical tolerances used across the crate.
//!
//! Every threshold appears here once; the CLI prints the relevant subset in
//! each report so runs are auditable.

/// Hermiticity / positive-semidefiniteness slack for Choi matrices.
pub const HERMITICITY: f64 = 1e-9;

/// Numerical-rank cutoff for Kraus extraction from a Choi matrix.
pub const RANK: f64 = 1e-10;

/// Max-abs Choi-entry threshold under which two channels count as equal.
pub const CHANNEL_EQ: f64 = 1e-9;

/// Trace-preservation slack for normalised maps and instruments.
pub const NORMALISATION: f64 = 1e-9;

/// Purification round trip: trace out the environment, recover the channel.
pub const PURIFICATION_ROUNDTRIP: f64 = 1e-10;

/// Deviation allowed in the two controlled-process defining equations.
pub const EQ1: f64 = 1e-8;

/// Deviation allowed in the output-discarded (no-signalling) marginal.
pub const EQ2: f64 = 1e-9;

/// Phase recovery and reassembly accuracy for pure controlled processes.
pub const PHASE_ROUNDTRIP: f64 = 1e-8;

/// Minimum Choi distance the purification-dependence witness must exhibit.
pub const NOGO_MARGIN: f64 = 0.05;

/// Accuracy of diagram contraction against direct composition oracles.
pub const CONTRACTION: f64 = 1e-10;

/// Purification invariance of the coherent control of a diagram.
pub const DIAGRAM_CONTROL_INVARIANCE: f64 = 1e-8;

/// Slack when validating probability weight vectors.
pub const WEIGHTS: f64 = 1e-12;

/// Squared-overlap deviation allowed when validating unbiased measurements.
pub const UNBIASED: f64 = 1e-9;
