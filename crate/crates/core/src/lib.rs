//! `qcausal` — executable semantics for definite and indefinite causal scenarios
//! in quantum theory.
//!
//! The library is organised in layers:
//!
//! * [`matrix`] — dense complex matrices with tensor-factor bookkeeping
//!   (Kronecker products, factor permutation, partial trace, Choi/Kraus
//!   conversion).
//! * [`process`] — completely positive maps in Kraus form, quantum
//!   instruments with classical inputs/outputs, discarding, normalisation,
//!   purity and purification, sharp preparation-observation pairs.
//! * [`scenario`] — framed multigraphs, definite causal scenarios,
//!   indefinite causal scenarios, and the enumeration of all definite
//!   scenarios compatible with an indefinite one.
//! * [`diagram`] — diagrams of instruments over scenarios, contraction into
//!   a compiled process, induced diagrams, and branchwise purification.
//! * [`control`] — controlled processes, classical and coherent control,
//!   phase extraction, the purification-dependence witness, the n-partite
//!   switch, coherent control of diagrams and superposition of causal
//!   orders.
//! * [`generate`] — seeded random generators for channels, instruments,
//!   families and scenarios (used by the verification suites).
//! * [`verify`] — self-contained verification suites exposed to the CLI.
//! * [`json`] — the JSON wire formats for scenarios, diagrams, instruments
//!   and phase assignments.

pub mod control;
pub mod diagram;
pub mod error;
pub mod generate;
pub mod json;
pub mod matrix;
pub mod process;
pub mod scenario;
pub mod tol;
pub mod verify;

pub use control::{
    build_switch, classical_control, coherent_control_cp, coherent_control_cp_with_env,
    coherent_control_of_diagram, discard_control_mixture, extract_phase, nogo_witness, superpose,
    ControlledProcess, EnvTwist, MeasurementSpec, NogoWitness, PhaseVector, ProcessFamily,
    SuperpositionInstrument,
};
pub use control::{coherent_control_pure, eq1_deviation, eq2_deviation, verify_eq1};
pub use diagram::{
    contract, contract_purified, contract_with_order, induce, purify_diagram, CompiledProcess,
    DiagramAssignment, PurifiedDiagram,
};
pub use error::{Error, Result};
pub use matrix::{
    choi_to_kraus, kraus_to_choi, kron, partial_trace, permute_factors, ComplexMatrix,
    HermitianSpectrum, SystemDims, C64,
};
pub use process::{
    channel_distance, check_no_signalling, ChannelDistance, ClassicalSet, CpMap, Purification,
    QuantumInstrument, SpoPair,
};
pub use scenario::{
    canonical_key_of, definite_to_indefinite, enumerate_compatible, is_acyclic, is_compatible,
    topological_order, validate_framed, CompatibleScenario, DefiniteCausalScenario, EdgeId,
    EdgeRec, FramedMultigraph, IndefiniteCausalScenario, NodeId, SystemLabel, Violation,
    DEFAULT_ENUM_CAP,
};
