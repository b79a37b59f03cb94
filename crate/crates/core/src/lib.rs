//! Extension-based proofs for k-set agreement in the non-uniform iterated
//! snapshot model: the model semantics, the level graphs built by repeated
//! subdivision, the adaptive adversary, the prover harness, and checkers.

pub mod adversary;
pub mod checker;
pub mod codec;
pub mod complex;
pub mod delta;
pub mod error;
pub mod explore;
pub mod harness;
pub mod nis;
pub mod prover;
pub mod vertex;

pub use delta::{Decision, Delta, DeltaMap};
pub use error::CoreError;
pub use nis::{Configuration, ProcessState, Schedule, TaskSpec};
pub use vertex::{ProcessId, Value, VertexId, VertexKey, VertexStore};
