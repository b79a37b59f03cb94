use thiserror::Error;

use crate::vertex::{ProcessId, VertexKey};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoreError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("malformed vertex: {0}")]
    MalformedVertex(String),
    #[error("{0} is not active")]
    NotActive(ProcessId),
    #[error("protocol undefined at vertex {0}")]
    UndefinedProtocol(VertexKey),
    #[error("step {position} of schedule failed: {source}")]
    AtPosition {
        position: usize,
        #[source]
        source: Box<CoreError>,
    },
    #[error("active processes are poised at different snapshot objects")]
    MixedRounds,
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("protocol undefined on clique vertex {0}")]
    UndefinedDelta(VertexKey),
    #[error("empty vertex set")]
    EmptySet,
    #[error("cap exceeded: {0}")]
    CapExceeded(String),
    #[error("decode error: {0}")]
    Decode(String),
}
