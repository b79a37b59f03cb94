//! Independent verification: invariant audits, brute-force oracles, the
//! graph lemma suites, and transcript replay.

mod audit;
mod lemmas;
mod oracle;
mod replay;

pub use audit::{audit_adversary, audit_session, paranoid, InvariantCheck, InvariantReport};
pub use lemmas::{lemma_suites, HashedDelta, LEMMA_SUITES};
pub use oracle::{correspondence_suite, oracle_one_round, round_outcomes};
pub use replay::{replay_transcript, ReplayError, ReplaySummary};

use serde::{Deserialize, Serialize};

/// Outcome of one named property suite.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub instances: usize,
    pub failures: Vec<String>,
}

impl SuiteResult {
    pub fn new(name: &str) -> Self {
        SuiteResult { name: name.to_string(), ..Default::default() }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn record(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.instances += 1;
        // Ten examples are plenty to debug from.
        if !ok && self.failures.len() < 10 {
            self.failures.push(what());
        }
    }
}
