//! Protocol maps from process states to decisions.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::vertex::{Value, VertexId, VertexStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Continue,
    Output(Value),
}

/// A partial protocol. `None` means the map is not yet defined at `v`.
pub trait Delta {
    fn decide(&self, store: &VertexStore, v: VertexId) -> Option<Decision>;
}

impl<F> Delta for F
where
    F: Fn(&VertexStore, VertexId) -> Option<Decision>,
{
    fn decide(&self, store: &VertexStore, v: VertexId) -> Option<Decision> {
        self(store, v)
    }
}

/// Explicit entries over a level-based default: every vertex strictly below
/// `continue_below` that has no entry continues; anything else without an
/// entry falls back to `default`.
#[derive(Clone, Debug, Default)]
pub struct DeltaMap {
    explicit: HashMap<VertexId, Decision>,
    continue_below: u32,
    default: Option<Decision>,
}

impl DeltaMap {
    /// Undefined everywhere.
    pub fn new() -> Self {
        Self::default()
    }

    pub fn continue_everywhere() -> Self {
        DeltaMap { default: Some(Decision::Continue), ..Self::default() }
    }

    pub fn with_default(default: Option<Decision>) -> Self {
        DeltaMap { default, ..Self::default() }
    }

    pub fn set(&mut self, v: VertexId, d: Decision) {
        self.explicit.insert(v, d);
    }

    pub fn get_explicit(&self, v: VertexId) -> Option<Decision> {
        self.explicit.get(&v).copied()
    }

    pub fn set_continue_below(&mut self, level: u32) {
        self.continue_below = level;
    }

    pub fn continue_below(&self) -> u32 {
        self.continue_below
    }

    pub fn explicit(&self) -> impl Iterator<Item = (VertexId, Decision)> + '_ {
        self.explicit.iter().map(|(&v, &d)| (v, d))
    }
}

impl Delta for DeltaMap {
    fn decide(&self, store: &VertexStore, v: VertexId) -> Option<Decision> {
        if let Some(&d) = self.explicit.get(&v) {
            return Some(d);
        }
        if store.level(v) < self.continue_below {
            return Some(Decision::Continue);
        }
        self.default
    }
}
