//! Hash-consed full-information process states.
//!
//! A vertex is either a base pair `(process, input)` or a derived pair
//! `(process, scan)` where `scan` is the set of previous-level states the
//! process saw. Structurally equal vertices share one [`VertexId`].

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CoreError;

/// 1-based process index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProcessId(pub u8);

impl ProcessId {
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_index(i: usize) -> Self {
        ProcessId(i as u8 + 1)
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

pub type Value = u8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VertexId(pub u32);

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum VertexKind {
    Base { pid: ProcessId, input: Value },
    /// `scan` is sorted by process id and holds one vertex per process.
    Derived { pid: ProcessId, scan: Box<[VertexId]> },
}

/// First 16 bytes of the SHA-256 of the vertex's canonical text line
/// (`B <id> <input>` or `D <id> <key> <key>...`), rendered as lowercase hex.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VertexKey(pub [u8; 16]);

impl VertexKey {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn parse(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        let arr: [u8; 16] = bytes.try_into().ok()?;
        Some(VertexKey(arr))
    }
}

impl fmt::Display for VertexKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Clone, Debug)]
struct Node {
    kind: VertexKind,
    level: u32,
    seen: u64,
    key: VertexKey,
}

#[derive(Clone, Debug, Default)]
pub struct VertexStore {
    nodes: Vec<Node>,
    index: HashMap<VertexKind, VertexId>,
    by_key: HashMap<VertexKey, VertexId>,
}

impl VertexStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn base(&mut self, pid: ProcessId, input: Value) -> VertexId {
        assert!(input < 64, "input values must be below 64");
        let kind = VertexKind::Base { pid, input };
        if let Some(&id) = self.index.get(&kind) {
            return id;
        }
        let mut h = Sha256::new();
        h.update(format!("B {} {}", pid.0, input));
        self.insert(kind, 0, 1u64 << input, h)
    }

    /// Interns `(pid, scan)`. The scan members must be distinct-process
    /// vertices of one level, and must include a vertex of `pid`.
    pub fn derived(&mut self, pid: ProcessId, scan: &[VertexId]) -> Result<VertexId, CoreError> {
        let mut members = scan.to_vec();
        members.sort_by_key(|&v| self.pid(v));
        if members.is_empty() {
            return Err(CoreError::MalformedVertex("empty scan".into()));
        }
        let level = self.level(members[0]);
        for w in members.windows(2) {
            if self.pid(w[0]) == self.pid(w[1]) {
                return Err(CoreError::MalformedVertex(format!(
                    "scan has two states of {}",
                    self.pid(w[0])
                )));
            }
        }
        if members.iter().any(|&m| self.level(m) != level) {
            return Err(CoreError::MalformedVertex("scan mixes levels".into()));
        }
        if !members.iter().any(|&m| self.pid(m) == pid) {
            return Err(CoreError::MalformedVertex(format!("{pid} missing from its own scan")));
        }
        let kind = VertexKind::Derived { pid, scan: members.into_boxed_slice() };
        if let Some(&id) = self.index.get(&kind) {
            return Ok(id);
        }
        let VertexKind::Derived { scan, .. } = &kind else { unreachable!() };
        let mut seen = 0u64;
        let mut h = Sha256::new();
        h.update(format!("D {}", pid.0));
        for &m in scan.iter() {
            seen |= self.nodes[m.0 as usize].seen;
            h.update(b" ");
            h.update(self.nodes[m.0 as usize].key.to_hex());
        }
        Ok(self.insert(kind, level + 1, seen, h))
    }

    fn insert(&mut self, kind: VertexKind, level: u32, seen: u64, h: Sha256) -> VertexId {
        let digest = h.finalize();
        let mut key = [0u8; 16];
        key.copy_from_slice(&digest[..16]);
        let key = VertexKey(key);
        let id = VertexId(self.nodes.len() as u32);
        self.nodes.push(Node { kind: kind.clone(), level, seen, key });
        self.index.insert(kind, id);
        self.by_key.insert(key, id);
        id
    }

    pub fn kind(&self, v: VertexId) -> &VertexKind {
        &self.nodes[v.0 as usize].kind
    }

    pub fn pid(&self, v: VertexId) -> ProcessId {
        match &self.nodes[v.0 as usize].kind {
            VertexKind::Base { pid, .. } | VertexKind::Derived { pid, .. } => *pid,
        }
    }

    pub fn level(&self, v: VertexId) -> u32 {
        self.nodes[v.0 as usize].level
    }

    pub fn key(&self, v: VertexId) -> VertexKey {
        self.nodes[v.0 as usize].key
    }

    pub fn lookup_key(&self, key: &VertexKey) -> Option<VertexId> {
        self.by_key.get(key).copied()
    }

    /// Empty for base vertices.
    pub fn scan(&self, v: VertexId) -> &[VertexId] {
        match &self.nodes[v.0 as usize].kind {
            VertexKind::Base { .. } => &[],
            VertexKind::Derived { scan, .. } => scan,
        }
    }

    pub fn has_seen(&self, v: VertexId, a: Value) -> bool {
        a < 64 && self.nodes[v.0 as usize].seen & (1u64 << a) != 0
    }

    pub fn seen_mask(&self, v: VertexId) -> u64 {
        self.nodes[v.0 as usize].seen
    }

    /// The process's own state one level down.
    pub fn own_prev(&self, v: VertexId) -> Option<VertexId> {
        let pid = self.pid(v);
        self.scan(v).iter().copied().find(|&m| self.pid(m) == pid)
    }

    /// The process's own state at `level` (at most its current level).
    pub fn own_at_level(&self, v: VertexId, level: u32) -> Option<VertexId> {
        let mut cur = v;
        while self.level(cur) > level {
            cur = self.own_prev(cur)?;
        }
        (self.level(cur) == level).then_some(cur)
    }

    pub fn input(&self, v: VertexId) -> Value {
        let mut cur = v;
        loop {
            match &self.nodes[cur.0 as usize].kind {
                VertexKind::Base { input, .. } => return *input,
                VertexKind::Derived { .. } => cur = self.own_prev(cur).expect("own state present"),
            }
        }
    }

    /// Bit `i` set iff process `i+1` appears in the scan.
    pub fn scan_ids(&self, v: VertexId) -> u32 {
        self.scan(v).iter().fold(0, |m, &w| m | 1 << self.pid(w).index())
    }

    /// `v` together with every vertex it transitively contains, children first.
    pub fn closure(&self, roots: &[VertexId]) -> Vec<VertexId> {
        let mut out = Vec::new();
        let mut mark = std::collections::HashSet::new();
        let mut stack: Vec<(VertexId, bool)> = roots.iter().map(|&r| (r, false)).collect();
        while let Some((v, expanded)) = stack.pop() {
            if expanded {
                out.push(v);
                continue;
            }
            if !mark.insert(v) {
                continue;
            }
            stack.push((v, true));
            for &m in self.scan(v) {
                if !mark.contains(&m) {
                    stack.push((m, false));
                }
            }
        }
        out
    }

    pub fn describe(&self, v: VertexId) -> String {
        match self.kind(v) {
            VertexKind::Base { pid, input } => format!("({},{})", pid.0, input),
            VertexKind::Derived { pid, scan } => {
                let inner: Vec<String> = scan.iter().map(|&m| self.describe(m)).collect();
                format!("({},{{{}}})", pid.0, inner.join(","))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interning_is_structural() {
        let mut s = VertexStore::new();
        let a = s.base(ProcessId(1), 0);
        let b = s.base(ProcessId(2), 1);
        let x = s.derived(ProcessId(1), &[b, a]).unwrap();
        let y = s.derived(ProcessId(1), &[a, b]).unwrap();
        assert_eq!(x, y);
        assert_eq!(s.scan(x), &[a, b]);
        assert_eq!(s.level(x), 1);
        assert!(s.has_seen(x, 1));
        assert!(!s.has_seen(x, 2));
        assert_eq!(s.input(x), 0);
        assert_eq!(s.describe(x), "(1,{(1,0),(2,1)})");
    }

    #[test]
    fn rejects_scan_without_self() {
        let mut s = VertexStore::new();
        let b = s.base(ProcessId(2), 1);
        assert!(s.derived(ProcessId(1), &[b]).is_err());
    }

    #[test]
    fn keys_differ_by_structure() {
        let mut s = VertexStore::new();
        let a = s.base(ProcessId(1), 0);
        let b = s.base(ProcessId(2), 0);
        let x = s.derived(ProcessId(1), &[a]).unwrap();
        let y = s.derived(ProcessId(1), &[a, b]).unwrap();
        assert_ne!(s.key(x), s.key(y));
        assert_eq!(s.lookup_key(&s.key(y)), Some(y));
        assert_eq!(VertexKey::parse(&s.key(y).to_hex()), Some(s.key(y)));
    }
}
