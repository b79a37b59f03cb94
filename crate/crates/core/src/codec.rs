//! Canonical encodings of vertices and configurations.
//!
//! Text forms (one line each, single spaces):
//!
//! ```text
//! vertex         B <id> <input>
//!                D <id> <key> <key> ...     scan member keys sorted by id
//! configuration  <state>;<state>;...        one entry per process, by id
//! state          I <key> | U <key> | S <key> | T <key> <output>
//! ```
//!
//! A vertex key is the first 16 bytes of SHA-256 over its text line; a
//! configuration key is the same digest over the configuration text. Both
//! are written as lowercase hex.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CoreError;
use crate::nis::{Configuration, ProcessState};
use crate::vertex::{ProcessId, Value, VertexId, VertexKey, VertexKind, VertexStore};

pub fn vertex_text(store: &VertexStore, v: VertexId) -> String {
    match store.kind(v) {
        VertexKind::Base { pid, input } => format!("B {} {}", pid.0, input),
        VertexKind::Derived { pid, scan } => {
            let mut s = format!("D {}", pid.0);
            for &m in scan.iter() {
                s.push(' ');
                s.push_str(&store.key(m).to_hex());
            }
            s
        }
    }
}

pub fn config_text(store: &VertexStore, c: &Configuration) -> String {
    let parts: Vec<String> = c
        .states
        .iter()
        .map(|s| match *s {
            ProcessState::Initial(v) => format!("I {}", store.key(v)),
            ProcessState::Updated(v) => format!("U {}", store.key(v)),
            ProcessState::Scanned(v) => format!("S {}", store.key(v)),
            ProcessState::Terminated(v, a) => format!("T {} {}", store.key(v), a),
        })
        .collect();
    parts.join(";")
}

pub fn digest_hex(text: &str) -> String {
    let d = Sha256::digest(text.as_bytes());
    hex::encode(&d[..16])
}

pub fn config_key(store: &VertexStore, c: &Configuration) -> String {
    digest_hex(&config_text(store, c))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VertexRecord {
    pub id: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<Vec<String>>,
}

pub type VertexTable = BTreeMap<String, VertexRecord>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateKind {
    Initial,
    Updated,
    Scanned,
    Terminated,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateRecord {
    pub kind: StateKind,
    pub vertex: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<Value>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigRecord {
    pub key: String,
    pub states: Vec<StateRecord>,
    pub vertices: VertexTable,
}

pub fn vertex_record(store: &VertexStore, v: VertexId) -> VertexRecord {
    match store.kind(v) {
        VertexKind::Base { pid, input } => VertexRecord { id: pid.0, input: Some(*input), scan: None },
        VertexKind::Derived { pid, scan } => VertexRecord {
            id: pid.0,
            input: None,
            scan: Some(scan.iter().map(|&m| store.key(m).to_hex()).collect()),
        },
    }
}

/// Every vertex reachable from `roots`, keyed by hex key.
pub fn vertex_table(store: &VertexStore, roots: &[VertexId]) -> VertexTable {
    store
        .closure(roots)
        .into_iter()
        .map(|v| (store.key(v).to_hex(), vertex_record(store, v)))
        .collect()
}

pub fn state_records(store: &VertexStore, c: &Configuration) -> Vec<StateRecord> {
    c.states
        .iter()
        .map(|s| {
            let (kind, output) = match *s {
                ProcessState::Initial(_) => (StateKind::Initial, None),
                ProcessState::Updated(_) => (StateKind::Updated, None),
                ProcessState::Scanned(_) => (StateKind::Scanned, None),
                ProcessState::Terminated(_, a) => (StateKind::Terminated, Some(a)),
            };
            StateRecord { kind, vertex: store.key(s.vertex()).to_hex(), output }
        })
        .collect()
}

pub fn encode_config(store: &VertexStore, c: &Configuration) -> ConfigRecord {
    let roots: Vec<VertexId> = c.states.iter().map(|s| s.vertex()).collect();
    ConfigRecord {
        key: config_key(store, c),
        states: state_records(store, c),
        vertices: vertex_table(store, &roots),
    }
}

/// Interns every vertex of `table` into `store`, checking each stored key
/// against the recomputed one.
pub fn decode_vertices(store: &mut VertexStore, table: &VertexTable) -> Result<HashMap<String, VertexId>, CoreError> {
    let mut done: HashMap<String, VertexId> = HashMap::new();
    for key in table.keys() {
        decode_one(store, table, key, &mut done, 0)?;
    }
    Ok(done)
}

fn decode_one(
    store: &mut VertexStore,
    table: &VertexTable,
    key: &str,
    done: &mut HashMap<String, VertexId>,
    depth: usize,
) -> Result<VertexId, CoreError> {
    if let Some(&v) = done.get(key) {
        return Ok(v);
    }
    if let Some(v) = VertexKey::parse(key).and_then(|k| store.lookup_key(&k)) {
        done.insert(key.to_string(), v);
        return Ok(v);
    }
    if depth > 100_000 {
        return Err(CoreError::Decode("vertex table too deep".into()));
    }
    let rec = table.get(key).ok_or_else(|| CoreError::Decode(format!("missing vertex {key}")))?;
    let pid = ProcessId(rec.id);
    if rec.id == 0 {
        return Err(CoreError::Decode(format!("vertex {key} has process id 0")));
    }
    let v = match (&rec.input, &rec.scan) {
        (Some(x), None) => {
            if *x >= 64 {
                return Err(CoreError::Decode(format!("input {x} out of range")));
            }
            store.base(pid, *x)
        }
        (None, Some(scan)) => {
            let mut members = Vec::with_capacity(scan.len());
            for m in scan {
                members.push(decode_one(store, table, m, done, depth + 1)?);
            }
            store.derived(pid, &members)?
        }
        _ => return Err(CoreError::Decode(format!("vertex {key} needs exactly one of input/scan"))),
    };
    if store.key(v).to_hex() != key {
        return Err(CoreError::Decode(format!("vertex {key} hashes to {}", store.key(v))));
    }
    done.insert(key.to_string(), v);
    Ok(v)
}

pub fn resolve_key(store: &VertexStore, key: &str) -> Result<VertexId, CoreError> {
    VertexKey::parse(key)
        .and_then(|k| store.lookup_key(&k))
        .ok_or_else(|| CoreError::Decode(format!("unknown vertex {key}")))
}

pub fn decode_states(store: &VertexStore, states: &[StateRecord]) -> Result<Configuration, CoreError> {
    let mut out = Vec::with_capacity(states.len());
    for (i, s) in states.iter().enumerate() {
        let v = resolve_key(store, &s.vertex)?;
        if store.pid(v).index() != i {
            return Err(CoreError::Decode(format!("state {} holds a vertex of {}", i + 1, store.pid(v))));
        }
        let st = match (s.kind, s.output) {
            (StateKind::Initial, None) if store.level(v) == 0 => ProcessState::Initial(v),
            (StateKind::Updated, None) => ProcessState::Updated(v),
            (StateKind::Scanned, None) if store.level(v) > 0 => ProcessState::Scanned(v),
            (StateKind::Terminated, Some(a)) => ProcessState::Terminated(v, a),
            _ => return Err(CoreError::Decode(format!("malformed state for process {}", i + 1))),
        };
        out.push(st);
    }
    Ok(Configuration { states: out })
}

pub fn decode_config(store: &mut VertexStore, rec: &ConfigRecord) -> Result<Configuration, CoreError> {
    decode_vertices(store, &rec.vertices)?;
    let c = decode_states(store, &rec.states)?;
    let key = config_key(store, &c);
    if key != rec.key {
        return Err(CoreError::Decode(format!("configuration key {} does not match {key}", rec.key)));
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delta::DeltaMap;
    use crate::nis::{apply_schedule, Schedule};

    #[test]
    fn base_key_is_digest_of_text() {
        let mut s = VertexStore::new();
        let v = s.base(ProcessId(2), 1);
        assert_eq!(vertex_text(&s, v), "B 2 1");
        assert_eq!(s.key(v).to_hex(), digest_hex("B 2 1"));
        let d = s.derived(ProcessId(2), &[v]).unwrap();
        assert_eq!(s.key(d).to_hex(), digest_hex(&vertex_text(&s, d)));
    }

    #[test]
    fn config_round_trip_through_fresh_store() {
        let mut s = VertexStore::new();
        let d = DeltaMap::continue_everywhere();
        let c = Configuration::initial(&mut s, &[0, 1, 2]);
        let sched = Schedule(vec![ProcessId(1), ProcessId(2), ProcessId(1), ProcessId(3)]);
        let c = apply_schedule(&mut s, &c, &sched, &d).unwrap();
        let rec = encode_config(&s, &c);
        let json = serde_json::to_string(&rec).unwrap();
        let back: ConfigRecord = serde_json::from_str(&json).unwrap();
        let mut fresh = VertexStore::new();
        let c2 = decode_config(&mut fresh, &back).unwrap();
        assert_eq!(config_key(&fresh, &c2), rec.key);
        assert_eq!(serde_json::to_string(&encode_config(&fresh, &c2)).unwrap(), json);
    }

    #[test]
    fn tampered_key_is_rejected() {
        let mut s = VertexStore::new();
        let c = Configuration::initial(&mut s, &[0, 1]);
        let mut rec = encode_config(&s, &c);
        rec.key = "00".repeat(16);
        let mut fresh = VertexStore::new();
        assert!(decode_config(&mut fresh, &rec).is_err());
    }
}
