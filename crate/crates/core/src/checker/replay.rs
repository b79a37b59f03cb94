//! Re-derives a finished interaction from its transcript and the final
//! protocol map alone.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use crate::adversary::DeltaSnapshot;
use crate::codec::{config_key, decode_vertices, state_records, VertexTable};
use crate::error::CoreError;
use crate::explore::{search_output_rounds, Limits};
use crate::harness::TranscriptRecord;
use crate::nis::{apply_schedule, apply_step, initial_configurations, Configuration, ProcessState, Schedule};
use crate::vertex::{ProcessId, Value, VertexStore};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("inconsistent at record {seq}: {reason}")]
    Inconsistent { seq: u64, reason: String },
    /// The final map could not be rebuilt, or a search ran over its cap.
    #[error("inconclusive at record {seq}: {reason}")]
    Inconclusive { seq: u64, reason: String },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReplaySummary {
    pub records: usize,
    pub steps: usize,
    pub schedules: usize,
    pub nones: usize,
    /// NONE searches that reached states the final map leaves undefined.
    pub horizon_cuts: usize,
    pub commits: usize,
}

struct Replay<'a> {
    store: VertexStore,
    delta: crate::adversary::AdversaryDelta,
    snapshot: &'a DeltaSnapshot,
    configs: HashMap<String, Configuration>,
    initial: Vec<Configuration>,
    alpha: Schedule,
    fixed: Vec<Option<Value>>,
    phase: u64,
    nones_done: HashSet<(String, Vec<ProcessId>, Value)>,
    max_explore: usize,
    summary: ReplaySummary,
}

/// Replays `records` against the final protocol map: every step response
/// must be reproduced exactly, every returned schedule must make a queried
/// process output the queried value, every NONE must survive an exhaustive
/// search, and commits must rebuild the same configurations.
pub fn replay_transcript(
    records: &[TranscriptRecord],
    snapshot: &DeltaSnapshot,
    max_explore: usize,
) -> Result<ReplaySummary, ReplayError> {
    let mut store = VertexStore::new();
    let setup = |e: CoreError| ReplayError::Inconclusive { seq: 0, reason: format!("final map: {e}") };
    let delta = snapshot.rebuild(&mut store).map_err(setup)?;
    let task = snapshot.task();
    let initial = initial_configurations(&mut store, &task);
    let configs = initial.iter().map(|c| (config_key(&store, c), c.clone())).collect();
    let mut r = Replay {
        store,
        delta,
        snapshot,
        configs,
        initial,
        alpha: Schedule::default(),
        fixed: vec![None; task.n as usize],
        phase: 1,
        nones_done: HashSet::new(),
        max_explore,
        summary: ReplaySummary::default(),
    };
    for (i, rec) in records.iter().enumerate() {
        let seq = rec.seq;
        let bad = |reason: String| ReplayError::Inconsistent { seq, reason };
        if seq != i as u64 {
            return Err(bad(format!("expected sequence number {i}")));
        }
        match rec.kind.as_str() {
            "step" => r.step(rec).map_err(bad)?,
            "output" => r.output(rec)?,
            "commit" => r.commit(rec).map_err(bad)?,
            "finalize" => r.finalize(rec).map_err(bad)?,
            other => return Err(bad(format!("unknown record kind {other}"))),
        }
        r.summary.records += 1;
    }
    Ok(r.summary)
}

fn field<'j>(j: &'j Json, name: &str) -> Result<&'j Json, String> {
    j.get(name).ok_or_else(|| format!("missing field {name}"))
}

fn parse<T: serde::de::DeserializeOwned>(j: &Json, name: &str) -> Result<T, String> {
    serde_json::from_value(field(j, name)?.clone()).map_err(|e| format!("field {name}: {e}"))
}

impl Replay<'_> {
    fn lookup(&self, key: &str) -> Result<Configuration, String> {
        self.configs.get(key).cloned().ok_or_else(|| format!("configuration {key} was never issued"))
    }

    fn absorb_vertices(&mut self, j: &Json) -> Result<(), String> {
        if let Some(v) = j.get("vertices") {
            let table: VertexTable = serde_json::from_value(v.clone()).map_err(|e| format!("vertex table: {e}"))?;
            decode_vertices(&mut self.store, &table).map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    /// `{configKey, states}` of `c` exactly as the harness writes them.
    fn expected(&self, c: &Configuration) -> Json {
        json!({ "configKey": config_key(&self.store, c), "states": state_records(&self.store, c) })
    }

    fn same(&self, got: &Json, want: &Json) -> Result<(), String> {
        for f in ["configKey", "states"] {
            let (g, w) = (field(got, f)?, field(want, f)?);
            if *g != *w {
                return Err(format!("{f} differs: recorded {g}, replayed {w}"));
            }
        }
        Ok(())
    }

    fn step(&mut self, rec: &TranscriptRecord) -> Result<(), String> {
        let c = self.lookup(&parse::<String>(&rec.request, "configKey")?)?;
        let q: ProcessId = parse(&rec.request, "process")?;
        self.absorb_vertices(&rec.response)?;
        let next = apply_step(&mut self.store, &c, q, &self.delta).map_err(|e| e.to_string())?;
        let want = self.expected(&next);
        self.same(&rec.response, &want)?;
        self.configs.insert(config_key(&self.store, &next), next);
        self.summary.steps += 1;
        Ok(())
    }

    fn output(&mut self, rec: &TranscriptRecord) -> Result<(), ReplayError> {
        let seq = rec.seq;
        let bad = |reason: String| ReplayError::Inconsistent { seq, reason };
        let key: String = parse(&rec.request, "configKey").map_err(bad)?;
        let c = self.lookup(&key).map_err(bad)?;
        let procs: Vec<ProcessId> = parse(&rec.request, "processes").map_err(bad)?;
        let y: Value = parse(&rec.request, "value").map_err(bad)?;
        let answer: Option<Schedule> = parse(&rec.response, "schedule").map_err(bad)?;
        match answer {
            Some(s) => {
                if let Some(p) = s.0.iter().find(|p| !procs.contains(p)) {
                    return Err(bad(format!("schedule moves {p}, which was not queried")));
                }
                let end = apply_schedule(&mut self.store, &c, &s, &self.delta).map_err(|e| bad(e.to_string()))?;
                let hit = procs.iter().any(|&q| matches!(end.state(q), ProcessState::Terminated(_, a) if *a == y));
                if !hit {
                    return Err(bad(format!("schedule does not make a queried process output {y}")));
                }
                self.summary.schedules += 1;
            }
            None => {
                if !self.nones_done.insert((key, procs.clone(), y)) {
                    self.summary.nones += 1;
                    return Ok(());
                }
                let limits = Limits::unbounded(self.max_explore);
                let (found, reach) = search_output_rounds(&mut self.store, &self.delta, &c, &procs, y, &limits)
                    .map_err(|e| ReplayError::Inconclusive { seq, reason: e.to_string() })?;
                if let Some(s) = found {
                    return Err(bad(format!("answered NONE but schedule {s} outputs {y}")));
                }
                self.summary.nones += 1;
                self.summary.horizon_cuts += usize::from(reach.horizon_hit);
            }
        }
        Ok(())
    }

    fn commit(&mut self, rec: &TranscriptRecord) -> Result<(), String> {
        let c = self.lookup(&parse::<String>(&rec.request, "configKey")?)?;
        let extension: Schedule = parse(&rec.request, "schedule")?;
        let alpha: Schedule = parse(&rec.response, "alpha")?;
        let phase: u64 = parse(&rec.response, "phase")?;
        if alpha != self.alpha.concat(&extension) {
            return Err("committed schedule is not the old one extended by the request".into());
        }
        if phase != self.phase + 1 {
            return Err(format!("phase {phase} after phase {}", self.phase));
        }
        let origin_key: String = parse(&rec.response, "origin")?;
        let origin = self
            .initial
            .iter()
            .find(|c0| config_key(&self.store, c0) == origin_key)
            .cloned()
            .ok_or("origin is not an initial configuration")?;
        let start = apply_schedule(&mut self.store, &origin, &self.alpha, &self.delta).map_err(|e| e.to_string())?;
        if start != c {
            return Err("commit starts from a configuration that its origin does not reach".into());
        }
        let inputs = origin.inputs(&self.store);
        for q in alpha.processes() {
            self.fixed[q.index()] = Some(inputs[q.index()]);
        }
        let listed: Vec<Json> = parse(&rec.response, "configs")?;
        let mut expected = Vec::new();
        for c0 in self.initial.clone() {
            let xs = c0.inputs(&self.store);
            if self.fixed.iter().zip(&xs).any(|(f, x)| f.is_some_and(|f| f != *x)) {
                continue;
            }
            expected.push(apply_schedule(&mut self.store, &c0, &alpha, &self.delta).map_err(|e| e.to_string())?);
        }
        if listed.len() != expected.len() {
            return Err(format!("{} committed configurations recorded, {} replayed", listed.len(), expected.len()));
        }
        for (got, c) in listed.iter().zip(&expected) {
            self.absorb_vertices(got)?;
            let want = self.expected(c);
            self.same(got, &want)?;
        }
        self.configs = self.initial.iter().map(|c| (config_key(&self.store, c), c.clone())).collect();
        for c in expected {
            self.configs.insert(config_key(&self.store, &c), c);
        }
        self.alpha = alpha;
        self.phase = phase;
        self.summary.commits += 1;
        Ok(())
    }

    fn finalize(&mut self, rec: &TranscriptRecord) -> Result<(), String> {
        let f = self.snapshot.finale.as_ref().ok_or("transcript finalizes but the final map has no finale")?;
        let r = &rec.response;
        let same = parse::<u32>(r, "level")? == f.level
            && parse::<ProcessId>(r, "pivot")? == f.pivot
            && parse::<Value>(r, "pivotInput")? == f.pivot_input
            && parse::<Vec<Option<Value>>>(r, "fixedInputs")? == f.fixed_inputs;
        if same { Ok(()) } else { Err("finalization differs from the final map".into()) }
    }
}
