//! Prover sessions: phases, the configurations a prover may query,
//! commitments, adjudication, and the transcript.

use std::any::Any;
use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use thiserror::Error;

use crate::adversary::{Adversary, AdversaryError};
use crate::codec::{config_key, state_records, vertex_record, StateRecord, VertexTable};
use crate::delta::Decision;
use crate::error::CoreError;
use crate::explore::{search_output, Limits};
use crate::nis::{apply_schedule, apply_step, check_task, initial_configurations, Configuration, Schedule, TaskSpec, Verdict};
use crate::vertex::{ProcessId, Value, VertexId, VertexStore};

/// Anything that answers a prover's queries.
pub trait Protocol: Send {
    fn task(&self) -> TaskSpec;
    fn store(&self) -> &VertexStore;
    fn store_mut(&mut self) -> &mut VertexStore;
    /// Current level of the level graph, or 0 when not applicable.
    fn level(&self) -> u32;
    fn register(&mut self, c: &Configuration);
    /// The successor configuration and a short tag describing how it was
    /// produced.
    fn step(&mut self, c: &Configuration, q: ProcessId) -> Result<(Configuration, &'static str), AdversaryError>;
    fn output(
        &mut self,
        c: &Configuration,
        procs: &[ProcessId],
        y: Value,
    ) -> Result<(Option<Schedule>, &'static str), AdversaryError>;
    /// Called on every commit; `first` is true for the commit that ends
    /// phase 1.
    fn commit(&mut self, alpha: &Schedule, origin: &Configuration, first: bool) -> Result<Option<Json>, AdversaryError>;
    fn apply(&mut self, c: &Configuration, alpha: &Schedule) -> Result<Configuration, AdversaryError>;
    fn digest(&mut self) -> Result<String, AdversaryError>;
    fn as_any(&self) -> &dyn Any;
    fn as_any_mut(&mut self) -> &mut dyn Any;
}

fn step_tag(b: crate::adversary::StepBranch) -> &'static str {
    use crate::adversary::StepBranch::*;
    match b {
        Update => "update",
        Defined => "defined",
        Terminated => "terminated",
        Subdivided => "subdivided",
        Fixed => "fixed",
    }
}

fn output_tag(c: crate::adversary::OutputCase) -> &'static str {
    use crate::adversary::OutputCase::*;
    match c {
        AlreadyTerminated => "terminated",
        Refused => "refused",
        NearSameValue => "near-same",
        AllActive => "all-active",
        NearOtherValues => "near-other",
        Searched => "searched",
    }
}

impl Protocol for Adversary {
    fn task(&self) -> TaskSpec {
        *Adversary::task(self)
    }

    fn store(&self) -> &VertexStore {
        Adversary::store(self)
    }

    fn store_mut(&mut self) -> &mut VertexStore {
        Adversary::store_mut(self)
    }

    fn level(&self) -> u32 {
        Adversary::level(self)
    }

    fn register(&mut self, c: &Configuration) {
        Adversary::register(self, c)
    }

    fn step(&mut self, c: &Configuration, q: ProcessId) -> Result<(Configuration, &'static str), AdversaryError> {
        let out = self.handle_step_query(c, q)?;
        Ok((out.config, step_tag(out.branch)))
    }

    fn output(
        &mut self,
        c: &Configuration,
        procs: &[ProcessId],
        y: Value,
    ) -> Result<(Option<Schedule>, &'static str), AdversaryError> {
        let out = self.handle_output_query(c, procs, y)?;
        Ok((out.schedule, output_tag(out.case)))
    }

    fn commit(&mut self, alpha: &Schedule, origin: &Configuration, first: bool) -> Result<Option<Json>, AdversaryError> {
        if !first {
            return Ok(None);
        }
        self.finalize(alpha, origin)?;
        let f = self.delta().finale().expect("just finalized");
        Ok(Some(json!({
            "level": f.level,
            "pivot": f.pivot,
            "pivotInput": f.pivot_input,
            "fixedInputs": f.fixed_inputs,
        })))
    }

    fn apply(&mut self, c: &Configuration, alpha: &Schedule) -> Result<Configuration, AdversaryError> {
        self.apply_and_register(c, alpha)
    }

    fn digest(&mut self) -> Result<String, AdversaryError> {
        Adversary::digest(self)
    }

    fn as_any(&self) -> &dyn Any {
        self
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}

type Rule = Box<dyn Fn(&VertexStore, VertexId) -> Option<Decision> + Send>;

/// A fixed protocol given by a rule, used to check that adjudication can
/// actually declare a prover the winner.
pub struct MockProtocol {
    task: TaskSpec,
    store: VertexStore,
    rule: Rule,
    max_explore: usize,
}

impl MockProtocol {
    pub fn new(task: TaskSpec, rule: Rule) -> Self {
        MockProtocol { task, store: VertexStore::new(), rule, max_explore: 1_000_000 }
    }

    /// Every process outputs its own input after one round. Violates
    /// agreement whenever more than `k` distinct inputs are present.
    pub fn own_input(task: TaskSpec) -> Self {
        Self::new(
            task,
            Box::new(|s, v| {
                Some(if s.level(v) == 0 { Decision::Continue } else { Decision::Output(s.input(v)) })
            }),
        )
    }
}

impl Protocol for MockProtocol {
    fn task(&self) -> TaskSpec {
        self.task
    }

    fn store(&self) -> &VertexStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut VertexStore {
        &mut self.store
    }

    fn level(&self) -> u32 {
        0
    }

    fn register(&mut self, _: &Configuration) {}

    fn step(&mut self, c: &Configuration, q: ProcessId) -> Result<(Configuration, &'static str), AdversaryError> {
        Ok((apply_step(&mut self.store, c, q, &self.rule)?, "fixed"))
    }

    fn output(
        &mut self,
        c: &Configuration,
        procs: &[ProcessId],
        y: Value,
    ) -> Result<(Option<Schedule>, &'static str), AdversaryError> {
        let (found, _) = search_output(&mut self.store, &self.rule, c, procs, y, &Limits::unbounded(self.max_explore))?;
        Ok((found, "searched"))
    }

    fn commit(&mut self, _: &Schedule, _: &Configuration, _: bool) -> Result<Option<Json>, AdversaryError> {
        Ok(None)
    }

    fn apply(&mut self, c: &Configuration, alpha: &Schedule) -> Result<Configuration, AdversaryError> {
        Ok(apply_schedule(&mut self.store, c, alpha, &self.rule)?)
    }

    fn digest(&mut self) -> Result<String, AdversaryError> {
        Ok(crate::codec::digest_hex("fixed"))
    }

    fn as_any(&self) -> &dyn Any {
        self
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Running,
    ProverWins { reason: String },
    ProverLoses,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("illegal query: {0}")]
    IllegalQuery(String),
    #[error("configuration was not reached in this phase")]
    NotReached,
    #[error("committed schedule is empty")]
    EmptySchedule,
    #[error("session is over")]
    NotRunning,
    #[error(transparent)]
    Protocol(#[from] AdversaryError),
}

impl SessionError {
    /// Errors raised by the protocol itself rather than by a bad request.
    /// Resource caps are not counted: they make a run inconclusive.
    pub fn is_internal(&self) -> bool {
        match self {
            SessionError::Protocol(AdversaryError::Core(CoreError::CapExceeded(_))) => false,
            SessionError::Protocol(AdversaryError::Internal(_) | AdversaryError::Core(_) | AdversaryError::AlreadyFinalized) => true,
            _ => false,
        }
    }

    pub fn is_cap(&self) -> bool {
        matches!(self, SessionError::Protocol(AdversaryError::Core(CoreError::CapExceeded(_))))
    }
}

/// Where a configuration came from: an initial configuration and the
/// schedule applied to it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub origin: Configuration,
    pub schedule: Schedule,
}

#[derive(Clone, Debug)]
pub struct Reached {
    pub config: Configuration,
    pub key: String,
    /// Index into the phase's committed set.
    pub base: usize,
    /// Schedule from that committed configuration.
    pub beta: Schedule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TranscriptRecord {
    pub seq: u64,
    pub kind: String,
    pub request: Json,
    pub response: Json,
    pub t_after: u32,
    pub invariant_digest: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "camelCase")]
pub enum Action {
    Step {
        config: String,
        process: ProcessId,
    },
    Output {
        config: String,
        processes: Vec<ProcessId>,
        value: Value,
    },
    Commit {
        config: String,
        schedule: Schedule,
    },
    Concede,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Stepped { key: String },
    Answered { schedule: Option<Schedule> },
    Committed { phase: u32 },
    Conceded,
}

pub struct Session {
    protocol: Box<dyn Protocol>,
    task: TaskSpec,
    phase: u32,
    alpha: Schedule,
    /// Inputs fixed by the committed schedule; `None` for free processes.
    fixed: Vec<Option<Value>>,
    committed: Vec<(Configuration, Configuration)>,
    committed_index: HashMap<Configuration, usize>,
    reached: Vec<Reached>,
    reached_index: HashMap<Configuration, usize>,
    by_key: HashMap<String, Configuration>,
    by_path: HashMap<(Vec<Value>, Schedule), Configuration>,
    emitted: HashSet<VertexId>,
    transcript: Vec<TranscriptRecord>,
    status: Status,
    queries: u64,
}

fn states_json(store: &VertexStore, c: &Configuration) -> Vec<StateRecord> {
    state_records(store, c)
}

impl Session {
    pub fn new(mut protocol: Box<dyn Protocol>) -> Self {
        let task = protocol.task();
        let initial = initial_configurations(protocol.store_mut(), &task);
        let mut s = Session {
            protocol,
            task,
            phase: 1,
            alpha: Schedule::default(),
            fixed: vec![None; task.n as usize],
            committed: Vec::new(),
            committed_index: HashMap::new(),
            reached: Vec::new(),
            reached_index: HashMap::new(),
            by_key: HashMap::new(),
            by_path: HashMap::new(),
            emitted: HashSet::new(),
            transcript: Vec::new(),
            status: Status::Running,
            queries: 0,
        };
        for c in initial {
            s.add_committed(c.clone(), c);
        }
        s.adjudicate_committed();
        s
    }

    fn add_committed(&mut self, origin: Configuration, c: Configuration) {
        let key = config_key(self.protocol.store(), &c);
        let inputs = origin.inputs(self.protocol.store());
        self.by_path.insert((inputs, self.alpha.clone()), c.clone());
        self.by_key.insert(key, c.clone());
        self.committed_index.insert(c.clone(), self.committed.len());
        self.protocol.register(&c);
        self.committed.push((origin, c));
    }

    pub fn task(&self) -> TaskSpec {
        self.task
    }

    pub fn phase(&self) -> u32 {
        self.phase
    }

    pub fn status(&self) -> &Status {
        &self.status
    }

    pub fn is_running(&self) -> bool {
        self.status == Status::Running
    }

    pub fn queries(&self) -> u64 {
        self.queries
    }

    pub fn alpha(&self) -> &Schedule {
        &self.alpha
    }

    pub fn protocol(&self) -> &dyn Protocol {
        self.protocol.as_ref()
    }

    pub fn protocol_mut(&mut self) -> &mut dyn Protocol {
        self.protocol.as_mut()
    }

    pub fn adversary(&self) -> Option<&Adversary> {
        self.protocol.as_any().downcast_ref()
    }

    pub fn adversary_mut(&mut self) -> Option<&mut Adversary> {
        self.protocol.as_any_mut().downcast_mut()
    }

    pub fn store(&self) -> &VertexStore {
        self.protocol.store()
    }

    /// The committed configurations of the current phase, with their
    /// initial configurations.
    pub fn committed(&self) -> &[(Configuration, Configuration)] {
        &self.committed
    }

    pub fn reached(&self) -> &[Reached] {
        &self.reached
    }

    pub fn transcript(&self) -> &[TranscriptRecord] {
        &self.transcript
    }

    pub fn transcript_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.transcript {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn key_of(&self, c: &Configuration) -> String {
        config_key(self.protocol.store(), c)
    }

    /// Every configuration that may be queried in this phase, with its
    /// provenance, committed ones first.
    pub fn queryable(&self) -> Vec<(Configuration, Provenance)> {
        let mut out: Vec<_> = self.committed.iter().map(|(o, c)| (c.clone(), self.provenance_committed(o))).collect();
        for r in &self.reached {
            out.push((r.config.clone(), self.provenance_reached(r)));
        }
        out
    }

    fn provenance_committed(&self, origin: &Configuration) -> Provenance {
        Provenance { origin: origin.clone(), schedule: self.alpha.clone() }
    }

    fn provenance_reached(&self, r: &Reached) -> Provenance {
        let origin = self.committed[r.base].0.clone();
        Provenance { origin, schedule: self.alpha.concat(&r.beta) }
    }

    pub fn provenance(&self, c: &Configuration) -> Option<Provenance> {
        if let Some(&i) = self.committed_index.get(c) {
            return Some(self.provenance_committed(&self.committed[i].0));
        }
        self.reached_index.get(c).map(|&i| self.provenance_reached(&self.reached[i]))
    }

    pub fn is_queryable(&self, c: &Configuration) -> bool {
        self.committed_index.contains_key(c) || self.reached_index.contains_key(c)
    }

    /// Looks up a configuration by its key, or by `@<inputs>:<schedule>`
    /// where both parts are digit strings, e.g. `@012:1122`.
    pub fn resolve(&self, reference: &str) -> Result<Configuration, SessionError> {
        let found = match reference.strip_prefix('@') {
            Some(path) => {
                let (inputs, sched) = path.split_once(':').unwrap_or((path, ""));
                let digits = |s: &str| -> Option<Vec<u8>> {
                    s.chars().filter(|c| !c.is_whitespace()).map(|c| c.to_digit(10).map(|d| d as u8)).collect()
                };
                let bad = || SessionError::IllegalQuery(format!("malformed path {reference}"));
                let inputs = digits(inputs).ok_or_else(bad)?;
                let sched = Schedule(digits(sched).ok_or_else(bad)?.into_iter().map(ProcessId).collect());
                self.by_path.get(&(inputs, sched)).cloned()
            }
            None => self.by_key.get(reference).cloned(),
        };
        match found {
            Some(c) if self.is_queryable(&c) => Ok(c),
            Some(_) => Err(SessionError::IllegalQuery(format!("{reference} is not queryable in phase {}", self.phase))),
            None => Err(SessionError::IllegalQuery(format!("unknown configuration {reference}"))),
        }
    }

    fn new_vertices(&mut self, c: &Configuration) -> VertexTable {
        let roots: Vec<VertexId> = c.states.iter().map(|s| s.vertex()).collect();
        let store = self.protocol.store();
        let mut table = VertexTable::new();
        for v in store.closure(&roots) {
            if self.emitted.insert(v) {
                table.insert(store.key(v).to_hex(), vertex_record(store, v));
            }
        }
        table
    }

    fn config_json(&mut self, c: &Configuration) -> Json {
        let vertices = self.new_vertices(c);
        let store = self.protocol.store();
        let mut j = json!({ "configKey": config_key(store, c), "states": states_json(store, c) });
        if !vertices.is_empty() {
            j["vertices"] = serde_json::to_value(vertices).expect("table serializes");
        }
        j
    }

    fn record(&mut self, kind: &str, request: Json, response: Json) -> Result<(), SessionError> {
        let digest = self.protocol.digest()?;
        self.transcript.push(TranscriptRecord {
            seq: self.transcript.len() as u64,
            kind: kind.to_string(),
            request,
            response,
            t_after: self.protocol.level(),
            invariant_digest: digest,
        });
        Ok(())
    }

    fn check_running(&self) -> Result<(), SessionError> {
        if self.is_running() { Ok(()) } else { Err(SessionError::NotRunning) }
    }

    fn check_active(&self, c: &Configuration, q: ProcessId) -> Result<(), SessionError> {
        if q.0 == 0 || q.index() >= c.n() || !c.state(q).is_active() {
            return Err(SessionError::IllegalQuery(format!("{q} is not active")));
        }
        Ok(())
    }

    pub fn step_query(&mut self, c: &Configuration, q: ProcessId) -> Result<Configuration, SessionError> {
        self.check_running()?;
        if !self.is_queryable(c) {
            return Err(SessionError::IllegalQuery("configuration not in A or A'".into()));
        }
        self.check_active(c, q)?;
        self.queries += 1;
        let (next, tag) = self.protocol.step(c, q)?;
        let (base, beta) = match self.committed_index.get(c) {
            Some(&i) => (i, Schedule(vec![q])),
            None => {
                let r = &self.reached[self.reached_index[c]];
                let mut beta = r.beta.clone();
                beta.0.push(q);
                (r.base, beta)
            }
        };
        let key = self.key_of(&next);
        if !self.committed_index.contains_key(&next) && !self.reached_index.contains_key(&next) {
            self.reached_index.insert(next.clone(), self.reached.len());
            self.reached.push(Reached { config: next.clone(), key: key.clone(), base, beta: beta.clone() });
        }
        let inputs = self.committed[base].0.inputs(self.protocol.store());
        self.by_path.entry((inputs, self.alpha.concat(&beta))).or_insert_with(|| next.clone());
        self.by_key.insert(key, next.clone());
        let request = json!({ "configKey": self.key_of(c), "process": q });
        let mut response = self.config_json(&next);
        response["branch"] = json!(tag);
        self.record("step", request, response)?;
        let verdict = check_task(self.protocol.store(), &next, &self.task);
        if !verdict.is_ok() {
            self.status = Status::ProverWins { reason: verdict_reason(&verdict) };
        }
        Ok(next)
    }

    pub fn output_query(&mut self, c: &Configuration, procs: &[ProcessId], y: Value) -> Result<Option<Schedule>, SessionError> {
        self.check_running()?;
        if !self.is_queryable(c) {
            return Err(SessionError::IllegalQuery("configuration not in A or A'".into()));
        }
        if procs.is_empty() {
            return Err(SessionError::IllegalQuery("empty process set".into()));
        }
        for &q in procs {
            self.check_active(c, q)?;
        }
        if y > self.task.k {
            return Err(SessionError::IllegalQuery(format!("value {y} out of range")));
        }
        let procs: Vec<ProcessId> = procs.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        self.queries += 1;
        let (found, tag) = self.protocol.output(c, &procs, y)?;
        let request = json!({ "configKey": self.key_of(c), "processes": procs, "value": y });
        let response = json!({ "schedule": found, "case": tag });
        self.record("output", request, response)?;
        Ok(found)
    }

    /// Commits to `alpha_prime` from the committed configuration `c`.
    pub fn commit(&mut self, c: &Configuration, alpha_prime: &Schedule) -> Result<u32, SessionError> {
        self.check_running()?;
        if alpha_prime.is_empty() {
            return Err(SessionError::EmptySchedule);
        }
        let Some(&i) = self.committed_index.get(c) else {
            return Err(SessionError::IllegalQuery("commit must start from a committed configuration".into()));
        };
        let end = self.protocol.apply(c, alpha_prime).map_err(|_| SessionError::NotReached)?;
        if !self.reached_index.contains_key(&end) {
            return Err(SessionError::NotReached);
        }
        self.queries += 1;
        let origin = self.committed[i].0.clone();
        let first = self.phase == 1;
        let alpha = self.alpha.concat(alpha_prime);
        let origin_inputs = origin.inputs(self.protocol.store());
        for q in alpha.processes() {
            self.fixed[q.index()] = Some(origin_inputs[q.index()]);
        }
        let finale = self.protocol.commit(&alpha, &origin, first)?;
        let request = json!({ "configKey": self.key_of(c), "schedule": alpha_prime });

        self.alpha = alpha;
        self.phase += 1;
        self.committed.clear();
        self.committed_index.clear();
        self.reached.clear();
        self.reached_index.clear();
        let task = self.task;
        let fixed = self.fixed.clone();
        let all = initial_configurations(self.protocol.store_mut(), &task);
        let mut configs = Vec::new();
        for c0 in all {
            let inputs = c0.inputs(self.protocol.store());
            if fixed.iter().zip(&inputs).any(|(f, x)| f.is_some_and(|f| f != *x)) {
                continue;
            }
            let ca = self.protocol.apply(&c0, &self.alpha)?;
            self.add_committed(c0, ca.clone());
            configs.push(ca);
        }
        let mut listed = Vec::new();
        for ca in &configs {
            listed.push(self.config_json(ca));
        }
        self.adjudicate_committed();
        let response = json!({
            "phase": self.phase,
            "alpha": self.alpha,
            "origin": self.key_of(&origin),
            "configs": listed,
            "status": self.status,
        });
        self.record("commit", request, response)?;
        if let Some(f) = finale {
            let request = json!({ "alpha": self.alpha, "origin": self.key_of(&origin) });
            self.record("finalize", request, f)?;
        }
        Ok(self.phase)
    }

    fn adjudicate_committed(&mut self) {
        for (_, c) in &self.committed {
            let v = check_task(self.protocol.store(), c, &self.task);
            if !v.is_ok() {
                self.status = Status::ProverWins { reason: verdict_reason(&v) };
                return;
            }
        }
        if self.committed.iter().all(|(_, c)| c.is_final()) {
            self.status = Status::ProverLoses;
        }
    }

    pub fn execute(&mut self, action: &Action) -> Result<Outcome, SessionError> {
        match action {
            Action::Step { config, process } => {
                let c = self.resolve(config)?;
                let next = self.step_query(&c, *process)?;
                Ok(Outcome::Stepped { key: self.key_of(&next) })
            }
            Action::Output { config, processes, value } => {
                let c = self.resolve(config)?;
                Ok(Outcome::Answered { schedule: self.output_query(&c, processes, *value)? })
            }
            Action::Commit { config, schedule } => {
                let c = self.resolve(config)?;
                Ok(Outcome::Committed { phase: self.commit(&c, schedule)? })
            }
            Action::Concede => Ok(Outcome::Conceded),
        }
    }

    /// The defining equation of the committed set and prefix closure of the
    /// reached set. Returns a description of the first violation.
    pub fn check_structure(&mut self) -> Option<String> {
        for (origin, c) in self.committed.clone() {
            match self.protocol.apply(&origin, &self.alpha.clone()) {
                Ok(got) if got == c => {}
                _ => return Some(format!("committed configuration {} is not its origin under alpha", self.key_of(&c))),
            }
        }
        for r in self.reached.clone() {
            let base = self.committed[r.base].1.clone();
            let mut cur = base;
            for (j, &q) in r.beta.0.iter().enumerate() {
                cur = match self.protocol.apply(&cur, &Schedule(vec![q])) {
                    Ok(c) => c,
                    Err(e) => return Some(format!("prefix {j} of {} fails: {e}", r.key)),
                };
                if !self.is_queryable(&cur) {
                    return Some(format!("prefix {} of {} is not in A'", j + 1, r.key));
                }
            }
            if cur != r.config {
                return Some(format!("provenance of {} does not replay", r.key));
            }
        }
        None
    }
}

fn verdict_reason(v: &Verdict) -> String {
    match v {
        Verdict::Ok => "ok".into(),
        Verdict::ViolatesValidity { process, output } => format!("validity: {process} output {output}"),
        Verdict::ViolatesAgreement { outputs } => format!("agreement: outputs {outputs:?}"),
    }
}
