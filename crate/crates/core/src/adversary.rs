//! The adaptive protocol that answers a prover's queries while keeping the
//! protocol map `δ` partial, so that no finite interaction can exhibit a
//! violation of k-set agreement.
//!
//! Phase 1 keeps `δ` defined on every level below `t` and leaves level `t`
//! open except for explicit outputs. The first commit completes `δ` on the
//! subdivision of the cliques the committed schedule can still reach.

use std::cell::RefCell;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{digest_hex, VertexTable};
use crate::complex::view::{adjacent, is_simplex, neighbors};
use crate::delta::{Decision, Delta, DeltaMap};
use crate::error::CoreError;
use crate::explore::{reach, search_output_rounds, Flow, Limits};
use crate::nis::{apply_schedule, apply_step, initial_configurations, Configuration, ProcessState, Schedule, TaskSpec};
use crate::vertex::{ProcessId, Value, VertexId, VertexStore};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdversaryError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("{0} is not active")]
    NotActive(ProcessId),
    #[error("configuration was never issued")]
    StaleConfiguration,
    #[error("configuration is unknown")]
    UnknownConfiguration,
    #[error("{0} is not active in the queried configuration")]
    InactiveProcess(ProcessId),
    #[error("output value {0} is out of range")]
    InvalidValue(Value),
    #[error("empty process set")]
    EmptyProcessSet,
    #[error("already finalized")]
    AlreadyFinalized,
    #[error("committed schedule is empty")]
    EmptyCommit,
    #[error("internal invariant failure: {0}")]
    Internal(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdversaryConfig {
    pub max_level: u32,
    pub max_explore: usize,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        AdversaryConfig { max_level: 64, max_explore: 2_000_000 }
    }
}

/// How a phase-1 step query was answered.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum StepBranch {
    Update,
    Defined,
    Terminated,
    Subdivided,
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum OutputCase {
    AlreadyTerminated,
    Refused,
    NearSameValue,
    AllActive,
    NearOtherValues,
    Searched,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub config: Configuration,
    pub branch: StepBranch,
}

#[derive(Clone, Debug)]
pub struct OutputOutcome {
    pub schedule: Option<Schedule>,
    pub case: OutputCase,
}

/// Data fixed at the first commit.
#[derive(Debug)]
pub struct Finale {
    pub level: u32,
    pub pivot: ProcessId,
    pub pivot_input: Value,
    pivot_vertex: VertexId,
    pub fixed_inputs: Vec<Option<Value>>,
    /// Terminated vertices per value at the moment of finalization.
    pub terminated: Vec<Vec<VertexId>>,
    cache: RefCell<HashMap<VertexId, Option<Decision>>>,
}

impl Clone for Finale {
    fn clone(&self) -> Self {
        Finale {
            level: self.level,
            pivot: self.pivot,
            pivot_input: self.pivot_input,
            pivot_vertex: self.pivot_vertex,
            fixed_inputs: self.fixed_inputs.clone(),
            terminated: self.terminated.clone(),
            cache: RefCell::new(self.cache.borrow().clone()),
        }
    }
}

impl Finale {
    /// Whether `set` lies in a clique of the `(r-1)`-fold subdivision of
    /// the level-1 cliques every vertex of which has seen the pivot's base
    /// state and whose inputs agree with the fixed ones.
    fn covers(&self, store: &VertexStore, lower: &DeltaMap, set: &[VertexId], r: u32) -> bool {
        if !is_simplex(store, lower, set, r) {
            return false;
        }
        let mut rest = Vec::new();
        let mut top: &[VertexId] = &[];
        for &v in set {
            if store.level(v) < r {
                rest.push(v);
            } else if store.scan(v).len() > top.len() {
                top = store.scan(v);
            }
        }
        if r == 1 {
            if !rest.is_empty() {
                return false;
            }
            if set.iter().any(|&v| !store.scan(v).contains(&self.pivot_vertex)) {
                return false;
            }
            return top.iter().all(|&m| match self.fixed_inputs[store.pid(m).index()] {
                Some(x) => store.input(m) == x,
                None => true,
            });
        }
        rest.extend_from_slice(top);
        self.covers(store, lower, &rest, r - 1)
    }

    fn decide(&self, store: &VertexStore, lower: &DeltaMap, v: VertexId) -> Option<Decision> {
        if let Some(d) = self.cache.borrow().get(&v) {
            return *d;
        }
        let d = if self.covers(store, lower, &[v], self.level) {
            let near = self.terminated.iter().enumerate().find(|(_, xs)| {
                xs.iter().any(|&x| adjacent(store, lower, v, x, self.level))
            });
            Some(Decision::Output(near.map(|(b, _)| b as Value).unwrap_or(self.pivot_input)))
        } else {
            None
        };
        self.cache.borrow_mut().insert(v, d);
        d
    }
}

/// The adversary's protocol map: explicit outputs, continue below the
/// current level, and after the first commit a rule on the last level.
#[derive(Clone, Debug, Default)]
pub struct AdversaryDelta {
    map: DeltaMap,
    finale: Option<Finale>,
}

impl AdversaryDelta {
    pub fn lower(&self) -> &DeltaMap {
        &self.map
    }

    pub fn finale(&self) -> Option<&Finale> {
        self.finale.as_ref()
    }
}

impl Delta for AdversaryDelta {
    fn decide(&self, store: &VertexStore, v: VertexId) -> Option<Decision> {
        if let Some(d) = self.map.get_explicit(v) {
            return Some(d);
        }
        if store.level(v) < self.map.continue_below() {
            return Some(Decision::Continue);
        }
        match &self.finale {
            Some(f) if store.level(v) == f.level => f.decide(store, &self.map, v),
            _ => None,
        }
    }
}

/// A NONE-answered output query. The refusal set of its value at level `t`
/// is every vertex of `G_t` reachable as a state of `procs` from `config`.
#[derive(Clone, Debug)]
pub struct RefusalScope {
    pub config: Configuration,
    pub procs: Vec<ProcessId>,
    pub value: Value,
    pub level: u32,
}

/// Vertices of `G_t` realized by `procs` from one configuration, sorted by
/// canonical key.
#[derive(Clone, Debug, Default)]
pub struct QSet {
    pub vertices: Vec<VertexId>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AdversaryStats {
    pub subdivisions: u32,
    pub step_terminations: u32,
    pub output_terminations: u32,
    pub refusals: u32,
    pub explored: u64,
}

pub struct Adversary {
    task: TaskSpec,
    store: VertexStore,
    delta: AdversaryDelta,
    t: u32,
    terminated: Vec<Vec<VertexId>>,
    scopes: Vec<RefusalScope>,
    reach_cache: HashMap<(Configuration, u32), (u32, Arc<Vec<VertexId>>)>,
    issued: HashSet<Configuration>,
    config: AdversaryConfig,
    nbr_cache: HashMap<(VertexId, u32), Arc<Vec<VertexId>>>,
    solo_far_cache: HashMap<VertexId, bool>,
    pair_cache: HashMap<(VertexId, VertexId), u8>,
    post_cache: HashMap<(Configuration, u32, Value), Option<Schedule>>,
    stats: AdversaryStats,
}

fn qmask(procs: &[ProcessId]) -> u32 {
    procs.iter().fold(0, |m, p| m | 1 << p.index())
}

impl Adversary {
    pub fn new(task: TaskSpec) -> Result<Self, AdversaryError> {
        Self::with_config(task, AdversaryConfig::default())
    }

    pub fn with_config(task: TaskSpec, config: AdversaryConfig) -> Result<Self, AdversaryError> {
        let task = TaskSpec::new(task.n, task.k).map_err(|e| AdversaryError::InvalidTask(e.to_string()))?;
        let mut map = DeltaMap::new();
        map.set_continue_below(1);
        let mut adv = Adversary {
            task,
            store: VertexStore::new(),
            delta: AdversaryDelta { map, finale: None },
            t: 1,
            terminated: vec![Vec::new(); task.k as usize + 1],
            scopes: Vec::new(),
            reach_cache: HashMap::new(),
            issued: HashSet::new(),
            config,
            nbr_cache: HashMap::new(),
            solo_far_cache: HashMap::new(),
            pair_cache: HashMap::new(),
            post_cache: HashMap::new(),
            stats: AdversaryStats::default(),
        };
        for c in initial_configurations(&mut adv.store, &task) {
            adv.issued.insert(c);
        }
        Ok(adv)
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn level(&self) -> u32 {
        self.t
    }

    pub fn store(&self) -> &VertexStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut VertexStore {
        &mut self.store
    }

    pub fn delta(&self) -> &AdversaryDelta {
        &self.delta
    }

    pub fn is_finalized(&self) -> bool {
        self.delta.finale.is_some()
    }

    pub fn terminated(&self, a: Value) -> &[VertexId] {
        &self.terminated[a as usize]
    }

    pub fn scopes(&self) -> &[RefusalScope] {
        &self.scopes
    }

    pub fn stats(&self) -> &AdversaryStats {
        &self.stats
    }

    /// Terminates `v` with `a`, bypassing every check. For exercising the
    /// auditor on corrupted states.
    #[doc(hidden)]
    pub fn force_output(&mut self, v: VertexId, a: Value) {
        self.delta.map.set(v, Decision::Output(a));
        self.terminated[a as usize].push(v);
    }

    pub fn initial_configurations(&mut self) -> Vec<Configuration> {
        initial_configurations(&mut self.store, &self.task)
    }

    pub fn register(&mut self, c: &Configuration) {
        self.issued.insert(c.clone());
    }

    pub fn is_issued(&self, c: &Configuration) -> bool {
        self.issued.contains(c)
    }

    pub fn decide(&self, v: VertexId) -> Option<Decision> {
        self.delta.decide(&self.store, v)
    }

    fn is_terminated(&self, v: VertexId) -> bool {
        matches!(self.decide(v), Some(Decision::Output(_)))
    }

    /// Neighbors of `v` in `G_r`, cached.
    pub fn neighbors_at(&mut self, v: VertexId, r: u32) -> Result<Arc<Vec<VertexId>>, AdversaryError> {
        if let Some(n) = self.nbr_cache.get(&(v, r)) {
            return Ok(n.clone());
        }
        let n = Arc::new(neighbors(&mut self.store, &self.delta, &self.task, v, r)?);
        self.nbr_cache.insert((v, r), n.clone());
        Ok(n)
    }

    pub fn adjacent_at(&self, u: VertexId, w: VertexId, r: u32) -> bool {
        adjacent(&self.store, &self.delta, u, w, r)
    }

    fn fill_and_subdivide(&mut self) -> Result<(), AdversaryError> {
        if self.t + 1 > self.config.max_level {
            return Err(CoreError::CapExceeded(format!("level {} exceeds maxLevel {}", self.t + 1, self.config.max_level)).into());
        }
        self.t += 1;
        self.delta.map.set_continue_below(self.t);
        self.stats.subdivisions += 1;
        Ok(())
    }

    fn check_issued(&self, c: &Configuration) -> Result<(), AdversaryError> {
        if c.n() != self.task.n as usize {
            return Err(AdversaryError::UnknownConfiguration);
        }
        if !self.issued.contains(c) {
            return Err(AdversaryError::StaleConfiguration);
        }
        Ok(())
    }

    pub fn handle_step_query(&mut self, c: &Configuration, q: ProcessId) -> Result<StepOutcome, AdversaryError> {
        self.check_issued(c)?;
        if q.0 == 0 || q.index() >= c.n() || !c.state(q).is_active() {
            return Err(AdversaryError::NotActive(q));
        }
        let out = self.step_inner(c, q)?;
        self.issued.insert(out.config.clone());
        Ok(out)
    }

    fn step_inner(&mut self, c: &Configuration, q: ProcessId) -> Result<StepOutcome, AdversaryError> {
        if self.is_finalized() {
            let config = apply_step(&mut self.store, c, q, &self.delta)
                .map_err(|e| AdversaryError::Internal(format!("finalized protocol stuck: {e}")))?;
            return Ok(StepOutcome { config, branch: StepBranch::Fixed });
        }
        let ProcessState::Updated(base) = *c.state(q) else {
            let config = apply_step(&mut self.store, c, q, &self.delta)?;
            return Ok(StepOutcome { config, branch: StepBranch::Update });
        };
        let r = self.store.level(base) + 1;
        let members: Vec<VertexId> = c.snapshot(&self.store, r).into_iter().flatten().collect();
        let s = self.store.derived(q, &members)?;
        if self.decide(s).is_some() {
            let config = apply_step(&mut self.store, c, q, &self.delta)?;
            return Ok(StepOutcome { config, branch: StepBranch::Defined });
        }
        if self.store.level(s) != self.t {
            return Err(AdversaryError::Internal(format!(
                "undefined scan result at level {} while t = {}",
                self.store.level(s),
                self.t
            )));
        }
        for a in self.task.values() {
            if self.admissible(s, a)? {
                if self.refused(s, a)? {
                    return Err(AdversaryError::Internal(format!(
                        "vertex {} is admissible for {a} but lies in a refusal scope",
                        self.store.key(s)
                    )));
                }
                self.delta.map.set(s, Decision::Output(a));
                self.terminated[a as usize].push(s);
                self.stats.step_terminations += 1;
                let config = apply_step(&mut self.store, c, q, &self.delta)?;
                return Ok(StepOutcome { config, branch: StepBranch::Terminated });
            }
        }
        self.fill_and_subdivide()?;
        let config = apply_step(&mut self.store, c, q, &self.delta)?;
        Ok(StepOutcome { config, branch: StepBranch::Subdivided })
    }

    /// Distance from `s` to the not-seen-`a` vertices is at least 2 and to
    /// every other value's terminated set at least 3, in `G_t`.
    fn admissible(&mut self, s: VertexId, a: Value) -> Result<bool, AdversaryError> {
        if !self.store.has_seen(s, a) {
            return Ok(false);
        }
        let t = self.t;
        let nbrs = self.neighbors_at(s, t)?;
        if nbrs.iter().any(|&w| !self.store.has_seen(w, a)) {
            return Ok(false);
        }
        for b in self.task.values().filter(|&b| b != a) {
            for &x in &self.terminated[b as usize] {
                if self.adjacent_at(s, x, t) || nbrs.iter().any(|&z| z == x || self.adjacent_at(z, x, t)) {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// Vertices of `G_t` realized by `procs` from `c` using only objects
    /// `S_1..S_t`.
    pub fn compute_q_set(&mut self, c: &Configuration, procs: &[ProcessId]) -> Result<QSet, AdversaryError> {
        let limits = self.phase_one_limits();
        let mut mark = HashSet::new();
        let r = reach(&mut self.store, &self.delta, c, procs, &limits, |_, v, _| {
            mark.insert(v);
            Flow::Continue
        })?;
        self.stats.explored += r.nodes as u64;
        let mut vertices: Vec<VertexId> = mark.into_iter().collect();
        let store = &self.store;
        vertices.sort_by_key(|&v| store.key(v));
        Ok(QSet { vertices })
    }

    fn phase_one_limits(&self) -> Limits {
        Limits { max_object: Some(self.t), open_level: Some(self.t), max_nodes: self.config.max_explore }
    }

    /// A schedule of `procs` from `c` after which some process of `procs`
    /// is in state `v`.
    pub fn witness(&mut self, c: &Configuration, procs: &[ProcessId], v: VertexId) -> Result<Schedule, AdversaryError> {
        let limits = self.phase_one_limits();
        let mut hit = None;
        reach(&mut self.store, &self.delta, c, procs, &limits, |_, w, sched| {
            if w == v {
                hit = Some(Schedule(sched.to_vec()));
                Flow::Stop
            } else {
                Flow::Continue
            }
        })?;
        hit.ok_or_else(|| AdversaryError::Internal("no witness for a reachable vertex".into()))
    }

    /// Level-`t` vertices of one refusal scope, cached per level.
    fn scope_reach(&mut self, c: &Configuration, procs: &[ProcessId]) -> Result<Arc<Vec<VertexId>>, AdversaryError> {
        let key = (c.clone(), qmask(procs));
        if let Some((lvl, set)) = self.reach_cache.get(&key) {
            if *lvl == self.t {
                return Ok(set.clone());
            }
        }
        let mut vs = self.compute_q_set(c, procs)?.vertices;
        vs.sort();
        let rc = Arc::new(vs);
        self.reach_cache.insert(key, (self.t, rc.clone()));
        Ok(rc)
    }

    /// Membership of `v` in the level-`t` refusal set of `a`.
    pub fn refused(&mut self, v: VertexId, a: Value) -> Result<bool, AdversaryError> {
        for i in 0..self.scopes.len() {
            if self.scopes[i].value != a {
                continue;
            }
            let (c, procs) = (self.scopes[i].config.clone(), self.scopes[i].procs.clone());
            if self.scope_reach(&c, &procs)?.binary_search(&v).is_ok() {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// The level-`t` refusal set of `a`, sorted.
    pub fn refusal_set(&mut self, a: Value) -> Result<Vec<VertexId>, AdversaryError> {
        let mut out = BTreeSet::new();
        for i in 0..self.scopes.len() {
            if self.scopes[i].value != a {
                continue;
            }
            let (c, procs) = (self.scopes[i].config.clone(), self.scopes[i].procs.clone());
            out.extend(self.scope_reach(&c, &procs)?.iter().copied());
        }
        Ok(out.into_iter().collect())
    }

    pub fn handle_output_query(
        &mut self,
        c: &Configuration,
        procs: &[ProcessId],
        y: Value,
    ) -> Result<OutputOutcome, AdversaryError> {
        if c.n() != self.task.n as usize {
            return Err(AdversaryError::UnknownConfiguration);
        }
        if !self.issued.contains(c) {
            return Err(AdversaryError::UnknownConfiguration);
        }
        if procs.is_empty() {
            return Err(AdversaryError::EmptyProcessSet);
        }
        if y > self.task.k {
            return Err(AdversaryError::InvalidValue(y));
        }
        let procs: Vec<ProcessId> = procs.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        for &q in &procs {
            if q.0 == 0 || q.index() >= c.n() || !c.state(q).is_active() {
                return Err(AdversaryError::InactiveProcess(q));
            }
        }
        if self.is_finalized() {
            return self.output_after_finalization(c, &procs, y);
        }
        let qs = self.compute_q_set(c, &procs)?;

        if let Some(&v) = qs.vertices.iter().find(|&&v| self.decide(v) == Some(Decision::Output(y))) {
            let w = self.witness(c, &procs, v)?;
            return Ok(OutputOutcome { schedule: Some(w), case: OutputCase::AlreadyTerminated });
        }

        let mut open = Vec::new();
        for &v in &qs.vertices {
            let other = matches!(self.decide(v), Some(Decision::Output(b)) if b != y);
            if !self.store.has_seen(v, y) || other || self.refused(v, y)? {
                continue;
            }
            open.push(v);
        }
        if open.is_empty() {
            self.add_scope(c, &procs, y);
            return Ok(OutputOutcome { schedule: None, case: OutputCase::Refused });
        }

        let t = self.t;
        let near_y = open
            .iter()
            .copied()
            .find(|&u| self.terminated[y as usize].iter().any(|&x| adjacent(&self.store, &self.delta, u, x, t)));
        let (chosen, case) = match near_y {
            Some(u) => (Some(u), OutputCase::NearSameValue),
            None => {
                let mut pick = None;
                for &u in &open {
                    let nbrs = self.neighbors_at(u, t)?;
                    if !nbrs.iter().any(|&w| self.is_terminated(w)) {
                        pick = Some(u);
                        break;
                    }
                }
                (pick, OutputCase::AllActive)
            }
        };
        let Some(u) = chosen else {
            self.add_scope(c, &procs, y);
            return Ok(OutputOutcome { schedule: None, case: OutputCase::NearOtherValues });
        };

        let mut sched = self.witness(c, &procs, u)?;
        self.fill_and_subdivide()?;
        let p = self.store.pid(u);
        let v = self.store.derived(p, &[u])?;
        self.delta.map.set(v, Decision::Output(y));
        self.terminated[y as usize].push(v);
        self.stats.output_terminations += 1;
        sched.0.push(p);
        sched.0.push(p);
        let end = apply_schedule(&mut self.store, c, &sched, &self.delta)?;
        if end.state(p) != &ProcessState::Terminated(v, y) {
            return Err(AdversaryError::Internal("output witness does not reach the new terminated state".into()));
        }
        Ok(OutputOutcome { schedule: Some(sched), case })
    }

    fn add_scope(&mut self, c: &Configuration, procs: &[ProcessId], y: Value) {
        self.stats.refusals += 1;
        let dup = self.scopes.iter().any(|s| s.value == y && &s.config == c && s.procs == procs);
        if !dup {
            self.scopes.push(RefusalScope { config: c.clone(), procs: procs.to_vec(), value: y, level: self.t });
        }
    }

    fn output_after_finalization(
        &mut self,
        c: &Configuration,
        procs: &[ProcessId],
        y: Value,
    ) -> Result<OutputOutcome, AdversaryError> {
        let key = (c.clone(), qmask(procs), y);
        if let Some(hit) = self.post_cache.get(&key) {
            return Ok(OutputOutcome { schedule: hit.clone(), case: OutputCase::Searched });
        }
        let limits = Limits::unbounded(self.config.max_explore);
        let (found, ex) = search_output_rounds(&mut self.store, &self.delta, c, procs, y, &limits)?;
        self.stats.explored += ex.nodes as u64;
        if ex.horizon_hit {
            return Err(AdversaryError::Internal("finalized protocol undefined on a reachable state".into()));
        }
        self.post_cache.insert(key, found.clone());
        Ok(OutputOutcome { schedule: found, case: OutputCase::Searched })
    }

    /// Completes `δ` at the start of phase 2. `origin` is the initial
    /// configuration the committed schedule was applied to.
    pub fn finalize(&mut self, alpha: &Schedule, origin: &Configuration) -> Result<(), AdversaryError> {
        if self.is_finalized() {
            return Err(AdversaryError::AlreadyFinalized);
        }
        let Some(&pivot) = alpha.0.first() else { return Err(AdversaryError::EmptyCommit) };
        let inputs = origin.inputs(&self.store);
        let mut fixed = vec![None; self.task.n as usize];
        for q in alpha.processes() {
            fixed[q.index()] = Some(inputs[q.index()]);
        }
        let pivot_input = inputs[pivot.index()];
        let pivot_vertex = self.store.base(pivot, pivot_input);
        self.fill_and_subdivide()?;
        self.delta.finale = Some(Finale {
            level: self.t,
            pivot,
            pivot_input,
            pivot_vertex,
            fixed_inputs: fixed,
            terminated: self.terminated.clone(),
            cache: RefCell::new(HashMap::new()),
        });
        self.post_cache.clear();
        Ok(())
    }

    /// Applies a schedule under the current protocol and registers the result.
    pub fn apply_and_register(&mut self, c: &Configuration, alpha: &Schedule) -> Result<Configuration, AdversaryError> {
        let out = apply_schedule(&mut self.store, c, alpha, &self.delta)?;
        self.issued.insert(out.clone());
        Ok(out)
    }

    /// Terminated vertex `x` has no neighbor that has not seen its output.
    /// Decided in the graph of its creation level, where the answer is the
    /// same as at every later level.
    fn far_from_unseen(&mut self, x: VertexId, a: Value) -> Result<bool, AdversaryError> {
        if let Some(&ok) = self.solo_far_cache.get(&x) {
            return Ok(ok);
        }
        let ok = self.store.has_seen(x, a) && {
            let c = self.store.level(x);
            let nbrs = self.neighbors_at(x, c)?;
            nbrs.iter().all(|&w| self.store.has_seen(w, a))
        };
        self.solo_far_cache.insert(x, ok);
        Ok(ok)
    }

    /// Distance between two terminated vertices, capped at 3. Decided at the
    /// higher of their creation levels.
    pub fn terminated_distance(&mut self, x: VertexId, w: VertexId) -> Result<u8, AdversaryError> {
        if x == w {
            return Ok(0);
        }
        let key = (x.min(w), x.max(w));
        if let Some(&d) = self.pair_cache.get(&key) {
            return Ok(d);
        }
        let (hi, lo) = if self.store.level(x) >= self.store.level(w) { (x, w) } else { (w, x) };
        let r = self.store.level(hi);
        let d = if self.adjacent_at(hi, lo, r) {
            1
        } else {
            let nbrs = self.neighbors_at(hi, r)?;
            if nbrs.iter().any(|&z| self.adjacent_at(z, lo, r)) { 2 } else { 3 }
        };
        self.pair_cache.insert(key, d);
        Ok(d)
    }

    /// Every terminated-with-`a` vertex that is within distance 1 of a
    /// vertex that has not seen `a`.
    pub fn inv_terminated_near_unseen(&mut self) -> Result<Vec<(Value, VertexId)>, AdversaryError> {
        let mut bad = Vec::new();
        for a in self.task.values() {
            for i in 0..self.terminated[a as usize].len() {
                let x = self.terminated[a as usize][i];
                if !self.far_from_unseen(x, a)? {
                    bad.push((a, x));
                }
            }
        }
        Ok(bad)
    }

    /// Pairs of differently-terminated vertices within distance 2.
    pub fn inv_close_outputs(&mut self) -> Result<Vec<(VertexId, VertexId, u8)>, AdversaryError> {
        let mut bad = Vec::new();
        let k = self.task.k;
        for a in 0..=k {
            for b in a + 1..=k {
                let (xs, ws) = (self.terminated[a as usize].clone(), self.terminated[b as usize].clone());
                for &x in &xs {
                    for &w in &ws {
                        let d = self.terminated_distance(x, w)?;
                        if d < 3 {
                            bad.push((x, w, d));
                        }
                    }
                }
            }
        }
        Ok(bad)
    }

    /// Refused vertices that have seen their value and are not adjacent to
    /// (or in) any other value's terminated set.
    pub fn inv_refusals(&mut self) -> Result<Vec<(Value, VertexId)>, AdversaryError> {
        let mut bad = Vec::new();
        let t = self.t;
        for a in self.task.values() {
            for v in self.refusal_set(a)? {
                if !self.store.has_seen(v, a) {
                    continue;
                }
                let covered = self.task.values().filter(|&b| b != a).any(|b| {
                    self.terminated[b as usize].iter().any(|&x| x == v || adjacent(&self.store, &self.delta, v, x, t))
                });
                if !covered {
                    bad.push((a, v));
                }
            }
        }
        Ok(bad)
    }

    /// Explicit entries at level `t` that continue, or a level gap.
    pub fn inv_level_shape(&self) -> Vec<String> {
        let mut bad = Vec::new();
        let below = self.delta.map.continue_below();
        if below != self.t {
            bad.push(format!("protocol continues below level {below} but t = {}", self.t));
        }
        for (v, d) in self.delta.map.explicit() {
            if d == Decision::Continue {
                bad.push(format!("explicit continue at {}", self.store.key(v)));
            }
            if self.store.level(v) > self.t {
                bad.push(format!("decision above level t at {}", self.store.key(v)));
            }
        }
        bad
    }

    /// Short hash of the adversary's observable state: level, terminated
    /// counts, refusal scope counts, and capped distances between the sets.
    pub fn digest(&mut self) -> Result<String, AdversaryError> {
        let mut text = format!("t={}", self.t);
        let t_sizes: Vec<String> = self.terminated.iter().map(|v| v.len().to_string()).collect();
        text.push_str(&format!(";T={}", t_sizes.join(",")));
        let scopes: Vec<String> = self
            .task
            .values()
            .map(|a| self.scopes.iter().filter(|s| s.value == a).count().to_string())
            .collect();
        text.push_str(&format!(";X={}", scopes.join(",")));
        let near = self.inv_terminated_near_unseen()?;
        let tn: Vec<String> = self
            .task
            .values()
            .map(|a| {
                if self.terminated[a as usize].is_empty() {
                    "-".to_string()
                } else if near.iter().any(|&(b, _)| b == a) {
                    "<2".to_string()
                } else {
                    ">=2".to_string()
                }
            })
            .collect();
        text.push_str(&format!(";TN={}", tn.join(",")));
        let k = self.task.k;
        let mut tt = Vec::new();
        for a in 0..=k {
            for b in a + 1..=k {
                if self.terminated[a as usize].is_empty() || self.terminated[b as usize].is_empty() {
                    tt.push("-".to_string());
                    continue;
                }
                let mut m = 3u8;
                let (xs, ws) = (self.terminated[a as usize].clone(), self.terminated[b as usize].clone());
                for &x in &xs {
                    for &w in &ws {
                        m = m.min(self.terminated_distance(x, w)?);
                    }
                }
                tt.push(if m >= 3 { ">=3".to_string() } else { m.to_string() });
            }
        }
        text.push_str(&format!(";TT={}", tt.join(",")));
        Ok(digest_hex(&text))
    }

    /// Serializable snapshot of the protocol map.
    pub fn snapshot(&self) -> DeltaSnapshot {
        let mut outputs: Vec<(String, Value)> = self
            .delta
            .map
            .explicit()
            .filter_map(|(v, d)| match d {
                Decision::Output(a) => Some((self.store.key(v).to_hex(), a)),
                Decision::Continue => None,
            })
            .collect();
        outputs.sort();
        let mut roots: Vec<VertexId> = self.delta.map.explicit().map(|(v, _)| v).collect();
        let finale = self.delta.finale.as_ref().map(|f| {
            roots.push(f.pivot_vertex);
            FinaleSnapshot {
                level: f.level,
                pivot: f.pivot,
                pivot_input: f.pivot_input,
                fixed_inputs: f.fixed_inputs.clone(),
                terminated: f
                    .terminated
                    .iter()
                    .map(|xs| {
                        let mut keys: Vec<String> = xs.iter().map(|&x| self.store.key(x).to_hex()).collect();
                        keys.sort();
                        keys
                    })
                    .collect(),
            }
        });
        DeltaSnapshot {
            n: self.task.n,
            k: self.task.k,
            level: self.t,
            continue_below: self.delta.map.continue_below(),
            outputs,
            finale,
            vertices: crate::codec::vertex_table(&self.store, &roots),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FinaleSnapshot {
    pub level: u32,
    pub pivot: ProcessId,
    pub pivot_input: Value,
    pub fixed_inputs: Vec<Option<Value>>,
    pub terminated: Vec<Vec<String>>,
}

/// The protocol map in a form that can be written to disk and rebuilt.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DeltaSnapshot {
    pub n: u8,
    pub k: u8,
    pub level: u32,
    pub continue_below: u32,
    pub outputs: Vec<(String, Value)>,
    pub finale: Option<FinaleSnapshot>,
    pub vertices: VertexTable,
}

impl DeltaSnapshot {
    pub fn task(&self) -> TaskSpec {
        TaskSpec { n: self.n, k: self.k }
    }

    /// Rebuilds the protocol map inside `store`.
    pub fn rebuild(&self, store: &mut VertexStore) -> Result<AdversaryDelta, CoreError> {
        let ids = crate::codec::decode_vertices(store, &self.vertices)?;
        let lookup = |k: &str| ids.get(k).copied().ok_or_else(|| CoreError::Decode(format!("missing vertex {k}")));
        let mut map = DeltaMap::new();
        map.set_continue_below(self.continue_below);
        for (k, a) in &self.outputs {
            map.set(lookup(k)?, Decision::Output(*a));
        }
        let finale = match &self.finale {
            None => None,
            Some(f) => {
                let mut terminated = Vec::new();
                for keys in &f.terminated {
                    terminated.push(keys.iter().map(|k| lookup(k)).collect::<Result<Vec<_>, _>>()?);
                }
                Some(Finale {
                    level: f.level,
                    pivot: f.pivot,
                    pivot_input: f.pivot_input,
                    pivot_vertex: store.base(f.pivot, f.pivot_input),
                    fixed_inputs: f.fixed_inputs.clone(),
                    terminated,
                    cache: RefCell::new(HashMap::new()),
                })
            }
        };
        Ok(AdversaryDelta { map, finale })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task() -> TaskSpec {
        TaskSpec::new(3, 2).unwrap()
    }

    #[test]
    fn fresh_state() {
        let mut adv = Adversary::new(task()).unwrap();
        assert_eq!(adv.level(), 1);
        assert!(adv.terminated.iter().all(|t| t.is_empty()));
        assert!(adv.inv_terminated_near_unseen().unwrap().is_empty());
        assert!(adv.inv_close_outputs().unwrap().is_empty());
        assert!(adv.inv_refusals().unwrap().is_empty());
        assert!(adv.inv_level_shape().is_empty());
        assert!(Adversary::new(TaskSpec { n: 3, k: 1 }).is_err());
    }

    #[test]
    fn first_query_is_an_update() {
        let mut adv = Adversary::new(task()).unwrap();
        let c = adv.initial_configurations()[5].clone();
        let out = adv.handle_step_query(&c, ProcessId(1)).unwrap();
        assert_eq!(out.branch, StepBranch::Update);
        assert!(matches!(out.config.state(ProcessId(1)), ProcessState::Updated(_)));
    }

    #[test]
    fn unknown_configuration_rejected() {
        let mut adv = Adversary::new(task()).unwrap();
        let mut other = VertexStore::new();
        let c = Configuration::initial(&mut other, &[0, 0, 0]);
        let mut forged = c.clone();
        forged.states[0] = ProcessState::Updated(c.states[0].vertex());
        assert!(adv.handle_step_query(&forged, ProcessId(1)).is_err());
    }

    #[test]
    fn solo_run_terminates_with_own_input() {
        let mut adv = Adversary::new(task()).unwrap();
        let c = adv.initial_configurations()[5].clone();
        let inputs = c.inputs(adv.store());
        let mut cur = c;
        for _ in 0..2 {
            cur = adv.handle_step_query(&cur, ProcessId(2)).unwrap().config;
        }
        assert_eq!(cur.state(ProcessId(2)).output(), Some(inputs[1]));
    }

    #[test]
    fn repeated_refusal_is_stable() {
        let mut adv = Adversary::new(task()).unwrap();
        let c = adv.initial_configurations()[0].clone();
        let first = adv.handle_output_query(&c, &[ProcessId(1)], 2).unwrap();
        assert!(first.schedule.is_none());
        let again = adv.handle_output_query(&c, &[ProcessId(1)], 2).unwrap();
        assert!(again.schedule.is_none());
        assert_eq!(again.case, OutputCase::Refused);
    }
}
