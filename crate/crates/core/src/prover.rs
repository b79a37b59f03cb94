//! Automated provers and the loop that runs one against a session.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use crate::harness::{Action, Outcome, Session, Status};
use crate::nis::{Configuration, Schedule};
use crate::vertex::{ProcessId, Value};

pub trait Strategy {
    fn name(&self) -> &'static str;
    /// `None` ends the run.
    fn next_action(&mut self, s: &Session) -> Option<Action>;
    fn observe(&mut self, _action: &Action, _outcome: &Outcome, _s: &Session) {}
    fn stats(&self) -> Json {
        Json::Null
    }
}

fn active_configs(s: &Session) -> Vec<Configuration> {
    s.queryable().into_iter().map(|(c, _)| c).filter(|c| !c.is_final()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RandomWeights {
    pub step: u32,
    pub output: u32,
    pub commit: u32,
    /// Commit as soon as the adversary's level exceeds this; output queries
    /// on three or more processes cost about 19 times more per level.
    pub commit_above_level: u32,
}

impl Default for RandomWeights {
    fn default() -> Self {
        RandomWeights { step: 90, output: 8, commit: 2, commit_above_level: 4 }
    }
}

/// Picks legal actions at random: a uniformly chosen queryable
/// configuration, then a process, process set, value or reached extension.
pub struct RandomProver {
    rng: ChaCha8Rng,
    weights: RandomWeights,
}

impl RandomProver {
    pub fn new(seed: u64, weights: RandomWeights) -> Self {
        RandomProver { rng: ChaCha8Rng::seed_from_u64(seed), weights }
    }
}

impl Strategy for RandomProver {
    fn name(&self) -> &'static str {
        "random"
    }

    fn next_action(&mut self, s: &Session) -> Option<Action> {
        let pool = active_configs(s);
        let c = pool.choose(&mut self.rng)?.clone();
        let w = self.weights;
        let roll = self.rng.gen_range(0..(w.step + w.output + w.commit).max(1));
        let forced = s.phase() == 1 && s.protocol().level() > w.commit_above_level;
        if (forced || roll >= w.step + w.output) && !s.reached().is_empty() {
            let r = s.reached().choose(&mut self.rng).expect("nonempty");
            let base = &s.committed()[r.base].1;
            return Some(Action::Commit { config: s.key_of(base), schedule: r.beta.clone() });
        }
        let active = c.active();
        if roll >= w.step {
            let mut procs: Vec<ProcessId> = active.iter().copied().filter(|_| self.rng.gen_bool(0.5)).collect();
            if procs.is_empty() {
                procs.push(*active.choose(&mut self.rng).expect("active"));
            }
            let value = self.rng.gen_range(0..=s.task().k);
            return Some(Action::Output { config: s.key_of(&c), processes: procs, value });
        }
        let q = *active.choose(&mut self.rng).expect("active");
        Some(Action::Step { config: s.key_of(&c), process: q })
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ChainStats {
    pub chains: u64,
    pub terminated: u64,
    pub max_chain: u64,
    pub exhausted: u64,
}

/// Repeatedly opens a chain at an initial configuration and extends it one
/// step query at a time, on the configuration the previous answer
/// returned, until some process terminates.
pub struct ChainProver {
    rng: ChaCha8Rng,
    max_chain: u64,
    current: Option<(String, usize)>,
    length: u64,
    stats: ChainStats,
}

impl ChainProver {
    pub fn new(seed: u64, max_chain: u64) -> Self {
        ChainProver { rng: ChaCha8Rng::seed_from_u64(seed), max_chain, current: None, length: 0, stats: ChainStats::default() }
    }

    pub fn chain_stats(&self) -> &ChainStats {
        &self.stats
    }
}

fn terminated_count(c: &Configuration) -> usize {
    c.states.iter().filter(|st| !st.is_active()).count()
}

impl Strategy for ChainProver {
    fn name(&self) -> &'static str {
        "chain"
    }

    fn next_action(&mut self, s: &Session) -> Option<Action> {
        if self.current.is_none() {
            let starts: Vec<&Configuration> = s.committed().iter().map(|(_, c)| c).filter(|c| !c.is_final()).collect();
            let c = *starts.choose(&mut self.rng)?;
            self.current = Some((s.key_of(c), terminated_count(c)));
            self.length = 0;
            self.stats.chains += 1;
        }
        let (key, _) = self.current.as_ref().expect("set above");
        let c = s.resolve(key).ok()?;
        let q = *c.active().choose(&mut self.rng)?;
        Some(Action::Step { config: key.clone(), process: q })
    }

    fn observe(&mut self, _: &Action, outcome: &Outcome, s: &Session) {
        let Outcome::Stepped { key } = outcome else { return };
        let Some((_, done)) = self.current.take() else { return };
        self.length += 1;
        self.stats.max_chain = self.stats.max_chain.max(self.length);
        let Ok(next) = s.resolve(key) else { return };
        if terminated_count(&next) > done {
            self.stats.terminated += 1;
        } else if self.length >= self.max_chain {
            self.stats.exhausted += 1;
        } else {
            self.current = Some((key.clone(), done));
        }
    }

    fn stats(&self) -> Json {
        serde_json::to_value(&self.stats).expect("stats serialize")
    }
}

/// Asks which values each configuration can still lead to, and moves to a
/// successor that keeps the most values possible. Walks a returned
/// schedule when every successor has narrowed down.
pub struct ValencyProver {
    rng: ChaCha8Rng,
    pending: VecDeque<Action>,
    current: Option<String>,
    asked: HashSet<(String, Value)>,
    possible: HashMap<String, BTreeSet<Value>>,
    witness: HashMap<(String, Value), Schedule>,
    successors: HashMap<String, Vec<String>>,
    walk: Option<VecDeque<ProcessId>>,
    moves: u64,
    walks: u64,
}

impl ValencyProver {
    pub fn new(seed: u64) -> Self {
        ValencyProver {
            rng: ChaCha8Rng::seed_from_u64(seed),
            pending: VecDeque::new(),
            current: None,
            asked: HashSet::new(),
            possible: HashMap::new(),
            witness: HashMap::new(),
            successors: HashMap::new(),
            walk: None,
            moves: 0,
            walks: 0,
        }
    }

    fn score(&self, s: &Session, key: &str) -> usize {
        let Ok(c) = s.resolve(key) else { return 0 };
        let mut vals: BTreeSet<Value> = c.outputs().into_iter().flatten().collect();
        vals.extend(self.possible.get(key).into_iter().flatten());
        vals.len()
    }

    fn probe(&mut self, s: &Session, key: &str) -> bool {
        let Ok(c) = s.resolve(key) else { return false };
        if c.is_final() {
            return false;
        }
        let mut queued = false;
        for y in s.task().values() {
            if self.asked.insert((key.to_string(), y)) {
                self.pending.push_back(Action::Output { config: key.to_string(), processes: c.active(), value: y });
                queued = true;
            }
        }
        queued
    }

    fn start(&mut self, s: &Session) -> Option<String> {
        let distinct = |c: &Configuration| c.inputs(s.store()).into_iter().collect::<BTreeSet<_>>().len();
        let starts: Vec<&Configuration> = s.committed().iter().map(|(_, c)| c).filter(|c| !c.is_final()).collect();
        let best = starts.iter().map(|c| distinct(c)).max()?;
        let top: Vec<&Configuration> = starts.into_iter().filter(|c| distinct(c) == best).collect();
        Some(s.key_of(top.choose(&mut self.rng)?))
    }
}

impl Strategy for ValencyProver {
    fn name(&self) -> &'static str {
        "valency"
    }

    fn next_action(&mut self, s: &Session) -> Option<Action> {
        for _ in 0..32 {
            if let Some(a) = self.pending.pop_front() {
                return Some(a);
            }
            let key = match &self.current {
                Some(k) if s.resolve(k).is_ok_and(|c| !c.is_final()) => k.clone(),
                _ => {
                    let k = self.start(s)?;
                    self.current = Some(k.clone());
                    k
                }
            };
            if self.probe(s, &key) {
                continue;
            }
            let c = s.resolve(&key).ok()?;
            let Some(succ) = self.successors.get(&key).cloned() else {
                for q in c.active() {
                    self.pending.push_back(Action::Step { config: key.clone(), process: q });
                }
                self.successors.insert(key, Vec::new());
                continue;
            };
            let mut queued = false;
            for k in &succ {
                queued |= self.probe(s, k);
            }
            if queued {
                continue;
            }
            let here = self.score(s, &key);
            let best = succ.iter().max_by_key(|k| self.score(s, k)).cloned();
            self.moves += 1;
            if let Some(b) = best.as_ref().filter(|b| self.score(s, b) >= here) {
                self.current = Some(b.clone());
                continue;
            }
            let outputs: BTreeSet<Value> = c.outputs().into_iter().flatten().collect();
            let sched = self
                .possible
                .get(&key)
                .into_iter()
                .flatten()
                .find(|y| !outputs.contains(y))
                .and_then(|&y| self.witness.get(&(key.clone(), y)).cloned());
            match sched {
                Some(sched) if !sched.is_empty() => {
                    let mut steps: VecDeque<ProcessId> = sched.0.into_iter().collect();
                    let first = steps.pop_front().expect("nonempty");
                    self.walks += 1;
                    self.walk = Some(steps);
                    self.current = None;
                    return Some(Action::Step { config: key, process: first });
                }
                _ => self.current = best,
            }
        }
        self.pending.pop_front()
    }

    fn observe(&mut self, action: &Action, outcome: &Outcome, _: &Session) {
        match (action, outcome) {
            (Action::Output { config, value, .. }, Outcome::Answered { schedule }) => {
                let entry = self.possible.entry(config.clone()).or_default();
                if let Some(sched) = schedule {
                    entry.insert(*value);
                    self.witness.insert((config.clone(), *value), sched.clone());
                }
            }
            (Action::Step { config, .. }, Outcome::Stepped { key }) => {
                if let Some(walk) = self.walk.as_mut() {
                    match walk.pop_front() {
                        Some(q) => self.pending.push_front(Action::Step { config: key.clone(), process: q }),
                        None => {
                            self.walk = None;
                            self.current = Some(key.clone());
                        }
                    }
                } else if let Some(list) = self.successors.get_mut(config) {
                    if !list.contains(key) {
                        list.push(key.clone());
                    }
                }
            }
            _ => {}
        }
    }

    fn stats(&self) -> Json {
        json!({ "moves": self.moves, "walks": self.walks, "probed": self.possible.len() })
    }
}

/// Step-queries every configuration reachable within `depth` steps of the
/// committed set, then commits to the first schedule of full depth.
pub struct ExhaustiveProver {
    depth: usize,
    level: usize,
    phase: u32,
    frontier: Vec<String>,
    next: Vec<String>,
    pending: VecDeque<Action>,
}

impl ExhaustiveProver {
    pub fn new(depth: usize) -> Self {
        ExhaustiveProver { depth, level: 0, phase: 0, frontier: Vec::new(), next: Vec::new(), pending: VecDeque::new() }
    }

    fn fill(&mut self, s: &Session) {
        for key in std::mem::take(&mut self.frontier) {
            if let Ok(c) = s.resolve(&key) {
                for q in c.active() {
                    self.pending.push_back(Action::Step { config: key.clone(), process: q });
                }
            }
        }
    }
}

impl Strategy for ExhaustiveProver {
    fn name(&self) -> &'static str {
        "exhaustive"
    }

    fn next_action(&mut self, s: &Session) -> Option<Action> {
        if self.phase != s.phase() {
            self.phase = s.phase();
            self.level = 0;
            self.pending.clear();
            self.next.clear();
            self.frontier = s.committed().iter().map(|(_, c)| s.key_of(c)).collect();
            self.fill(s);
        }
        loop {
            if let Some(a) = self.pending.pop_front() {
                return Some(a);
            }
            self.level += 1;
            if self.level < self.depth && !self.next.is_empty() {
                self.frontier = std::mem::take(&mut self.next);
                self.fill(s);
                continue;
            }
            let deepest = s.reached().iter().map(|r| r.beta.len()).max()?;
            let r = s.reached().iter().find(|r| r.beta.len() == deepest)?;
            let base = &s.committed()[r.base].1;
            return Some(Action::Commit { config: s.key_of(base), schedule: r.beta.clone() });
        }
    }

    fn observe(&mut self, _: &Action, outcome: &Outcome, _: &Session) {
        if let Outcome::Stepped { key } = outcome {
            if !self.next.contains(key) {
                self.next.push(key.clone());
            }
        }
    }
}

/// Replays a fixed list of actions.
pub struct ScriptedProver {
    actions: VecDeque<Action>,
}

impl ScriptedProver {
    pub fn new(actions: Vec<Action>) -> Self {
        ScriptedProver { actions: actions.into() }
    }

    /// One action per non-empty line.
    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let mut actions = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            actions.push(serde_json::from_str(line)?);
        }
        Ok(Self::new(actions))
    }

    /// The prover actions recorded in a transcript.
    pub fn from_transcript(records: &[crate::harness::TranscriptRecord]) -> Self {
        let mut actions = Vec::new();
        for r in records {
            let key = r.request["configKey"].as_str().unwrap_or_default().to_string();
            let a = match r.kind.as_str() {
                "step" => serde_json::from_value(r.request["process"].clone())
                    .ok()
                    .map(|process| Action::Step { config: key, process }),
                "output" => {
                    let processes = serde_json::from_value(r.request["processes"].clone()).unwrap_or_default();
                    r.request["value"].as_u64().map(|v| Action::Output { config: key, processes, value: v as Value })
                }
                "commit" => serde_json::from_value(r.request["schedule"].clone())
                    .ok()
                    .map(|schedule| Action::Commit { config: key, schedule }),
                _ => None,
            };
            actions.extend(a);
        }
        Self::new(actions)
    }
}

impl Strategy for ScriptedProver {
    fn name(&self) -> &'static str {
        "scripted"
    }

    fn next_action(&mut self, _: &Session) -> Option<Action> {
        self.actions.pop_front()
    }
}

/// Runs the active processes of the first unfinished committed
/// configuration round-robin until it is final, then commits to that
/// schedule.
#[derive(Default)]
pub struct Finisher {
    walk: Option<(String, u32, String, Schedule)>,
}

impl Finisher {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Strategy for Finisher {
    fn name(&self) -> &'static str {
        "finisher"
    }

    fn next_action(&mut self, s: &Session) -> Option<Action> {
        if self.walk.as_ref().is_some_and(|(_, phase, cur, _)| *phase != s.phase() || s.resolve(cur).is_err()) {
            self.walk = None;
        }
        if self.walk.is_none() {
            let (_, c) = s.committed().iter().find(|(_, c)| !c.is_final())?;
            let key = s.key_of(c);
            self.walk = Some((key.clone(), s.phase(), key, Schedule::default()));
        }
        let (start, _, cur, sched) = self.walk.as_ref().expect("set above");
        let c = s.resolve(cur).ok()?;
        if c.is_final() {
            return Some(Action::Commit { config: start.clone(), schedule: sched.clone() });
        }
        let last = sched.0.last().map(|p| p.index() + 1).unwrap_or(0);
        let active = c.active();
        let q = active.iter().copied().find(|p| p.index() >= last % c.n()).unwrap_or(active[0]);
        Some(Action::Step { config: cur.clone(), process: q })
    }

    fn observe(&mut self, action: &Action, outcome: &Outcome, _: &Session) {
        if let (Action::Step { process, .. }, Outcome::Stepped { key }, Some(walk)) = (action, outcome, self.walk.as_mut()) {
            walk.2 = key.clone();
            walk.3 .0.push(*process);
        }
    }
}

/// Runs each strategy until it has nothing more to do.
pub struct Sequence {
    parts: Vec<Box<dyn Strategy>>,
    at: usize,
}

impl Sequence {
    pub fn new(parts: Vec<Box<dyn Strategy>>) -> Self {
        Sequence { parts, at: 0 }
    }
}

impl Strategy for Sequence {
    fn name(&self) -> &'static str {
        "sequence"
    }

    fn next_action(&mut self, s: &Session) -> Option<Action> {
        while self.at < self.parts.len() {
            if let Some(a) = self.parts[self.at].next_action(s) {
                return Some(a);
            }
            self.at += 1;
        }
        None
    }

    fn observe(&mut self, action: &Action, outcome: &Outcome, s: &Session) {
        if let Some(p) = self.parts.get_mut(self.at) {
            p.observe(action, outcome, s);
        }
    }

    fn stats(&self) -> Json {
        Json::Array(self.parts.iter().map(|p| json!({ "strategy": p.name(), "stats": p.stats() })).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Budgets {
    pub max_queries: u64,
    pub max_phases: u32,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets { max_queries: 1000, max_phases: 16 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunReport {
    pub strategy: String,
    pub n: u8,
    pub k: u8,
    #[serde(flatten)]
    pub status: Status,
    pub queries: u64,
    pub phases: u32,
    pub final_level: u32,
    /// Why the loop stopped: "decided", "budget", "cap", "strategy" or
    /// "error".
    pub stop: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Queries rejected for exceeding the exploration cap.
    #[serde(default)]
    pub capped: u32,
    pub invariant_failures: Vec<String>,
    pub digests: Vec<String>,
    pub strategy_stats: Json,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<u64>,
}

impl RunReport {
    pub fn prover_won(&self) -> bool {
        matches!(self.status, Status::ProverWins { .. })
    }

    pub fn internal_failure(&self) -> bool {
        !self.invariant_failures.is_empty()
    }
}

/// Hook called after every answered action; returns a failure description
/// to stop the run.
pub type Audit<'a> = dyn FnMut(&mut Session) -> Option<String> + 'a;

const MAX_CAPPED_IN_A_ROW: u32 = 8;

pub fn run_strategy(session: &mut Session, strategy: &mut dyn Strategy, budgets: &Budgets, audit: &mut Audit<'_>) -> RunReport {
    let mut stop = "strategy";
    let mut error = None;
    let mut failures = Vec::new();
    let mut capped = 0;
    let mut capped_in_a_row = 0;
    while session.is_running() {
        if session.queries() >= budgets.max_queries || session.phase() > budgets.max_phases {
            stop = "budget";
            break;
        }
        let Some(action) = strategy.next_action(session) else { break };
        if action == Action::Concede {
            break;
        }
        match session.execute(&action) {
            Ok(outcome) => {
                capped_in_a_row = 0;
                strategy.observe(&action, &outcome, session)
            }
            // A query over the exploration cap leaves the adversary as it
            // was; the prover may try something else.
            Err(e) if e.is_cap() && capped_in_a_row < MAX_CAPPED_IN_A_ROW => {
                capped += 1;
                capped_in_a_row += 1;
            }
            Err(e) => {
                if e.is_internal() {
                    failures.push(e.to_string());
                }
                error = Some(e.to_string());
                stop = if e.is_cap() { "cap" } else { "error" };
                break;
            }
        }
        if let Some(f) = audit(session) {
            failures.push(f);
            stop = "error";
            break;
        }
    }
    if !session.is_running() && error.is_none() && failures.is_empty() {
        stop = "decided";
    }
    let task = session.task();
    RunReport {
        strategy: strategy.name().to_string(),
        n: task.n,
        k: task.k,
        status: session.status().clone(),
        queries: session.queries(),
        phases: session.phase(),
        final_level: session.protocol().level(),
        stop: stop.to_string(),
        error,
        capped,
        invariant_failures: failures,
        digests: session.transcript().iter().map(|r| r.invariant_digest.clone()).collect(),
        strategy_stats: strategy.stats(),
        wall_time_ms: None,
    }
}

/// Shortcut used by callers that do not audit.
pub fn no_audit(_: &mut Session) -> Option<String> {
    None
}
