//! Operational semantics of the non-uniform iterated snapshot model.
//!
//! Process `q` accesses snapshot object `S_r` at most twice: it first writes
//! its level-(r-1) state into `S_r[q]` and then scans `S_r`. Snapshot contents
//! are never stored; they are derived from the process states.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::delta::{Decision, Delta};
use crate::error::CoreError;
use crate::vertex::{ProcessId, Value, VertexId, VertexStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub n: u8,
    pub k: u8,
}

impl TaskSpec {
    pub fn new(n: u8, k: u8) -> Result<Self, CoreError> {
        if k < 2 || n < 2 {
            return Err(CoreError::InvalidTask(format!("need n >= 2 and k >= 2, got n={n} k={k}")));
        }
        if n > 8 {
            return Err(CoreError::InvalidTask(format!("n={n} exceeds the supported maximum of 8")));
        }
        Ok(TaskSpec { n, k })
    }

    /// With `n <= k` every process may output its own input, so no
    /// execution can violate agreement.
    pub fn is_nontrivial(&self) -> bool {
        self.n > self.k
    }

    pub fn values(&self) -> impl Iterator<Item = Value> {
        0..=self.k
    }

    pub fn processes(&self) -> impl Iterator<Item = ProcessId> {
        (1..=self.n).map(ProcessId)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProcessState {
    /// Holds the base vertex `(id, input)`.
    Initial(VertexId),
    /// Wrote the held vertex to the next object and is poised to scan it.
    Updated(VertexId),
    /// Scanned with a continue decision; poised to update the next object.
    Scanned(VertexId),
    Terminated(VertexId, Value),
}

impl ProcessState {
    pub fn vertex(&self) -> VertexId {
        match *self {
            ProcessState::Initial(v)
            | ProcessState::Updated(v)
            | ProcessState::Scanned(v)
            | ProcessState::Terminated(v, _) => v,
        }
    }

    pub fn is_active(&self) -> bool {
        !matches!(self, ProcessState::Terminated(..))
    }

    pub fn output(&self) -> Option<Value> {
        match *self {
            ProcessState::Terminated(_, a) => Some(a),
            _ => None,
        }
    }

    pub fn is_poised_to_update(&self) -> bool {
        matches!(self, ProcessState::Initial(_) | ProcessState::Scanned(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Configuration {
    pub states: Vec<ProcessState>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schedule(pub Vec<ProcessId>);

impl Schedule {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn concat(&self, other: &Schedule) -> Schedule {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Schedule(v)
    }

    pub fn occurrences(&self, q: ProcessId) -> usize {
        self.0.iter().filter(|&&p| p == q).count()
    }

    pub fn processes(&self) -> BTreeSet<ProcessId> {
        self.0.iter().copied().collect()
    }
}

/// Process ids as digits, e.g. `1122`, matching the `@inputs:schedule`
/// reference syntax.
impl std::fmt::Display for Schedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for q in &self.0 {
            write!(f, "{}", q.0)?;
        }
        Ok(())
    }
}

impl Configuration {
    pub fn initial(store: &mut VertexStore, inputs: &[Value]) -> Self {
        let states = inputs
            .iter()
            .enumerate()
            .map(|(i, &x)| ProcessState::Initial(store.base(ProcessId::from_index(i), x)))
            .collect();
        Configuration { states }
    }

    pub fn n(&self) -> usize {
        self.states.len()
    }

    pub fn state(&self, q: ProcessId) -> &ProcessState {
        &self.states[q.index()]
    }

    pub fn active(&self) -> Vec<ProcessId> {
        (0..self.n()).filter(|&i| self.states[i].is_active()).map(ProcessId::from_index).collect()
    }

    pub fn is_final(&self) -> bool {
        self.states.iter().all(|s| !s.is_active())
    }

    pub fn inputs(&self, store: &VertexStore) -> Vec<Value> {
        self.states.iter().map(|s| store.input(s.vertex())).collect()
    }

    pub fn outputs(&self) -> Vec<Option<Value>> {
        self.states.iter().map(|s| s.output()).collect()
    }

    /// Number of snapshot objects the process has written so far.
    pub fn updates_done(&self, store: &VertexStore, q: ProcessId) -> u32 {
        let s = self.state(q);
        let l = store.level(s.vertex());
        match s {
            ProcessState::Updated(_) => l + 1,
            _ => l,
        }
    }

    /// Number of steps the process has taken since its initial state.
    pub fn steps_taken(&self, store: &VertexStore, q: ProcessId) -> u32 {
        let s = self.state(q);
        let l = store.level(s.vertex());
        match s {
            ProcessState::Updated(_) => 2 * l + 1,
            _ => 2 * l,
        }
    }

    /// Contents of `S_r` (1-based): entry `i` is process `i`'s level-(r-1)
    /// state if it has written `S_r`, otherwise absent.
    pub fn snapshot(&self, store: &VertexStore, r: u32) -> Vec<Option<VertexId>> {
        assert!(r >= 1);
        (0..self.n())
            .map(|i| {
                let q = ProcessId::from_index(i);
                if self.updates_done(store, q) >= r {
                    store.own_at_level(self.states[i].vertex(), r - 1)
                } else {
                    None
                }
            })
            .collect()
    }

    /// Highest object written by any process.
    pub fn max_object(&self, store: &VertexStore) -> u32 {
        (0..self.n()).map(|i| self.updates_done(store, ProcessId::from_index(i))).max().unwrap_or(0)
    }
}

pub fn initial_configurations(store: &mut VertexStore, task: &TaskSpec) -> Vec<Configuration> {
    let n = task.n as usize;
    let base = task.k as usize + 1;
    let total = base.pow(n as u32);
    (0..total)
        .map(|mut code| {
            let mut inputs = vec![0; n];
            for slot in inputs.iter_mut().rev() {
                *slot = (code % base) as Value;
                code /= base;
            }
            Configuration::initial(store, &inputs)
        })
        .collect()
}

pub fn apply_step<D: Delta + ?Sized>(
    store: &mut VertexStore,
    c: &Configuration,
    q: ProcessId,
    delta: &D,
) -> Result<Configuration, CoreError> {
    if q.0 == 0 || q.index() >= c.n() {
        return Err(CoreError::NotActive(q));
    }
    let next = match *c.state(q) {
        ProcessState::Terminated(..) => return Err(CoreError::NotActive(q)),
        ProcessState::Initial(v) | ProcessState::Scanned(v) => ProcessState::Updated(v),
        ProcessState::Updated(v) => {
            let r = store.level(v) + 1;
            let members: Vec<VertexId> = c.snapshot(store, r).into_iter().flatten().collect();
            let s = store.derived(q, &members)?;
            match delta.decide(store, s) {
                None => return Err(CoreError::UndefinedProtocol(store.key(s))),
                Some(Decision::Continue) => ProcessState::Scanned(s),
                Some(Decision::Output(a)) => ProcessState::Terminated(s, a),
            }
        }
    };
    let mut out = c.clone();
    out.states[q.index()] = next;
    Ok(out)
}

pub fn apply_schedule<D: Delta + ?Sized>(
    store: &mut VertexStore,
    c: &Configuration,
    alpha: &Schedule,
    delta: &D,
) -> Result<Configuration, CoreError> {
    let mut cur = c.clone();
    for (position, &q) in alpha.0.iter().enumerate() {
        cur = apply_step(store, &cur, q, delta)
            .map_err(|e| CoreError::AtPosition { position, source: Box::new(e) })?;
    }
    Ok(cur)
}

/// The object every active process is poised to update, or `None` when no
/// process is active.
pub fn round_object(store: &VertexStore, c: &Configuration) -> Result<Option<u32>, CoreError> {
    let mut obj = None;
    for s in c.states.iter().filter(|s| s.is_active()) {
        if !s.is_poised_to_update() {
            return Err(CoreError::MixedRounds);
        }
        let r = store.level(s.vertex()) + 1;
        match obj {
            None => obj = Some(r),
            Some(o) if o != r => return Err(CoreError::MixedRounds),
            _ => {}
        }
    }
    Ok(obj)
}

/// All distinct sequences with two occurrences of every active process,
/// in lexicographic order.
pub fn one_round_schedules(store: &VertexStore, c: &Configuration) -> Result<Vec<Schedule>, CoreError> {
    round_object(store, c)?;
    let mut counts: Vec<(ProcessId, u8)> = c.active().into_iter().map(|q| (q, 2)).collect();
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(counts: &mut Vec<(ProcessId, u8)>, cur: &mut Vec<ProcessId>, out: &mut Vec<Schedule>) {
        if counts.iter().all(|&(_, c)| c == 0) {
            out.push(Schedule(cur.clone()));
            return;
        }
        for i in 0..counts.len() {
            if counts[i].1 > 0 {
                counts[i].1 -= 1;
                cur.push(counts[i].0);
                rec(counts, cur, out);
                cur.pop();
                counts[i].1 += 1;
            }
        }
    }
    rec(&mut counts, &mut cur, &mut out);
    Ok(out)
}

/// Builds an `r`-round schedule from `c` whose result is indistinguishable
/// from `c·alpha` to every process in `procs`: keep the first `2r`
/// occurrences of each process, then replay them round by round, padding
/// each round so every active process occurs exactly twice.
pub fn truncate_and_pad<D: Delta + ?Sized>(
    store: &mut VertexStore,
    c: &Configuration,
    alpha: &Schedule,
    r: u32,
    procs: &BTreeSet<ProcessId>,
    delta: &D,
) -> Result<Schedule, CoreError> {
    let pre = |msg: String| CoreError::PreconditionViolated(msg);
    let t = match round_object(store, c) {
        Ok(Some(t)) => t,
        Ok(None) => return Ok(Schedule::default()),
        Err(_) => return Err(pre("configuration is not round-aligned".into())),
    };
    let reached = apply_schedule(store, c, alpha, delta).map_err(|e| pre(e.to_string()))?;
    for &p in procs {
        let s = reached.state(p);
        let l = store.level(s.vertex());
        let ok = match s {
            ProcessState::Terminated(..) => l < t + r,
            ProcessState::Initial(_) | ProcessState::Scanned(_) => l + 1 == t + r,
            ProcessState::Updated(_) => false,
        };
        if !ok {
            return Err(pre(format!("{p} is not poised at object {} in the extended configuration", t + r)));
        }
    }

    let mut seen = vec![0u32; c.n()];
    let mut tagged = Vec::new();
    for &q in &alpha.0 {
        seen[q.index()] += 1;
        if seen[q.index()] <= 2 * r {
            tagged.push((q, seen[q.index()]));
        }
    }

    let mut beta = Vec::new();
    let mut cur = c.clone();
    for j in 1..=r {
        let active = cur.active();
        let mut round: Vec<ProcessId> = tagged
            .iter()
            .filter(|&&(_, occ)| occ == 2 * j - 1 || occ == 2 * j)
            .map(|&(q, _)| q)
            .collect();
        for &q in &round {
            if !active.contains(&q) {
                return Err(pre(format!("{q} is inactive at round {j} of the padded schedule")));
            }
        }
        for &q in &active {
            let have = round.iter().filter(|&&p| p == q).count();
            for _ in have..2 {
                round.push(q);
            }
        }
        let round = Schedule(round);
        cur = apply_schedule(store, &cur, &round, delta)?;
        beta.extend(round.0);
    }
    Ok(Schedule(beta))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "camelCase")]
pub enum Verdict {
    Ok,
    ViolatesValidity { process: ProcessId, output: Value },
    ViolatesAgreement { outputs: Vec<Value> },
}

impl Verdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, Verdict::Ok)
    }
}

pub fn check_task(store: &VertexStore, c: &Configuration, task: &TaskSpec) -> Verdict {
    let inputs: BTreeSet<Value> = c.inputs(store).into_iter().collect();
    let mut outputs = BTreeSet::new();
    for (i, s) in c.states.iter().enumerate() {
        if let Some(y) = s.output() {
            if !inputs.contains(&y) {
                return Verdict::ViolatesValidity { process: ProcessId::from_index(i), output: y };
            }
            outputs.insert(y);
        }
    }
    if outputs.len() > task.k as usize {
        return Verdict::ViolatesAgreement { outputs: outputs.into_iter().collect() };
    }
    Verdict::Ok
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delta::DeltaMap;

    fn p(i: u8) -> ProcessId {
        ProcessId(i)
    }

    #[test]
    fn task_bounds() {
        assert!(TaskSpec::new(3, 2).is_ok());
        assert!(TaskSpec::new(2, 2).is_ok_and(|t| !t.is_nontrivial()));
        assert!(TaskSpec::new(3, 1).is_err());
        assert!(TaskSpec::new(1, 2).is_err());
    }

    #[test]
    fn update_then_solo_scan() {
        let mut s = VertexStore::new();
        let d = DeltaMap::continue_everywhere();
        let c = Configuration::initial(&mut s, &[0, 1]);
        let c1 = apply_step(&mut s, &c, p(1), &d).unwrap();
        let b1 = s.base(p(1), 0);
        assert_eq!(c1.state(p(1)), &ProcessState::Updated(b1));
        assert_eq!(c1.snapshot(&s, 1), vec![Some(b1), None]);
        let c2 = apply_step(&mut s, &c1, p(1), &d).unwrap();
        let v = s.derived(p(1), &[b1]).unwrap();
        assert_eq!(c2.state(p(1)), &ProcessState::Scanned(v));
    }

    #[test]
    fn scan_output_terminates() {
        let mut s = VertexStore::new();
        let d = DeltaMap::with_default(Some(Decision::Output(0)));
        let c = Configuration::initial(&mut s, &[0, 1]);
        let c = apply_schedule(&mut s, &c, &Schedule(vec![p(1), p(1)]), &d).unwrap();
        assert_eq!(c.state(p(1)).output(), Some(0));
        assert_eq!(apply_step(&mut s, &c, p(1), &d), Err(CoreError::NotActive(p(1))));
    }

    #[test]
    fn undefined_protocol_is_an_error() {
        let mut s = VertexStore::new();
        let d = DeltaMap::new();
        let c = Configuration::initial(&mut s, &[0, 1]);
        let err = apply_schedule(&mut s, &c, &Schedule(vec![p(1), p(1)]), &d).unwrap_err();
        assert!(matches!(err, CoreError::AtPosition { position: 1, .. }));
    }

    #[test]
    fn sequential_and_interleaved_rounds() {
        let mut s = VertexStore::new();
        let d = DeltaMap::continue_everywhere();
        let c = Configuration::initial(&mut s, &[0, 1]);
        let b1 = s.base(p(1), 0);
        let b2 = s.base(p(2), 1);
        let solo = s.derived(p(1), &[b1]).unwrap();
        let both1 = s.derived(p(1), &[b1, b2]).unwrap();
        let both2 = s.derived(p(2), &[b1, b2]).unwrap();

        let seq = apply_schedule(&mut s, &c, &Schedule(vec![p(1), p(1), p(2), p(2)]), &d).unwrap();
        assert_eq!(seq.states, vec![ProcessState::Scanned(solo), ProcessState::Scanned(both2)]);
        let mix = apply_schedule(&mut s, &c, &Schedule(vec![p(1), p(2), p(1), p(2)]), &d).unwrap();
        assert_eq!(mix.states, vec![ProcessState::Scanned(both1), ProcessState::Scanned(both2)]);
    }

    #[test]
    fn round_schedule_counts() {
        let mut s = VertexStore::new();
        let d = DeltaMap::with_default(Some(Decision::Output(0)));
        let c = Configuration::initial(&mut s, &[0, 1]);
        assert_eq!(one_round_schedules(&s, &c).unwrap().len(), 6);
        let c3 = Configuration::initial(&mut s, &[0, 1, 2]);
        assert_eq!(one_round_schedules(&s, &c3).unwrap().len(), 90);

        let done = apply_schedule(&mut s, &c, &Schedule(vec![p(1), p(1), p(2), p(2)]), &d).unwrap();
        assert_eq!(one_round_schedules(&s, &done).unwrap(), vec![Schedule::default()]);

        let mid = apply_step(&mut s, &c, p(1), &d).unwrap();
        assert_eq!(one_round_schedules(&s, &mid), Err(CoreError::MixedRounds));
    }

    #[test]
    fn single_active_process_has_one_round_schedule() {
        let mut s = VertexStore::new();
        let d = DeltaMap::with_default(Some(Decision::Output(0)));
        let c = Configuration::initial(&mut s, &[0, 1, 2]);
        let c = apply_schedule(&mut s, &c, &Schedule(vec![p(1), p(1), p(2), p(2)]), &d).unwrap();
        assert_eq!(one_round_schedules(&s, &c).unwrap(), vec![Schedule(vec![p(3), p(3)])]);
    }

    #[test]
    fn verdicts() {
        let mut s = VertexStore::new();
        let task = TaskSpec::new(3, 2).unwrap();
        let c = Configuration::initial(&mut s, &[0, 1, 2]);
        assert_eq!(check_task(&s, &c, &task), Verdict::Ok);
        let mut all = c.clone();
        for (i, st) in all.states.iter_mut().enumerate() {
            *st = ProcessState::Terminated(st.vertex(), i as Value);
        }
        assert_eq!(check_task(&s, &all, &task), Verdict::ViolatesAgreement { outputs: vec![0, 1, 2] });
        let mut bad = c.clone();
        bad.states[0] = ProcessState::Terminated(bad.states[0].vertex(), 5);
        assert!(matches!(check_task(&s, &bad, &task), Verdict::ViolatesValidity { output: 5, .. }));
    }

    #[test]
    fn truncate_keeps_solo_view() {
        let mut s = VertexStore::new();
        let d = DeltaMap::continue_everywhere();
        let c = Configuration::initial(&mut s, &[0, 1]);
        let alpha = Schedule(vec![p(1), p(1), p(1), p(1)]);
        let procs: BTreeSet<_> = [p(1)].into();
        let beta = truncate_and_pad(&mut s, &c, &alpha, 1, &procs, &d);
        // p1 is poised at S_3 after alpha, not S_2.
        assert!(beta.is_err());
        let alpha = Schedule(vec![p(1), p(1)]);
        let beta = truncate_and_pad(&mut s, &c, &alpha, 1, &procs, &d).unwrap();
        assert_eq!(beta, Schedule(vec![p(1), p(1), p(2), p(2)]));
        let a = apply_schedule(&mut s, &c, &alpha, &d).unwrap();
        let b = apply_schedule(&mut s, &c, &beta, &d).unwrap();
        assert_eq!(a.state(p(1)), b.state(p(1)));
    }
}
