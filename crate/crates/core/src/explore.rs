//! Breadth-first search over configurations reachable by schedules of a
//! fixed set of processes.
//!
//! Accesses to different snapshot objects commute, so every reachable
//! configuration is reached by a schedule in which all accesses to lower
//! objects come before accesses to higher ones. The search only generates
//! such schedules, tracking the highest object touched so far.

use indexmap::IndexSet;

use crate::delta::{Decision, Delta};
use crate::error::CoreError;
use crate::nis::{Configuration, ProcessState, Schedule};
use crate::vertex::{ProcessId, VertexId, VertexStore};

#[derive(Clone, Copy, Debug)]
pub struct Limits {
    /// Highest snapshot object a step may touch.
    pub max_object: Option<u32>,
    /// Scan results at this level with no decision yet are treated as
    /// continuing states (they can go no further when `max_object` equals
    /// this level).
    pub open_level: Option<u32>,
    pub max_nodes: usize,
}

impl Limits {
    pub fn unbounded(max_nodes: usize) -> Self {
        Limits { max_object: None, open_level: None, max_nodes }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

#[derive(Clone, Debug)]
pub struct Exploration {
    parents: Vec<(usize, ProcessId)>,
    pub stopped_at: Option<usize>,
    /// Some transition was cut because the protocol is undefined there.
    pub horizon_hit: bool,
}

impl Exploration {
    pub fn visited(&self) -> usize {
        self.parents.len()
    }

    pub fn schedule(&self, mut node: usize) -> Schedule {
        let mut out = Vec::new();
        while node != 0 {
            let (parent, q) = self.parents[node];
            out.push(q);
            node = parent;
        }
        out.reverse();
        Schedule(out)
    }
}

/// Object accessed by the next step of an active process.
pub fn next_object(store: &VertexStore, s: &ProcessState) -> Option<u32> {
    match *s {
        ProcessState::Terminated(..) => None,
        ProcessState::Initial(v) | ProcessState::Scanned(v) | ProcessState::Updated(v) => Some(store.level(v) + 1),
    }
}

/// Calls `visit` on every reachable configuration in breadth-first order,
/// including `start` itself as node 0.
pub fn explore<D: Delta + ?Sized>(
    store: &mut VertexStore,
    delta: &D,
    start: &Configuration,
    procs: &[ProcessId],
    limits: &Limits,
    mut visit: impl FnMut(&VertexStore, &Configuration, usize) -> Flow,
) -> Result<Exploration, CoreError> {
    let mut result = Exploration { parents: vec![(0, ProcessId(0))], stopped_at: None, horizon_hit: false };
    // Insertion order is breadth-first order, so the set doubles as the queue.
    let mut nodes: IndexSet<(Configuration, u32)> = IndexSet::new();
    nodes.insert((start.clone(), 0));
    if visit(store, start, 0) == Flow::Stop {
        result.stopped_at = Some(0);
        return Ok(result);
    }
    let mut head = 0;
    while head < nodes.len() {
        let (c, floor) = nodes.get_index(head).expect("in range").clone();
        let node = head;
        head += 1;
        for &q in procs {
            let s = *c.state(q);
            let Some(obj) = next_object(store, &s) else { continue };
            if obj < floor || limits.max_object.is_some_and(|m| obj > m) {
                continue;
            }
            let next = match s {
                ProcessState::Terminated(..) => continue,
                ProcessState::Initial(v) | ProcessState::Scanned(v) => ProcessState::Updated(v),
                ProcessState::Updated(_) => {
                    let members: Vec<_> = c.snapshot(store, obj).into_iter().flatten().collect();
                    let sv = store.derived(q, &members)?;
                    match delta.decide(store, sv) {
                        Some(Decision::Continue) => ProcessState::Scanned(sv),
                        Some(Decision::Output(a)) => ProcessState::Terminated(sv, a),
                        None if limits.open_level == Some(store.level(sv)) => ProcessState::Scanned(sv),
                        None => {
                            result.horizon_hit = true;
                            continue;
                        }
                    }
                }
            };
            let mut nc = c.clone();
            nc.states[q.index()] = next;
            if nodes.len() >= limits.max_nodes && !nodes.contains(&(nc.clone(), obj)) {
                return Err(CoreError::CapExceeded(format!("exploration exceeded {} configurations", limits.max_nodes)));
            }
            let (id, fresh) = nodes.insert_full((nc, obj));
            if !fresh {
                continue;
            }
            result.parents.push((node, q));
            let flow = visit(store, &nodes.get_index(id).expect("just inserted").0, id);
            if flow == Flow::Stop {
                result.stopped_at = Some(id);
                return Ok(result);
            }
        }
    }
    Ok(result)
}

/// First breadth-first schedule of `procs` from `start` after which some
/// process of `procs` has terminated with `y`.
pub fn search_output<D: Delta + ?Sized>(
    store: &mut VertexStore,
    delta: &D,
    start: &Configuration,
    procs: &[ProcessId],
    y: crate::vertex::Value,
    limits: &Limits,
) -> Result<(Option<Schedule>, Exploration), CoreError> {
    let ex = explore(store, delta, start, procs, limits, |_, c, _| {
        if procs.iter().any(|&q| c.state(q).output() == Some(y)) {
            Flow::Stop
        } else {
            Flow::Continue
        }
    })?;
    Ok((ex.stopped_at.map(|n| ex.schedule(n)), ex))
}

/// Vertices realized by `procs` from `start`, enumerated a round at a time.
///
/// Objects already touched in `start` are handled by [`explore`]; above them
/// every round is a nested assignment of scan sets over the processes still
/// running. A process that stops taking steps is indistinguishable, to the
/// others, from one that always goes last, so only full-participation
/// rounds are generated.
///
/// `visit` receives each realized vertex (scanned at `limits.max_object`,
/// or terminated) with a schedule from `start` reaching it. Vertices may be
/// reported more than once.
pub fn reach<D: Delta + ?Sized>(
    store: &mut VertexStore,
    delta: &D,
    start: &Configuration,
    procs: &[ProcessId],
    limits: &Limits,
    mut visit: impl FnMut(&VertexStore, VertexId, &[ProcessId]) -> Flow,
) -> Result<Reach, CoreError> {
    let touched = start.max_object(store);
    let top = limits.max_object;
    let mut out = Reach { nodes: 0, horizon_hit: false, stopped: false };
    let mut seeds: Vec<(Vec<VertexId>, usize)> = Vec::new();
    let mut seed_keys = std::collections::HashSet::new();
    let mut found: Vec<(VertexId, usize)> = Vec::new();
    let first = Limits { max_object: Some(top.map_or(touched, |m| m.min(touched))), ..*limits };
    let ex = explore(store, delta, start, procs, &first, |store, c, node| {
        let mut parts = Vec::new();
        for &q in procs {
            match *c.state(q) {
                ProcessState::Terminated(v, _) => found.push((v, node)),
                ProcessState::Scanned(v) if Some(store.level(v)) == top => found.push((v, node)),
                ProcessState::Scanned(v) | ProcessState::Initial(v) if store.level(v) == touched => parts.push(v),
                _ => {}
            }
        }
        if !parts.is_empty() && top.is_none_or(|m| touched < m) && seed_keys.insert(parts.clone()) {
            seeds.push((parts, node));
        }
        Flow::Continue
    })?;
    out.nodes += ex.visited();
    out.horizon_hit |= ex.horizon_hit;
    let mut seen_terminal = std::collections::HashSet::new();
    for (v, node) in found {
        if !seen_terminal.insert(v) {
            continue;
        }
        if visit(store, v, &ex.schedule(node).0) == Flow::Stop {
            out.stopped = true;
            return Ok(out);
        }
    }
    for (parts, node) in seeds {
        let mut sched = ex.schedule(node).0;
        if rounds(store, delta, &parts, limits, &mut sched, &mut out, &mut visit)? == Flow::Stop {
            out.stopped = true;
            return Ok(out);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Reach {
    pub nodes: usize,
    pub horizon_hit: bool,
    pub stopped: bool,
}

/// One 1-round schedule realizing a nested scan assignment: processes are
/// grouped by scan set, smallest first; each group's missing updates come
/// before its scans.
fn round_schedule(store: &VertexStore, parts: &[VertexId], taus: &[Vec<VertexId>]) -> Vec<ProcessId> {
    let mut order: Vec<usize> = (0..parts.len()).collect();
    order.sort_by_key(|&i| (taus[i].len(), store.pid(parts[i])));
    let mut updated = vec![false; parts.len()];
    let mut out = Vec::with_capacity(2 * parts.len());
    for &i in &order {
        for (j, &m) in parts.iter().enumerate() {
            if !updated[j] && taus[i].contains(&m) {
                updated[j] = true;
                out.push(store.pid(m));
            }
        }
        out.push(store.pid(parts[i]));
    }
    out
}

fn rounds<D: Delta + ?Sized>(
    store: &mut VertexStore,
    delta: &D,
    parts: &[VertexId],
    limits: &Limits,
    sched: &mut Vec<ProcessId>,
    out: &mut Reach,
    visit: &mut impl FnMut(&VertexStore, VertexId, &[ProcessId]) -> Flow,
) -> Result<Flow, CoreError> {
    let level = store.level(parts[0]) + 1;
    let mut assignments = Vec::new();
    crate::complex::graph::chain_assignments(parts, &[], |taus| assignments.push(taus.to_vec()));
    for taus in assignments {
        out.nodes += 1;
        if out.nodes > limits.max_nodes {
            return Err(CoreError::CapExceeded(format!("exploration exceeded {} configurations", limits.max_nodes)));
        }
        let mark = sched.len();
        sched.extend(round_schedule(store, parts, &taus));
        let mut next = Vec::with_capacity(parts.len());
        let mut flow = Flow::Continue;
        for (i, tau) in taus.iter().enumerate() {
            let v = store.derived(store.pid(parts[i]), tau)?;
            let report = match delta.decide(store, v) {
                Some(Decision::Continue) if limits.max_object != Some(level) => {
                    next.push(v);
                    false
                }
                Some(Decision::Continue) => true,
                Some(Decision::Output(_)) => true,
                None if limits.open_level == Some(level) => true,
                None => {
                    out.horizon_hit = true;
                    false
                }
            };
            if report && visit(store, v, sched) == Flow::Stop {
                flow = Flow::Stop;
                break;
            }
        }
        if flow == Flow::Continue && !next.is_empty() {
            flow = rounds(store, delta, &next, limits, sched, out, visit)?;
        }
        sched.truncate(mark);
        if flow == Flow::Stop {
            return Ok(Flow::Stop);
        }
    }
    Ok(Flow::Continue)
}

/// Like [`search_output`], enumerating a round at a time.
pub fn search_output_rounds<D: Delta + ?Sized>(
    store: &mut VertexStore,
    delta: &D,
    start: &Configuration,
    procs: &[ProcessId],
    y: crate::vertex::Value,
    limits: &Limits,
) -> Result<(Option<Schedule>, Reach), CoreError> {
    let mut hit = None;
    let r = reach(store, delta, start, procs, limits, |store, v, sched| {
        if delta.decide(store, v) == Some(Decision::Output(y)) {
            hit = Some(Schedule(sched.to_vec()));
            Flow::Stop
        } else {
            Flow::Continue
        }
    })?;
    Ok((hit, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delta::DeltaMap;
    use crate::nis::apply_schedule;

    #[test]
    fn solo_exploration_is_a_chain() {
        let mut s = VertexStore::new();
        let d = DeltaMap::continue_everywhere();
        let c = Configuration::initial(&mut s, &[0, 1, 2]);
        let lim = Limits { max_object: Some(3), open_level: None, max_nodes: 1000 };
        let ex = explore(&mut s, &d, &c, &[ProcessId(2)], &lim, |_, _, _| Flow::Continue).unwrap();
        assert_eq!(ex.visited(), 7);
    }

    #[test]
    fn every_two_process_round_outcome_is_found() {
        let mut s = VertexStore::new();
        let d = DeltaMap::continue_everywhere();
        let c = Configuration::initial(&mut s, &[0, 1]);
        let lim = Limits { max_object: Some(1), open_level: None, max_nodes: 1000 };
        let mut finals = std::collections::HashSet::new();
        let procs = [ProcessId(1), ProcessId(2)];
        let ex = explore(&mut s, &d, &c, &procs, &lim, |_, c, _| {
            if c.states.iter().all(|st| matches!(st, ProcessState::Scanned(_))) {
                finals.insert(c.clone());
            }
            Flow::Continue
        })
        .unwrap();
        assert_eq!(finals.len(), 3);
        assert!(ex.visited() > 3);
    }

    #[test]
    fn witness_replays() {
        let mut s = VertexStore::new();
        let mut d = DeltaMap::continue_everywhere();
        let c = Configuration::initial(&mut s, &[0, 1]);
        let b1 = s.base(ProcessId(1), 0);
        let b2 = s.base(ProcessId(2), 1);
        let target = s.derived(ProcessId(2), &[b1, b2]).unwrap();
        d.set(target, Decision::Output(0));
        let procs = [ProcessId(1), ProcessId(2)];
        let (sched, _) = search_output(&mut s, &d, &c, &procs, 0, &Limits::unbounded(1000)).unwrap();
        let sched = sched.unwrap();
        let end = apply_schedule(&mut s, &c, &sched, &d).unwrap();
        assert_eq!(end.state(ProcessId(2)).output(), Some(0));
        assert_eq!(sched.len(), 3);
    }

    /// Outputs on roughly one vertex in `rate` at levels 1..=3, keyed by
    /// the vertex key so the rule does not depend on interning order.
    fn hashed(seed: u8, rate: u8) -> impl Fn(&VertexStore, VertexId) -> Option<Decision> {
        move |s: &VertexStore, v: VertexId| {
            let l = s.level(v);
            if l == 0 {
                return Some(Decision::Continue);
            }
            let h = s.key(v).0[0] ^ seed.wrapping_mul(31);
            if l <= 3 && h.is_multiple_of(rate) {
                Some(Decision::Output(h % 3))
            } else if l <= 2 {
                Some(Decision::Continue)
            } else {
                None
            }
        }
    }

    #[test]
    fn round_enumeration_matches_configuration_search() {
        let mut compared = 0;
        for seed in 0..24u8 {
            let mut s = VertexStore::new();
            let d = hashed(seed, 5);
            let inputs = [seed % 3, 1, 2];
            let c0 = Configuration::initial(&mut s, &inputs);
            let prefix: Vec<ProcessId> = [1, 2, 1, 3, 2, 1, 1, 3]
                .iter()
                .take(seed as usize % 9)
                .map(|&i| ProcessId(i))
                .collect();
            let Ok(c) = apply_schedule(&mut s, &c0, &Schedule(prefix), &d) else { continue };
            let all = [ProcessId(1), ProcessId(2), ProcessId(3)];
            let procs: Vec<ProcessId> =
                all.iter().copied().filter(|&q| (seed >> q.index()) & 1 == 0 && c.state(q).is_active()).collect();
            if procs.is_empty() {
                continue;
            }
            let t = 3;
            let lim = Limits { max_object: Some(t), open_level: Some(t), max_nodes: 1_000_000 };
            let mut slow = std::collections::BTreeSet::new();
            explore(&mut s, &d, &c, &procs, &lim, |s, cfg, _| {
                for &q in &procs {
                    match *cfg.state(q) {
                        ProcessState::Terminated(v, _) => {
                            slow.insert(v);
                        }
                        ProcessState::Scanned(v) if s.level(v) == t => {
                            slow.insert(v);
                        }
                        _ => {}
                    }
                }
                Flow::Continue
            })
            .unwrap();
            let mut fast = std::collections::BTreeSet::new();
            let mut witnesses = Vec::new();
            reach(&mut s, &d, &c, &procs, &lim, |_, v, sched| {
                if fast.insert(v) {
                    witnesses.push((v, Schedule(sched.to_vec())));
                }
                Flow::Continue
            })
            .unwrap();
            assert_eq!(fast, slow, "seed {seed}");
            compared += slow.len();
            let open = |s: &VertexStore, v: VertexId| d(s, v).or(Some(Decision::Continue));
            for (v, w) in witnesses {
                let end = apply_schedule(&mut s, &c, &w, &open).unwrap();
                assert!(procs.iter().any(|&q| end.state(q).vertex() == v), "seed {seed}");
            }
        }
        assert!(compared > 1000);
    }
}
