//! Explicitly materialized level graphs.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use crate::delta::{Decision, Delta};
use crate::error::CoreError;
use crate::nis::{Configuration, ProcessState, TaskSpec};
use crate::vertex::{ProcessId, Value, VertexId, VertexStore};

/// One vertex per process, sorted by process id.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Clique(pub Box<[VertexId]>);

impl Clique {
    pub fn new(store: &VertexStore, mut vs: Vec<VertexId>) -> Self {
        vs.sort_by_key(|&v| store.pid(v));
        Clique(vs.into_boxed_slice())
    }

    pub fn vertices(&self) -> &[VertexId] {
        &self.0
    }

    pub fn contains(&self, v: VertexId) -> bool {
        self.0.contains(&v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Distance {
    Finite(u32),
    Infinite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Caps {
    pub max_level: u32,
    pub max_cliques: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Caps { max_level: 6, max_cliques: 2_000_000 }
    }
}

#[derive(Clone, Debug)]
pub struct LevelGraph {
    level: u32,
    cliques: Vec<Clique>,
    vertices: Vec<VertexId>,
    adj: HashMap<VertexId, Vec<VertexId>>,
}

impl LevelGraph {
    pub fn from_cliques(level: u32, cliques: impl IntoIterator<Item = Clique>) -> Self {
        let mut seen = HashSet::new();
        let mut list = Vec::new();
        for c in cliques {
            if seen.insert(c.clone()) {
                list.push(c);
            }
        }
        list.sort();
        let mut adj: HashMap<VertexId, BTreeSet<VertexId>> = HashMap::new();
        for c in &list {
            for &u in c.vertices() {
                let entry = adj.entry(u).or_default();
                for &w in c.vertices() {
                    if w != u {
                        entry.insert(w);
                    }
                }
            }
        }
        let mut vertices: Vec<VertexId> = adj.keys().copied().collect();
        vertices.sort();
        let adj = adj.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect();
        LevelGraph { level, cliques: list, vertices, adj }
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn cliques(&self) -> &[Clique] {
        &self.cliques
    }

    pub fn vertices(&self) -> &[VertexId] {
        &self.vertices
    }

    pub fn contains(&self, v: VertexId) -> bool {
        self.adj.contains_key(&v)
    }

    pub fn neighbors(&self, v: VertexId) -> &[VertexId] {
        self.adj.get(&v).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn edge_count(&self) -> usize {
        self.adj.values().map(|v| v.len()).sum::<usize>() / 2
    }

    pub fn edges(&self) -> BTreeSet<(VertexId, VertexId)> {
        let mut out = BTreeSet::new();
        for (&u, ns) in &self.adj {
            for &w in ns {
                if u < w {
                    out.insert((u, w));
                }
            }
        }
        out
    }

    pub fn is_adjacent(&self, u: VertexId, w: VertexId) -> bool {
        self.neighbors(u).binary_search(&w).is_ok()
    }

    /// Sub-graph formed by the cliques satisfying `keep`.
    pub fn filter_cliques(&self, keep: impl Fn(&Clique) -> bool) -> LevelGraph {
        LevelGraph::from_cliques(self.level, self.cliques.iter().filter(|c| keep(c)).cloned())
    }
}

pub fn build_g0(store: &mut VertexStore, task: &TaskSpec) -> LevelGraph {
    let cliques = crate::nis::initial_configurations(store, task)
        .into_iter()
        .map(|c| Clique(c.states.iter().map(|s| s.vertex()).collect()));
    LevelGraph::from_cliques(0, cliques)
}

fn status<D: Delta + ?Sized>(store: &VertexStore, delta: &D, v: VertexId) -> Result<Decision, CoreError> {
    delta.decide(store, v).ok_or_else(|| CoreError::UndefinedDelta(store.key(v)))
}

fn is_subset(a: &[VertexId], b: &[VertexId]) -> bool {
    a.iter().all(|x| b.contains(x))
}

/// Every assignment of a scan set to each of `active` (sorted by id): each
/// process sees itself, sees only `active` vertices, and the scan sets are
/// pairwise nested.
pub(crate) fn chain_assignments(
    active: &[VertexId],
    fixed: &[(usize, Vec<VertexId>)],
    mut visit: impl FnMut(&[Vec<VertexId>]),
) {
    let m = active.len();
    let mut cur: Vec<Vec<VertexId>> = vec![Vec::new(); m];
    fn rec(
        i: usize,
        active: &[VertexId],
        fixed: &[(usize, Vec<VertexId>)],
        cur: &mut Vec<Vec<VertexId>>,
        visit: &mut dyn FnMut(&[Vec<VertexId>]),
    ) {
        let m = active.len();
        if i == m {
            visit(cur);
            return;
        }
        let nested_ok = |cand: &[VertexId], cur: &[Vec<VertexId>]| {
            cur[..i].iter().all(|t| is_subset(t, cand) || is_subset(cand, t))
        };
        if let Some((_, tau)) = fixed.iter().find(|(j, _)| *j == i) {
            if nested_ok(tau, cur) {
                cur[i] = tau.clone();
                rec(i + 1, active, fixed, cur, visit);
            }
            return;
        }
        let others: Vec<usize> = (0..m).filter(|&j| j != i).collect();
        for mask in 0u32..(1 << others.len()) {
            let mut tau: Vec<VertexId> = Vec::with_capacity(m);
            for (b, &j) in others.iter().enumerate() {
                if mask & (1 << b) != 0 {
                    tau.push(active[j]);
                }
            }
            tau.push(active[i]);
            tau.sort();
            if nested_ok(&tau, cur) {
                cur[i] = tau;
                rec(i + 1, active, fixed, cur, visit);
            }
        }
    }
    rec(0, active, fixed, &mut cur, &mut visit);
}

/// The n-cliques of the subdivision of one clique.
pub fn subdivide_clique_cliques<D: Delta + ?Sized>(
    store: &mut VertexStore,
    sigma: &Clique,
    delta: &D,
) -> Result<Vec<Clique>, CoreError> {
    let mut active = Vec::new();
    let mut carried = Vec::new();
    for &v in sigma.vertices() {
        match status(store, delta, v)? {
            Decision::Continue => active.push(v),
            Decision::Output(_) => carried.push(v),
        }
    }
    let mut raw = Vec::new();
    chain_assignments(&active, &[], |taus| raw.push(taus.to_vec()));
    let mut out = Vec::with_capacity(raw.len());
    for taus in raw {
        let mut vs = carried.clone();
        for (i, tau) in taus.iter().enumerate() {
            vs.push(store.derived(store.pid(active[i]), tau)?);
        }
        out.push(Clique::new(store, vs));
    }
    Ok(out)
}

pub fn subdivide_clique<D: Delta + ?Sized>(
    store: &mut VertexStore,
    sigma: &Clique,
    delta: &D,
    level: u32,
) -> Result<LevelGraph, CoreError> {
    Ok(LevelGraph::from_cliques(level + 1, subdivide_clique_cliques(store, sigma, delta)?))
}

/// Vertices and edges of the subdivision of `sigma`, straight from the
/// vertex/edge membership rules rather than from cliques.
pub fn subdivision_by_rules<D: Delta + ?Sized>(
    store: &mut VertexStore,
    sigma: &Clique,
    delta: &D,
) -> Result<(BTreeSet<VertexId>, BTreeSet<(VertexId, VertexId)>), CoreError> {
    let mut active = Vec::new();
    let mut carried = Vec::new();
    for &v in sigma.vertices() {
        match status(store, delta, v)? {
            Decision::Continue => active.push(v),
            Decision::Output(_) => carried.push(v),
        }
    }
    let mut verts: Vec<(VertexId, Option<Vec<VertexId>>)> = carried.iter().map(|&v| (v, None)).collect();
    for mask in 1u32..(1 << active.len()) {
        let tau: Vec<VertexId> =
            (0..active.len()).filter(|b| mask & (1 << b) != 0).map(|b| active[b]).collect();
        for &m in &tau {
            let v = store.derived(store.pid(m), &tau)?;
            verts.push((v, Some(tau.clone())));
        }
    }
    let mut edges = BTreeSet::new();
    for (i, (u, tu)) in verts.iter().enumerate() {
        for (w, tw) in verts.iter().skip(i + 1) {
            if store.pid(*u) == store.pid(*w) {
                continue;
            }
            let joined = match (tu, tw) {
                (None, _) | (_, None) => true,
                (Some(a), Some(b)) => is_subset(a, b) || is_subset(b, a),
            };
            if joined {
                edges.insert((*u.min(w), *u.max(w)));
            }
        }
    }
    Ok((verts.into_iter().map(|(v, _)| v).collect(), edges))
}

pub fn subdivide_graph<D: Delta + ?Sized>(
    store: &mut VertexStore,
    g: &LevelGraph,
    delta: &D,
    caps: &Caps,
) -> Result<LevelGraph, CoreError> {
    if g.level() + 1 > caps.max_level {
        return Err(CoreError::CapExceeded(format!("level {} exceeds maxLevel {}", g.level() + 1, caps.max_level)));
    }
    let mut all = HashSet::new();
    for sigma in g.cliques() {
        for c in subdivide_clique_cliques(store, sigma, delta)? {
            all.insert(c);
            if all.len() > caps.max_cliques {
                return Err(CoreError::CapExceeded(format!("more than {} cliques", caps.max_cliques)));
            }
        }
    }
    Ok(LevelGraph::from_cliques(g.level() + 1, all))
}

/// `G_t` under `delta`, built from `G_0` by repeated subdivision.
pub fn build_level<D: Delta + ?Sized>(
    store: &mut VertexStore,
    task: &TaskSpec,
    delta: &D,
    level: u32,
    caps: &Caps,
) -> Result<LevelGraph, CoreError> {
    let mut g = build_g0(store, task);
    for _ in 0..level {
        g = subdivide_graph(store, &g, delta, caps)?;
    }
    Ok(g)
}

pub fn clique_to_configuration<D: Delta + ?Sized>(
    store: &VertexStore,
    sigma: &Clique,
    delta: &D,
) -> Result<Configuration, CoreError> {
    let mut states = Vec::with_capacity(sigma.0.len());
    for &v in sigma.vertices() {
        let s = match status(store, delta, v)? {
            Decision::Output(a) => ProcessState::Terminated(v, a),
            Decision::Continue if store.level(v) == 0 => ProcessState::Initial(v),
            Decision::Continue => ProcessState::Scanned(v),
        };
        states.push(s);
    }
    Ok(Configuration { states })
}

/// `None` when some process is between its update and its scan.
pub fn configuration_to_clique(store: &VertexStore, c: &Configuration) -> Option<Clique> {
    if c.states.iter().any(|s| matches!(s, ProcessState::Updated(_))) {
        return None;
    }
    Some(Clique::new(store, c.states.iter().map(|s| s.vertex()).collect()))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Correspondence {
    pub from_schedules: usize,
    pub from_cliques: usize,
    /// A configuration key present on one side only.
    pub mismatch: Option<String>,
}

impl Correspondence {
    pub fn holds(&self) -> bool {
        self.mismatch.is_none()
    }
}

/// Compares the configurations reached by all 1-round schedules from the
/// configuration of `sigma` with those represented by the n-cliques of its
/// subdivision. `delta` must also be defined on the subdivision's vertices.
pub fn correspondence_check<D: Delta + ?Sized>(
    store: &mut VertexStore,
    sigma: &Clique,
    delta: &D,
) -> Result<Correspondence, CoreError> {
    use crate::codec::config_key;
    let c = clique_to_configuration(store, sigma, delta)?;
    let mut left = BTreeSet::new();
    for beta in crate::nis::one_round_schedules(store, &c)? {
        let reached = crate::nis::apply_schedule(store, &c, &beta, delta)?;
        left.insert(config_key(store, &reached));
    }
    let mut right = BTreeSet::new();
    for sc in subdivide_clique_cliques(store, sigma, delta)? {
        let reached = clique_to_configuration(store, &sc, delta)?;
        right.insert(config_key(store, &reached));
    }
    let mismatch = left.symmetric_difference(&right).next().cloned();
    Ok(Correspondence { from_schedules: left.len(), from_cliques: right.len(), mismatch })
}

pub fn has_seen(store: &VertexStore, v: VertexId, a: Value) -> bool {
    store.has_seen(v, a)
}

/// Union of the cliques none of whose vertices has seen `a`.
pub fn compute_n(store: &VertexStore, g: &LevelGraph, a: Value) -> LevelGraph {
    g.filter_cliques(|c| c.vertices().iter().all(|&v| !store.has_seen(v, a)))
}

pub fn distance(g: &LevelGraph, a: &[VertexId], b: &[VertexId]) -> Result<Distance, CoreError> {
    if a.is_empty() || b.is_empty() {
        return Err(CoreError::EmptySet);
    }
    let targets: HashSet<VertexId> = b.iter().copied().collect();
    let mut dist: HashMap<VertexId, u32> = HashMap::new();
    let mut queue = VecDeque::new();
    for &v in a {
        if targets.contains(&v) {
            return Ok(Distance::Finite(0));
        }
        if dist.insert(v, 0).is_none() {
            queue.push_back(v);
        }
    }
    while let Some(u) = queue.pop_front() {
        let d = dist[&u];
        for &w in g.neighbors(u) {
            if dist.contains_key(&w) {
                continue;
            }
            if targets.contains(&w) {
                return Ok(Distance::Finite(d + 1));
            }
            dist.insert(w, d + 1);
            queue.push_back(w);
        }
    }
    Ok(Distance::Infinite)
}

pub fn is_connected(g: &LevelGraph) -> bool {
    let Some(&start) = g.vertices().first() else { return true };
    let mut seen = HashSet::from([start]);
    let mut stack = vec![start];
    while let Some(u) = stack.pop() {
        for &w in g.neighbors(u) {
            if seen.insert(w) {
                stack.push(w);
            }
        }
    }
    seen.len() == g.vertices().len()
}

/// Processes in `sigma` by status.
pub fn split_status<D: Delta + ?Sized>(
    store: &VertexStore,
    sigma: &Clique,
    delta: &D,
) -> (Vec<ProcessId>, Vec<ProcessId>) {
    let mut active = Vec::new();
    let mut done = Vec::new();
    for &v in sigma.vertices() {
        match delta.decide(store, v) {
            Some(Decision::Output(_)) => done.push(store.pid(v)),
            _ => active.push(store.pid(v)),
        }
    }
    (active, done)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delta::DeltaMap;

    fn pid(i: u8) -> ProcessId {
        ProcessId(i)
    }

    #[test]
    fn g0_counts() {
        let mut s = VertexStore::new();
        let g = build_g0(&mut s, &TaskSpec { n: 2, k: 2 });
        assert_eq!(g.vertices().len(), 6);
        assert_eq!(g.edge_count(), 9);
        assert_eq!(g.cliques().len(), 9);
        let g = build_g0(&mut s, &TaskSpec { n: 3, k: 2 });
        assert_eq!(g.vertices().len(), 9);
        assert_eq!(g.cliques().len(), 27);
        assert!(is_connected(&g));
    }

    #[test]
    fn two_process_path() {
        let mut s = VertexStore::new();
        let u1 = s.base(pid(1), 0);
        let u2 = s.base(pid(2), 1);
        let sigma = Clique::new(&s, vec![u1, u2]);
        let d = DeltaMap::continue_everywhere();
        let g = subdivide_clique(&mut s, &sigma, &d, 0).unwrap();
        assert_eq!(g.vertices().len(), 4);
        assert_eq!(g.edge_count(), 3);
        assert_eq!(g.cliques().len(), 3);
        let solo1 = s.derived(pid(1), &[u1]).unwrap();
        let solo2 = s.derived(pid(2), &[u2]).unwrap();
        assert_eq!(distance(&g, &[solo1], &[solo2]).unwrap(), Distance::Finite(3));
    }

    #[test]
    fn carried_terminated_vertex() {
        let mut s = VertexStore::new();
        let u1 = s.base(pid(1), 0);
        let w = s.base(pid(2), 1);
        let mut d = DeltaMap::continue_everywhere();
        d.set(w, Decision::Output(1));
        let sigma = Clique::new(&s, vec![u1, w]);
        let g = subdivide_clique(&mut s, &sigma, &d, 0).unwrap();
        assert_eq!(g.vertices().len(), 2);
        assert_eq!(g.edge_count(), 1);
        assert!(g.contains(w));
    }

    #[test]
    fn all_terminated_is_fixed() {
        let mut s = VertexStore::new();
        let u1 = s.base(pid(1), 0);
        let u2 = s.base(pid(2), 0);
        let d = DeltaMap::with_default(Some(Decision::Output(0)));
        let sigma = Clique::new(&s, vec![u1, u2]);
        let g = subdivide_clique(&mut s, &sigma, &d, 0).unwrap();
        assert_eq!(g.cliques(), &[sigma]);
    }

    #[test]
    fn three_process_counts() {
        let mut s = VertexStore::new();
        let vs: Vec<_> = (1..=3).map(|i| s.base(pid(i), 0)).collect();
        let sigma = Clique::new(&s, vs);
        let d = DeltaMap::continue_everywhere();
        let g = subdivide_clique(&mut s, &sigma, &d, 0).unwrap();
        assert_eq!(g.vertices().len(), 12);
        assert_eq!(g.cliques().len(), 19);
    }

    #[test]
    fn disconnected_union() {
        let mut s = VertexStore::new();
        let va = vec![s_base(&mut s, 1, 0), s_base(&mut s, 2, 0)];
        let vb = vec![s_base(&mut s, 1, 1), s_base(&mut s, 2, 1)];
        let a = Clique::new(&s, va);
        let b = Clique::new(&s, vb);
        let g = LevelGraph::from_cliques(0, [a, b]);
        assert!(!is_connected(&g));
        assert_eq!(distance(&g, &g.cliques()[0].0, &g.cliques()[1].0).unwrap(), Distance::Infinite);
        assert_eq!(distance(&g, &[], &g.cliques()[1].0), Err(CoreError::EmptySet));
    }

    fn s_base(s: &mut VertexStore, p: u8, x: Value) -> VertexId {
        s.base(pid(p), x)
    }

    #[test]
    fn n_of_g0() {
        let mut s = VertexStore::new();
        let g = build_g0(&mut s, &TaskSpec { n: 2, k: 2 });
        let n0 = compute_n(&s, &g, 0);
        assert_eq!(n0.cliques().len(), 4);
    }

    #[test]
    fn caps_are_reported() {
        let mut s = VertexStore::new();
        let task = TaskSpec { n: 3, k: 2 };
        let d = DeltaMap::continue_everywhere();
        let caps = Caps { max_level: 6, max_cliques: 100 };
        assert!(matches!(build_level(&mut s, &task, &d, 1, &caps), Err(CoreError::CapExceeded(_))));
        let caps = Caps { max_level: 0, max_cliques: 100 };
        assert!(matches!(build_level(&mut s, &task, &d, 1, &caps), Err(CoreError::CapExceeded(_))));
    }
}
