//! Seeded property suites for the subdivision lemmas. Each instance draws
//! a random protocol, a level and random vertex sets, and checks one
//! statement about the level graphs.

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SuiteResult;
use crate::complex::graph::{
    build_g0, compute_n, distance, is_connected, subdivide_clique, subdivide_graph, Caps, Clique, Distance, LevelGraph,
};
use crate::delta::{Decision, Delta};
use crate::nis::TaskSpec;
use crate::vertex::{Value, VertexId, VertexStore};

/// Terminates about `per_mille` of the vertices at levels `1..=top`,
/// chosen by hashing the vertex key with `seed`; everything else below
/// `top` continues. Terminated vertices output the smallest value they
/// have seen.
#[derive(Clone, Copy, Debug)]
pub struct HashedDelta {
    pub seed: u64,
    pub per_mille: u64,
    pub top: u32,
}

impl Delta for HashedDelta {
    fn decide(&self, store: &VertexStore, v: VertexId) -> Option<Decision> {
        let level = store.level(v);
        if level == 0 {
            return Some(Decision::Continue);
        }
        if level > self.top {
            return None;
        }
        let key = store.key(v).0;
        let mut h = u64::from_le_bytes(key[..8].try_into().expect("8 bytes")) ^ self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        h ^= h >> 31;
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 29;
        if h % 1000 < self.per_mille {
            let seen = store.seen_mask(v);
            Some(Decision::Output(seen.trailing_zeros() as Value))
        } else {
            Some(Decision::Continue)
        }
    }
}

struct World {
    store: VertexStore,
    delta: HashedDelta,
    levels: Vec<LevelGraph>,
    /// Per level, the cliques containing each vertex.
    index: Vec<HashMap<VertexId, Vec<usize>>>,
}

/// Levels built per world; lemma statements relate level `r` to `r+1`, so
/// instances use `r < TOP`.
const TOP: u32 = 2;

impl World {
    fn new(seed: u64) -> Self {
        let task = TaskSpec::new(3, 2).expect("valid task");
        let mut store = VertexStore::new();
        let delta = HashedDelta { seed, per_mille: 120 + (seed % 4) * 40, top: TOP };
        let mut levels = vec![build_g0(&mut store, &task)];
        for _ in 0..TOP {
            let next = subdivide_graph(&mut store, levels.last().expect("nonempty"), &delta, &Caps::default())
                .expect("desk-scale level fits the caps");
            levels.push(next);
        }
        let index = levels
            .iter()
            .map(|g| {
                let mut m: HashMap<VertexId, Vec<usize>> = HashMap::new();
                for (i, c) in g.cliques().iter().enumerate() {
                    for &v in c.vertices() {
                        m.entry(v).or_default().push(i);
                    }
                }
                m
            })
            .collect();
        World { store, delta, levels, index }
    }

    fn is_terminated(&self, v: VertexId) -> bool {
        matches!(self.delta.decide(&self.store, v), Some(Decision::Output(_)))
    }

    fn terminated_at(&self, r: usize) -> Vec<VertexId> {
        self.levels[r].vertices().iter().copied().filter(|&v| self.is_terminated(v)).collect()
    }

    /// A connected union of up to `max` cliques of level `r`, grown from a
    /// random clique through shared vertices, restricted to cliques that
    /// pass `keep`.
    fn connected_union(&self, rng: &mut ChaCha8Rng, r: usize, max: usize, keep: impl Fn(&Clique) -> bool) -> Option<Vec<usize>> {
        let g = &self.levels[r];
        let starts: Vec<usize> = (0..g.cliques().len()).filter(|&i| keep(&g.cliques()[i])).collect();
        let &first = starts.choose(rng)?;
        let mut chosen = vec![first];
        let target = rng.gen_range(1..=max);
        while chosen.len() < target {
            let mut frontier = BTreeSet::new();
            for &i in &chosen {
                for v in g.cliques()[i].vertices() {
                    for &j in &self.index[r][v] {
                        if !chosen.contains(&j) && keep(&g.cliques()[j]) {
                            frontier.insert(j);
                        }
                    }
                }
            }
            let frontier: Vec<usize> = frontier.into_iter().collect();
            let Some(&j) = frontier.choose(rng) else { break };
            chosen.push(j);
        }
        Some(chosen)
    }

    fn union_graph(&self, r: usize, ids: &[usize]) -> LevelGraph {
        let g = &self.levels[r];
        LevelGraph::from_cliques(g.level(), ids.iter().map(|&i| g.cliques()[i].clone()))
    }

    /// The vertex set of the subdivision of `set` at level `r + 1`.
    fn image(&mut self, r: usize, set: &VSet) -> BTreeSet<VertexId> {
        match set {
            VSet::Terminated(vs) => vs.clone(),
            VSet::Cliques(ids) => {
                let g = self.union_graph(r, ids);
                let sub = subdivide_graph(&mut self.store, &g, &self.delta, &Caps::default()).expect("within caps");
                sub.vertices().iter().copied().collect()
            }
        }
    }

    fn vertices_of(&self, r: usize, set: &VSet) -> BTreeSet<VertexId> {
        match set {
            VSet::Terminated(vs) => vs.clone(),
            VSet::Cliques(ids) => ids.iter().flat_map(|&i| self.levels[r].cliques()[i].vertices().iter().copied()).collect(),
        }
    }

    /// Either a nonempty set of terminated vertices or a connected union of
    /// cliques near `near`, when given.
    fn random_set(&self, rng: &mut ChaCha8Rng, r: usize, near: Option<&BTreeSet<VertexId>>) -> Option<VSet> {
        let terminated = self.terminated_at(r);
        if rng.gen_bool(0.3) && !terminated.is_empty() {
            let m = rng.gen_range(1..=terminated.len().min(3));
            let vs: BTreeSet<VertexId> = terminated.choose_multiple(rng, m).copied().collect();
            return Some(VSet::Terminated(vs));
        }
        match near {
            Some(set) if rng.gen_bool(0.6) => {
                // Start from a clique touching `set` or one of its neighbours.
                let g = &self.levels[r];
                let mut cand = BTreeSet::new();
                for &v in set {
                    for &w in std::iter::once(&v).chain(g.neighbors(v)) {
                        cand.extend(self.index[r].get(&w).into_iter().flatten().copied());
                    }
                }
                let cand: Vec<usize> = cand.into_iter().collect();
                let &first = cand.choose(rng)?;
                let mut ids = vec![first];
                if rng.gen_bool(0.5) {
                    if let Some(more) = self.connected_union(rng, r, 3, |_| true) {
                        ids.extend(more);
                    }
                }
                ids.sort();
                ids.dedup();
                Some(VSet::Cliques(ids))
            }
            _ => self.connected_union(rng, r, 4, |_| true).map(VSet::Cliques),
        }
    }
}

#[derive(Clone, Debug)]
enum VSet {
    Terminated(BTreeSet<VertexId>),
    Cliques(Vec<usize>),
}

fn dist(g: &LevelGraph, a: &BTreeSet<VertexId>, b: &BTreeSet<VertexId>) -> Distance {
    let a: Vec<_> = a.iter().copied().collect();
    let b: Vec<_> = b.iter().copied().collect();
    distance(g, &a, &b).expect("nonempty sets")
}

/// Names of the suites run by [`lemma_suites`], in order.
pub const LEMMA_SUITES: [&str; 10] = [
    "clique-subdivision-connected",
    "union-subdivision-connected",
    "levels-connected",
    "disjointness-preserved",
    "distance-monotone",
    "active-separation",
    "distance-growth",
    "terminated-carried",
    "unseen-commutes",
    "unseen-extension",
];

/// Runs every suite with at least `instances` instances each.
pub fn lemma_suites(seed: u64, instances: usize) -> Vec<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Whole-level statements get one instance per (world, level, value).
    let worlds_needed = instances.div_ceil(TOP as usize * 3).max(instances.div_ceil(TOP as usize + 1)).max(4);
    let mut worlds: Vec<World> = (0..worlds_needed as u64).map(|i| World::new(seed.wrapping_mul(1000) + i)).collect();
    let mut out: Vec<SuiteResult> = LEMMA_SUITES.iter().map(|n| SuiteResult::new(n)).collect();
    let nw = worlds.len();

    // Whole-level statements.
    for w in worlds.iter_mut() {
        for r in 0..=TOP as usize {
            let ok = is_connected(&w.levels[r]);
            out[2].record(ok, || format!("seed {} level {r} disconnected", w.delta.seed));
        }
        for r in 0..TOP as usize {
            let next: HashSet<VertexId> = w.levels[r + 1].vertices().iter().copied().collect();
            for a in 0..3 {
                let t_r: Vec<VertexId> = w
                    .terminated_at(r)
                    .into_iter()
                    .filter(|&v| w.delta.decide(&w.store, v) == Some(Decision::Output(a)))
                    .collect();
                let ok = t_r.iter().all(|v| next.contains(v));
                out[7].record(ok, || format!("seed {} level {r} value {a}: terminated vertex not carried", w.delta.seed));

                let n_r = compute_n(&w.store, &w.levels[r], a);
                let lhs: BTreeSet<Clique> = compute_n(&w.store, &w.levels[r + 1], a).cliques().iter().cloned().collect();
                let rhs: BTreeSet<Clique> = subdivide_graph(&mut w.store, &n_r, &w.delta, &Caps::default())
                    .expect("within caps")
                    .cliques()
                    .iter()
                    .cloned()
                    .collect();
                out[8].record(lhs == rhs, || {
                    format!("seed {} level {r} value {a}: {} vs {} cliques", w.delta.seed, lhs.len(), rhs.len())
                });
            }
        }
    }

    let mut attempts = 0;
    while out.iter().any(|s| s.instances < instances) && attempts < 200 * instances {
        attempts += 1;
        let w = &mut worlds[rng.gen_range(0..nw)];
        let r = rng.gen_range(0..TOP as usize);
        let seed = w.delta.seed;

        if out[0].instances < instances {
            let g = &w.levels[r];
            let sigma = g.cliques().choose(&mut rng).expect("nonempty level").clone();
            let sub = subdivide_clique(&mut w.store, &sigma, &w.delta, g.level()).expect("defined below top");
            out[0].record(is_connected(&sub), || format!("seed {seed} level {r}: subdivided clique disconnected"));
        }

        if out[1].instances < instances {
            if let Some(ids) = w.connected_union(&mut rng, r, 6, |_| true) {
                let g = w.union_graph(r, &ids);
                let sub = subdivide_graph(&mut w.store, &g, &w.delta, &Caps::default()).expect("within caps");
                out[1].record(is_connected(&sub), || format!("seed {seed} level {r}: union of {} cliques", ids.len()));
            }
        }

        let Some(a) = w.random_set(&mut rng, r, None) else { continue };
        let av = w.vertices_of(r, &a);
        let Some(b) = w.random_set(&mut rng, r, Some(&av)) else { continue };
        let bv = w.vertices_of(r, &b);
        let ai = w.image(r, &a);
        let bi = w.image(r, &b);

        if out[3].instances < instances {
            let before = av.is_disjoint(&bv);
            let after = ai.is_disjoint(&bi);
            out[3].record(before == after, || format!("seed {seed} level {r}: disjoint {before} before, {after} after"));
        }

        let d0 = dist(&w.levels[r], &av, &bv);
        let d1 = dist(&w.levels[r + 1], &ai, &bi);
        if out[4].instances < instances {
            out[4].record(d1 >= d0, || format!("seed {seed} level {r}: distance {d0:?} became {d1:?}"));
        }

        if out[6].instances < instances && av.is_disjoint(&bv) && !reachable_without_active_edge(w, r, &av, &bv) {
            out[6].record(d1 > d0, || format!("seed {seed} level {r}: distance {d0:?} did not grow ({d1:?})"));
        }

        if out[5].instances < instances {
            separation_instance(w, &mut rng, r, &mut out[5]);
        }

        if out[9].instances < instances {
            let g = &w.levels[r];
            let sigma = g.cliques().choose(&mut rng).expect("nonempty").clone();
            let a: Value = rng.gen_range(0..3);
            let unseen: Vec<VertexId> = sigma.vertices().iter().copied().filter(|&v| !w.store.has_seen(v, a)).collect();
            if !unseen.is_empty() {
                let m = rng.gen_range(1..=unseen.len());
                let tau: Vec<VertexId> = unseen.choose_multiple(&mut rng, m).copied().collect();
                let n_r = compute_n(&w.store, g, a);
                let ok = n_r.cliques().iter().any(|c| tau.iter().all(|&v| c.contains(v)));
                out[9].record(ok, || format!("seed {seed} level {r} value {a}: {} unseen vertices not in N", tau.len()));
            }
        }
    }
    for s in out.iter_mut() {
        if s.instances < instances {
            s.failures.push(format!("only {} instances generated", s.instances));
        }
    }
    out
}

/// Whether some path from `a` to `b` in level `r` uses only edges with at
/// least one terminated endpoint.
fn reachable_without_active_edge(w: &World, r: usize, a: &BTreeSet<VertexId>, b: &BTreeSet<VertexId>) -> bool {
    let g = &w.levels[r];
    let mut seen: HashSet<VertexId> = a.iter().copied().collect();
    let mut stack: Vec<VertexId> = a.iter().copied().collect();
    while let Some(u) = stack.pop() {
        if b.contains(&u) {
            return true;
        }
        for &v in g.neighbors(u) {
            if (w.is_terminated(u) || w.is_terminated(v)) && seen.insert(v) {
                stack.push(v);
            }
        }
    }
    false
}

/// Two disjoint unions of cliques, both meeting an all-active connected
/// union: their subdivisions restricted to the active one's stay at
/// distance at least 2.
fn separation_instance(w: &mut World, rng: &mut ChaCha8Rng, r: usize, out: &mut SuiteResult) {
    let active = |c: &Clique| c.vertices().iter().all(|&v| !w.is_terminated(v));
    let Some(c_ids) = w.connected_union(rng, r, 6, active) else { return };
    let cv = w.vertices_of(r, &VSet::Cliques(c_ids.clone()));
    let g = &w.levels[r];
    let touching: Vec<usize> = cv.iter().flat_map(|v| w.index[r][v].iter().copied()).collect::<BTreeSet<_>>().into_iter().collect();
    let Some(&a0) = touching.choose(rng) else { return };
    let a_ids = vec![a0];
    let av: BTreeSet<VertexId> = g.cliques()[a0].vertices().iter().copied().collect();
    let others: Vec<usize> =
        touching.iter().copied().filter(|&j| g.cliques()[j].vertices().iter().all(|v| !av.contains(v))).collect();
    let Some(&b0) = others.choose(rng) else { return };
    let b_ids = vec![b0];
    let ai = w.image(r, &VSet::Cliques(a_ids));
    let bi = w.image(r, &VSet::Cliques(b_ids));
    let ci = w.image(r, &VSet::Cliques(c_ids));
    let lhs: BTreeSet<VertexId> = ai.intersection(&ci).copied().collect();
    let rhs: BTreeSet<VertexId> = bi.intersection(&ci).copied().collect();
    if lhs.is_empty() || rhs.is_empty() {
        out.record(false, || "subdivision lost a shared vertex".into());
        return;
    }
    let d = dist(&w.levels[r + 1], &lhs, &rhs);
    out.record(d >= Distance::Finite(2), || format!("seed {} level {r}: separation {d:?}", w.delta.seed));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_passes() {
        for s in lemma_suites(7, 20) {
            assert!(s.passed(), "{}: {:?}", s.name, s.failures);
            assert!(s.instances >= 20, "{}", s.name);
        }
    }
}
