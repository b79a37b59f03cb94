//! Queries against `G_r` without materializing it.
//!
//! A set `S` of distinct-process vertices lies in some n-clique of `G_r`
//! iff its level-`r` members have pairwise nested scans, its lower-level
//! members are terminated, every member of the largest scan continues, and
//! the largest scan together with the lower-level members lies in a clique
//! of `G_{r-1}`.

use std::collections::BTreeSet;

use super::graph::{chain_assignments, Clique};
use crate::delta::{Decision, Delta};
use crate::error::CoreError;
use crate::nis::TaskSpec;
use crate::vertex::{ProcessId, VertexId, VertexStore};

fn sorted_subset(a: &[VertexId], b: &[VertexId]) -> bool {
    a.iter().all(|x| b.contains(x))
}

pub fn is_simplex<D: Delta + ?Sized>(store: &VertexStore, delta: &D, set: &[VertexId], r: u32) -> bool {
    let mut mask = 0u32;
    for &v in set {
        let bit = 1u32 << store.pid(v).index();
        if mask & bit != 0 || store.level(v) > r {
            return false;
        }
        mask |= bit;
    }
    if r == 0 || set.is_empty() {
        return true;
    }
    let mut next = Vec::with_capacity(set.len());
    let mut scans: Vec<&[VertexId]> = Vec::with_capacity(set.len());
    for &v in set {
        if store.level(v) < r {
            if !matches!(delta.decide(store, v), Some(Decision::Output(_))) {
                return false;
            }
            next.push(v);
        } else {
            scans.push(store.scan(v));
        }
    }
    scans.sort_by_key(|s| s.len());
    for w in scans.windows(2) {
        if !sorted_subset(w[0], w[1]) {
            return false;
        }
    }
    if let Some(top) = scans.last() {
        for &m in top.iter() {
            if delta.decide(store, m) != Some(Decision::Continue) {
                return false;
            }
        }
        next.extend_from_slice(top);
    }
    is_simplex(store, delta, &next, r - 1)
}

pub fn in_universe<D: Delta + ?Sized>(store: &VertexStore, delta: &D, v: VertexId, r: u32) -> bool {
    is_simplex(store, delta, &[v], r)
}

pub fn adjacent<D: Delta + ?Sized>(store: &VertexStore, delta: &D, u: VertexId, w: VertexId, r: u32) -> bool {
    u != w && store.pid(u) != store.pid(w) && is_simplex(store, delta, &[u, w], r)
}

/// Every n-clique of `G_r` containing `set`.
pub fn star<D: Delta + ?Sized>(
    store: &mut VertexStore,
    delta: &D,
    task: &TaskSpec,
    set: &[VertexId],
    r: u32,
) -> Result<Vec<Clique>, CoreError> {
    if !is_simplex(store, delta, set, r) {
        return Ok(Vec::new());
    }
    if r == 0 {
        return Ok(complete_base(store, task, set));
    }
    let mut lower = Vec::new();
    let mut fixed_by_pid: Vec<(ProcessId, Vec<VertexId>)> = Vec::new();
    let mut top: &[VertexId] = &[];
    for &v in set {
        if store.level(v) < r {
            lower.push(v);
        } else {
            let s = store.scan(v);
            if s.len() > top.len() {
                top = s;
            }
            fixed_by_pid.push((store.pid(v), s.to_vec()));
        }
    }
    lower.extend_from_slice(top);
    let below = star(store, delta, task, &lower, r - 1)?;
    let mut out = BTreeSet::new();
    for sigma in below {
        let mut active = Vec::new();
        let mut carried = Vec::new();
        for &v in sigma.vertices() {
            match delta.decide(store, v) {
                Some(Decision::Continue) => active.push(v),
                Some(Decision::Output(_)) => carried.push(v),
                None => return Err(CoreError::UndefinedDelta(store.key(v))),
            }
        }
        let fixed: Vec<(usize, Vec<VertexId>)> = fixed_by_pid
            .iter()
            .map(|(p, tau)| {
                let i = active.iter().position(|&a| store.pid(a) == *p).expect("scan owner is active");
                (i, tau.clone())
            })
            .collect();
        let mut raw = Vec::new();
        chain_assignments(&active, &fixed, |taus| raw.push(taus.to_vec()));
        for taus in raw {
            let mut vs = carried.clone();
            for (i, tau) in taus.iter().enumerate() {
                vs.push(store.derived(store.pid(active[i]), tau)?);
            }
            out.insert(Clique::new(store, vs));
        }
    }
    Ok(out.into_iter().collect())
}

fn complete_base(store: &mut VertexStore, task: &TaskSpec, set: &[VertexId]) -> Vec<Clique> {
    let n = task.n as usize;
    let mut slots: Vec<Option<VertexId>> = vec![None; n];
    for &v in set {
        slots[store.pid(v).index()] = Some(v);
    }
    let mut out = Vec::new();
    let mut cur: Vec<VertexId> = Vec::with_capacity(n);
    fn rec(
        i: usize,
        slots: &[Option<VertexId>],
        task: &TaskSpec,
        store: &mut VertexStore,
        cur: &mut Vec<VertexId>,
        out: &mut Vec<Clique>,
    ) {
        if i == slots.len() {
            out.push(Clique(cur.clone().into_boxed_slice()));
            return;
        }
        match slots[i] {
            Some(v) => {
                cur.push(v);
                rec(i + 1, slots, task, store, cur, out);
                cur.pop();
            }
            None => {
                for a in task.values() {
                    let v = store.base(ProcessId::from_index(i), a);
                    cur.push(v);
                    rec(i + 1, slots, task, store, cur, out);
                    cur.pop();
                }
            }
        }
    }
    rec(0, &slots, task, store, &mut cur, &mut out);
    out
}

/// Vertices adjacent to `v` in `G_r`, sorted.
pub fn neighbors<D: Delta + ?Sized>(
    store: &mut VertexStore,
    delta: &D,
    task: &TaskSpec,
    v: VertexId,
    r: u32,
) -> Result<Vec<VertexId>, CoreError> {
    let mut out = BTreeSet::new();
    for c in star(store, delta, task, &[v], r)? {
        out.extend(c.vertices().iter().copied().filter(|&w| w != v));
    }
    Ok(out.into_iter().collect())
}
