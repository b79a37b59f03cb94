use std::collections::BTreeMap;

use super::SuiteResult;
use crate::codec::config_key;
use crate::complex::graph::{build_g0, clique_to_configuration, subdivide_clique_cliques, Clique};
use crate::delta::{Decision, Delta, DeltaMap};
use crate::error::CoreError;
use crate::nis::{apply_schedule, Configuration, ProcessState, Schedule, TaskSpec};
use crate::vertex::VertexStore;

/// Every configuration reached from the round-aligned `c` by a schedule in
/// which each active process updates and scans exactly once. Enumerates all
/// words over the active processes and keeps those with two occurrences of
/// each, so it shares no code with the schedule generator in `nis`.
pub fn oracle_one_round<D: Delta + ?Sized>(
    store: &mut VertexStore,
    c: &Configuration,
    delta: &D,
) -> Result<Vec<Configuration>, CoreError> {
    if c.states.iter().any(|s| matches!(s, ProcessState::Updated(_))) {
        return Err(CoreError::MixedRounds);
    }
    let active = c.active();
    let m = active.len();
    let mut found = BTreeMap::new();
    let words = m.pow(2 * m as u32).max(1);
    for mut code in 0..words {
        let mut word = Vec::with_capacity(2 * m);
        for _ in 0..2 * m {
            word.push(active[code % m]);
            code /= m;
        }
        if active.iter().any(|q| word.iter().filter(|&p| p == q).count() != 2) {
            continue;
        }
        let end = apply_schedule(store, c, &Schedule(word), delta)?;
        found.insert(config_key(store, &end), end);
    }
    if m == 0 {
        found.insert(config_key(store, c), c.clone());
    }
    Ok(found.into_values().collect())
}

/// Number of distinct outcomes of one round with `m` active processes:
/// assignments of a scan set to each process that contain the process
/// itself and are pairwise nested. Counted by brute force over all subset
/// assignments.
pub fn round_outcomes(m: usize) -> usize {
    let subsets = 1usize << m;
    let mut count = 0;
    for mut code in 0..subsets.pow(m as u32) {
        let mut taus = Vec::with_capacity(m);
        for _ in 0..m {
            taus.push(code % subsets);
            code /= subsets;
        }
        let own = taus.iter().enumerate().all(|(i, &t)| t & (1 << i) != 0);
        let nested = taus.iter().all(|&a| taus.iter().all(|&b| a & b == a || a & b == b));
        if own && nested {
            count += 1;
        }
    }
    count
}

/// Subdivided cliques against the one-round oracle, for every clique of
/// `G_0` and of `G_1` and every pattern of terminated members.
pub fn correspondence_suite() -> SuiteResult {
    let mut out = SuiteResult::new("correspondence");
    for n in [2u8, 3] {
        let task = TaskSpec::new(n, 2).expect("valid task");
        let mut store = VertexStore::new();
        let g0 = build_g0(&mut store, &task);
        let open = DeltaMap::continue_everywhere();
        let mut cliques: Vec<Clique> = g0.cliques().to_vec();
        for sigma in g0.cliques() {
            match subdivide_clique_cliques(&mut store, sigma, &open) {
                Ok(cs) => cliques.extend(cs),
                Err(e) => out.record(false, || e.to_string()),
            }
        }
        for sigma in &cliques {
            for pattern in 0u32..(1 << n) {
                let mut delta = DeltaMap::continue_everywhere();
                for (i, &v) in sigma.vertices().iter().enumerate() {
                    if pattern & (1 << i) != 0 {
                        delta.set(v, Decision::Output(store.input(v)));
                    }
                }
                let r = compare(&mut store, sigma, &delta);
                let active = n as usize - pattern.count_ones() as usize;
                let ok = matches!(&r, Ok((a, b)) if a == b && a.len() == round_outcomes(active));
                out.record(ok, || format!("n={n} pattern={pattern:b} clique {:?}: {r:?}", key_of(&store, sigma)));
            }
        }
    }
    out
}

type Sides = (Vec<String>, Vec<String>);

fn compare(store: &mut VertexStore, sigma: &Clique, delta: &DeltaMap) -> Result<Sides, CoreError> {
    let c = clique_to_configuration(store, sigma, delta)?;
    let left: Vec<String> = oracle_one_round(store, &c, delta)?.iter().map(|c| config_key(store, c)).collect();
    let mut right = Vec::new();
    for sc in subdivide_clique_cliques(store, sigma, delta)? {
        let rc = clique_to_configuration(store, &sc, delta)?;
        right.push(config_key(store, &rc));
    }
    right.sort();
    right.dedup();
    Ok((left, right))
}

fn key_of(store: &VertexStore, sigma: &Clique) -> Vec<String> {
    sigma.vertices().iter().map(|&v| store.key(v).to_hex()[..8].to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vertex::ProcessId;

    #[test]
    fn round_outcome_counts() {
        assert_eq!((0..5).map(round_outcomes).collect::<Vec<_>>(), vec![1, 1, 3, 19, 207]);
    }

    #[test]
    fn four_process_round_matches_count() {
        let mut s = VertexStore::new();
        let c = Configuration::initial(&mut s, &[0, 1, 2, 0]);
        let got = oracle_one_round(&mut s, &c, &DeltaMap::continue_everywhere()).unwrap();
        assert_eq!(got.len(), round_outcomes(4));
    }

    #[test]
    fn two_active_processes_have_three_outcomes() {
        let mut s = VertexStore::new();
        let c = Configuration::initial(&mut s, &[0, 1]);
        let got = oracle_one_round(&mut s, &c, &DeltaMap::continue_everywhere()).unwrap();
        assert_eq!(got.len(), 3);
    }

    #[test]
    fn all_terminated_is_a_fixed_point() {
        let mut s = VertexStore::new();
        let c0 = Configuration::initial(&mut s, &[0, 1]);
        let mut d = DeltaMap::continue_everywhere();
        let mut c = c0.clone();
        for q in [ProcessId(1), ProcessId(2)] {
            let v = c.state(q).vertex();
            d.set(v, Decision::Output(s.input(v)));
            c.states[q.index()] = ProcessState::Terminated(v, s.input(v));
        }
        let got = oracle_one_round(&mut s, &c, &d).unwrap();
        assert_eq!(got, vec![c]);
    }
}
