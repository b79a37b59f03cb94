use std::collections::BTreeSet;

use ebp_core::codec::{config_key, decode_config, encode_config};
use ebp_core::nis::{apply_schedule, truncate_and_pad};
use ebp_core::{Configuration, DeltaMap, ProcessId, ProcessState, Schedule, VertexStore};
use proptest::prelude::*;

fn inputs() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..3, 3)
}

fn schedule() -> impl Strategy<Value = Schedule> {
    prop::collection::vec(1u8..=3, 0..24).prop_map(|v| Schedule(v.into_iter().map(ProcessId).collect()))
}

fn run(store: &mut VertexStore, inputs: &[u8], alpha: &Schedule) -> Configuration {
    let c = Configuration::initial(store, inputs);
    apply_schedule(store, &c, alpha, &DeltaMap::continue_everywhere()).expect("continue everywhere is total")
}

proptest! {
    #[test]
    fn encoding_round_trips_through_a_fresh_store(xs in inputs(), alpha in schedule()) {
        let mut a = VertexStore::new();
        let c = run(&mut a, &xs, &alpha);
        let rec = encode_config(&a, &c);
        let mut b = VertexStore::new();
        let back = decode_config(&mut b, &rec).unwrap();
        prop_assert_eq!(config_key(&b, &back), rec.key.clone());
        prop_assert_eq!(encode_config(&b, &back), rec);
    }

    #[test]
    fn execution_is_deterministic(xs in inputs(), alpha in schedule()) {
        let mut a = VertexStore::new();
        let mut b = VertexStore::new();
        // Intern some unrelated vertices first so ids differ between stores.
        run(&mut b, &[2, 2, 2], &Schedule(vec![ProcessId(3), ProcessId(3)]));
        let ca = run(&mut a, &xs, &alpha);
        let cb = run(&mut b, &xs, &alpha);
        prop_assert_eq!(config_key(&a, &ca), config_key(&b, &cb));
    }

    #[test]
    fn scans_carry_full_information(xs in inputs(), alpha in schedule()) {
        let mut s = VertexStore::new();
        let c = run(&mut s, &xs, &alpha);
        for st in &c.states {
            let v = st.vertex();
            if s.level(v) == 0 {
                continue;
            }
            let prev = s.own_prev(v).expect("scan contains own previous state");
            prop_assert_eq!(s.level(prev) + 1, s.level(v));
            prop_assert!(s.scan(v).contains(&prev));
            for &m in s.scan(v) {
                prop_assert!(s.has_seen(v, s.input(m)));
                prop_assert_eq!(s.seen_mask(m) & !s.seen_mask(v), 0);
            }
        }
    }

    #[test]
    fn truncation_preserves_the_chosen_views(xs in inputs(), alpha in schedule(), r in 1u32..3) {
        let mut s = VertexStore::new();
        let d = DeltaMap::continue_everywhere();
        let c = Configuration::initial(&mut s, &xs);
        let end = apply_schedule(&mut s, &c, &alpha, &d).unwrap();
        let procs: BTreeSet<ProcessId> = (1..=3)
            .map(ProcessId)
            .filter(|&q| matches!(end.state(q), ProcessState::Scanned(v) if s.level(*v) == r))
            .collect();
        prop_assume!(!procs.is_empty());
        let beta = truncate_and_pad(&mut s, &c, &alpha, r, &procs, &d).unwrap();
        for q in 1..=3 {
            prop_assert_eq!(beta.occurrences(ProcessId(q)), 2 * r as usize);
        }
        let other = apply_schedule(&mut s, &c, &beta, &d).unwrap();
        for &q in &procs {
            prop_assert_eq!(other.state(q), end.state(q));
        }
    }
}
