use ebp_core::adversary::Adversary;
use ebp_core::checker::{audit_session, replay_transcript, ReplayError};
use ebp_core::codec::vertex_record;
use ebp_core::harness::{Action, Session, SessionError, Status};
use ebp_core::nis::apply_schedule;
use ebp_core::prover::{run_strategy, no_audit, Budgets, RandomProver, RandomWeights};
use ebp_core::{Configuration, DeltaMap, ProcessId, Schedule, TaskSpec, VertexStore};

fn p(i: u8) -> ProcessId {
    ProcessId(i)
}

fn session() -> Session {
    Session::new(Box::new(Adversary::new(TaskSpec::new(3, 2).unwrap()).unwrap()))
}

fn step(s: &mut Session, r: &str, q: u8) -> Configuration {
    let c = s.resolve(r).unwrap();
    s.step_query(&c, p(q)).unwrap()
}

#[test]
fn first_phase_offers_every_input_vector() {
    let s = session();
    assert_eq!(s.committed().len(), 27);
    assert_eq!(s.phase(), 1);
    assert_eq!(*s.status(), Status::Running);
}

#[test]
fn bad_queries_are_illegal() {
    let mut s = session();
    let c = s.resolve("@012:").unwrap();
    assert!(matches!(s.step_query(&c, p(0)), Err(SessionError::IllegalQuery(_))));
    assert!(matches!(s.step_query(&c, p(4)), Err(SessionError::IllegalQuery(_))));
    assert!(matches!(s.resolve("@012:1"), Err(SessionError::IllegalQuery(_))));
    assert!(matches!(s.resolve("@0x2:"), Err(SessionError::IllegalQuery(_))));
    let unknown = Action::Step { config: "deadbeef".into(), process: p(1) };
    assert!(matches!(s.execute(&unknown), Err(SessionError::IllegalQuery(_))));
    assert_eq!(s.queries(), 0);
    assert!(s.transcript().is_empty());
}

#[test]
fn commit_counts_and_fixes_inputs() {
    let mut s = session();
    step(&mut s, "@012:", 1);
    step(&mut s, "@012:1", 1);
    let c = s.resolve("@012:").unwrap();
    assert!(matches!(s.commit(&c, &Schedule(vec![p(1), p(2)])), Err(SessionError::NotReached)));
    assert!(matches!(s.commit(&c, &Schedule::default()), Err(SessionError::EmptySchedule)));
    assert_eq!(s.commit(&c, &Schedule(vec![p(1), p(1)])).unwrap(), 2);
    assert_eq!(s.queries(), 3);
    assert_eq!(s.phase(), 2);
    // p1's input is fixed to 0; the other two remain free.
    assert_eq!(s.committed().len(), 9);
    let kinds: Vec<&str> = s.transcript().iter().map(|r| r.kind.as_str()).collect();
    assert_eq!(kinds, ["step", "step", "commit", "finalize"]);
}

#[test]
fn fresh_adversary_passes_audit() {
    let mut s = session();
    let report = audit_session(&mut s);
    assert!(report.passed(), "{:?}", report.summary());
    for name in ["INV1", "INV2", "INV3", "INV4", "INV5", "INV6", "structure", "safety"] {
        assert!(report.check(name).is_some(), "{name}");
    }
}

#[test]
fn adjacent_outputs_fail_with_a_path() {
    let mut s = session();
    let adv = s.adversary_mut().unwrap();
    let t = adv.level();
    let store = adv.store_mut();
    let c0 = Configuration::initial(store, &[0, 1, 2]);
    let round: Vec<ProcessId> = [1, 2, 3, 1, 2, 3].map(p).to_vec();
    let all_rounds = Schedule(round.iter().copied().cycle().take(6 * t as usize).collect());
    let c = apply_schedule(store, &c0, &all_rounds, &DeltaMap::continue_everywhere()).unwrap();
    let (x, w) = (c.state(p(1)).vertex(), c.state(p(2)).vertex());
    adv.force_output(x, 0);
    adv.force_output(w, 1);
    let report = audit_session(&mut s);
    let inv5 = report.check("INV5").unwrap();
    assert!(!inv5.passed);
    assert!(inv5.witness.len() >= 2, "{inv5:?}");
}

fn random_run(seed: u64, queries: u64) -> Session {
    let mut s = session();
    let mut prover = RandomProver::new(seed, RandomWeights::default());
    run_strategy(&mut s, &mut prover, &Budgets { max_queries: queries, max_phases: 4 }, &mut no_audit);
    s
}

#[test]
fn untouched_transcript_replays() {
    let s = random_run(3, 150);
    let snap = s.adversary().unwrap().snapshot();
    let sum = replay_transcript(s.transcript(), &snap, 1_000_000).unwrap();
    assert_eq!(sum.records, s.transcript().len());
}

#[test]
fn altered_response_is_inconsistent() {
    let s = random_run(3, 150);
    let snap = s.adversary().unwrap().snapshot();
    let mut records = s.transcript().to_vec();
    let seq = records.iter().rposition(|r| r.kind == "step").unwrap();
    let key = records[seq].response["configKey"].as_str().unwrap().to_string();
    let flipped = if key.starts_with('0') { format!("1{}", &key[1..]) } else { format!("0{}", &key[1..]) };
    records[seq].response["configKey"] = flipped.into();
    match replay_transcript(&records, &snap, 1_000_000) {
        Err(ReplayError::Inconsistent { seq: at, .. }) => assert_eq!(at, seq as u64),
        other => panic!("{other:?}"),
    }
}

#[test]
fn none_contradicted_by_edited_map() {
    let mut s = session();
    let c = s.resolve("@012:").unwrap();
    assert_eq!(s.output_query(&c, &[p(1)], 1).unwrap(), None);
    let mut snap = s.adversary().unwrap().snapshot();
    assert!(replay_transcript(s.transcript(), &snap, 100_000).is_ok());

    // Let p1's solo scan output the refused value.
    let mut scratch = VertexStore::new();
    let b = scratch.base(p(1), 0);
    let solo = scratch.derived(p(1), &[b]).unwrap();
    for v in [b, solo] {
        snap.vertices.insert(scratch.key(v).to_hex(), vertex_record(&scratch, v));
    }
    snap.outputs.push((scratch.key(solo).to_hex(), 1));
    match replay_transcript(s.transcript(), &snap, 100_000) {
        Err(ReplayError::Inconsistent { seq, .. }) => assert_eq!(seq, 0),
        other => panic!("{other:?}"),
    }
}
