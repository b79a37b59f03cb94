//! Acceptance campaign. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::{BTreeSet, HashSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ebp_core::adversary::{Adversary, DeltaSnapshot};
use ebp_core::checker::{correspondence_suite, lemma_suites, paranoid, replay_transcript};
use ebp_core::explore::{explore, Flow, Limits};
use ebp_core::harness::{Action, MockProtocol, Session, Status, TranscriptRecord};
use ebp_core::nis::{check_task, Configuration, Schedule};
use ebp_core::prover::*;
use ebp_core::vertex::ProcessId;
use ebp_core::TaskSpec;

const SEEDS: u64 = 10;
const REPLAY_EXPLORE: usize = 4_000_000;

struct Line {
    ok: bool,
    text: String,
}

fn report(n: usize, name: &str, started: Instant, ok: bool, detail: String) -> Line {
    let secs = started.elapsed().as_secs_f64();
    let verdict = if ok { "PASS" } else { "FAIL" };
    Line { ok, text: format!("[{verdict}] {n}. {name} ({secs:.1}s): {detail}") }
}

fn task() -> TaskSpec {
    TaskSpec::new(3, 2).expect("valid task")
}

fn fresh() -> Session {
    Session::new(Box::new(Adversary::new(task()).expect("adversary")))
}

fn snapshot(s: &Session) -> DeltaSnapshot {
    s.adversary().expect("adversary session").snapshot()
}

fn correspondence() -> Line {
    let t0 = Instant::now();
    let r = correspondence_suite();
    let detail = format!("{} instances, {} failures {:?}", r.instances, r.failures.len(), r.failures);
    report(1, "correspondence", t0, r.passed() && t0.elapsed() < Duration::from_secs(10), detail)
}

fn lemmas() -> Line {
    let t0 = Instant::now();
    let suites = lemma_suites(7, 200);
    let bad: Vec<_> = suites.iter().filter(|s| !s.passed()).map(|s| (s.name.clone(), s.failures.clone())).collect();
    let detail = suites.iter().map(|s| format!("{}={}", s.name, s.instances)).collect::<Vec<_>>().join(" ");
    let ok = bad.is_empty() && suites.iter().all(|s| s.instances >= 200);
    report(2, "lemma suite", t0, ok, if ok { detail } else { format!("{detail} failing {bad:?}") })
}

fn campaign(keep: &mut Vec<(String, Vec<TranscriptRecord>, DeltaSnapshot)>) -> Line {
    let t0 = Instant::now();
    let mut problems = Vec::new();
    let mut queries = 0;
    let mut levels = Vec::new();
    for seed in 0..SEEDS {
        let mut s = fresh();
        let mut p = RandomProver::new(seed, RandomWeights::default());
        let budgets = Budgets { max_queries: 1000, max_phases: 16 };
        let r = run_strategy(&mut s, &mut p, &budgets, &mut paranoid);
        queries += r.queries;
        levels.push(r.final_level);
        if r.prover_won() || r.internal_failure() || r.stop == "error" || r.stop == "cap" {
            problems.push(format!("seed {seed}: {:?} stop={} {:?} {:?}", r.status, r.stop, r.error, r.invariant_failures));
        }
        keep.push((format!("random seed {seed}"), s.transcript().to_vec(), snapshot(&s)));
    }
    let ok = problems.is_empty();
    let detail = format!("{queries} queries audited, final levels {levels:?}");
    report(3, "invariant campaign", t0, ok, if ok { detail } else { format!("{detail}; {problems:?}") })
}

fn chains(keep: &mut Vec<(String, Vec<TranscriptRecord>, DeltaSnapshot)>) -> Line {
    let t0 = Instant::now();
    let mut problems = Vec::new();
    let mut longest = 0;
    let mut total = 0;
    for seed in 0..SEEDS {
        let mut s = fresh();
        let mut p = ChainProver::new(seed, 10_000);
        let r = run_strategy(&mut s, &mut p, &Budgets { max_queries: 2000, max_phases: 16 }, &mut no_audit);
        let st = p.chain_stats().clone();
        longest = longest.max(st.max_chain);
        total += st.terminated;
        if st.exhausted > 0 || st.terminated == 0 || r.internal_failure() || r.stop == "error" {
            problems.push(format!("seed {seed}: {st:?} stop={} {:?}", r.stop, r.error));
        }
        keep.push((format!("chain seed {seed}"), s.transcript().to_vec(), snapshot(&s)));
    }
    let ok = problems.is_empty();
    let detail = format!("{total} chains terminated, max chain length {longest}");
    report(4, "chain termination", t0, ok, if ok { detail } else { format!("{detail}; {problems:?}") })
}

fn step(config: &str, p: u8) -> Action {
    Action::Step { config: config.into(), process: ProcessId(p) }
}

fn probing_script() -> Vec<Action> {
    let mut a = vec![
        step("@012:", 1),
        step("@012:1", 2),
        step("@012:12", 1),
        step("@012:121", 2),
        step("@012:", 3),
        step("@012:3", 3),
        step("@012:33", 1),
        step("@001:", 2),
        step("@001:2", 2),
        step("@210:", 3),
    ];
    let procs = vec![ProcessId(1), ProcessId(2)];
    for value in 0..3 {
        a.push(Action::Output { config: "@012:".into(), processes: procs.clone(), value });
    }
    a.push(Action::Output { config: "@012:33".into(), processes: vec![ProcessId(3)], value: 2 });
    a.push(Action::Commit { config: "@012:".into(), schedule: Schedule(vec![ProcessId(1), ProcessId(2), ProcessId(1), ProcessId(2)]) });
    a
}

fn full_game(keep: &mut Vec<(String, Vec<TranscriptRecord>, DeltaSnapshot)>) -> Line {
    let t0 = Instant::now();
    let mut s = fresh();
    let budgets = Budgets { max_queries: 10_000, max_phases: 16 };
    let probe = run_strategy(&mut s, &mut ScriptedProver::new(probing_script()), &budgets, &mut paranoid);
    if probe.stop == "error" || s.phase() != 2 {
        return report(5, "full game", t0, false, format!("probing failed: {:?} phase {}", probe.error, s.phase()));
    }
    let a2: Vec<Configuration> = s.committed().iter().map(|(_, c)| c.clone()).collect();
    let finish = run_strategy(&mut s, &mut Finisher::new(), &budgets, &mut paranoid);
    let mut problems = Vec::new();
    if finish.status != Status::ProverLoses {
        problems.push(format!("status {:?} stop={} {:?}", finish.status, finish.stop, finish.error));
    }

    // Every execution from A(2) under the final protocol.
    let tk = task();
    let adv = s.adversary_mut().expect("adversary session");
    let delta = adv.delta().clone();
    let procs: Vec<ProcessId> = (1..=tk.n).map(ProcessId).collect();
    let mut finals = HashSet::new();
    let mut horizon = false;
    for c in &a2 {
        let store = adv.store_mut();
        let res = explore(store, &delta, c, &procs, &Limits::unbounded(2_000_000), |store, cfg, _| {
            if cfg.is_final() && finals.insert(cfg.clone()) {
                let outs: BTreeSet<_> = cfg.outputs().into_iter().flatten().collect();
                let verdict = check_task(store, cfg, &tk);
                if !verdict.is_ok() || outs.len() > 2 {
                    problems.push(format!("{verdict:?} outputs {outs:?}"));
                }
            }
            Flow::Continue
        });
        match res {
            Ok(ex) => horizon |= ex.horizon_hit,
            Err(e) => problems.push(e.to_string()),
        }
    }
    if horizon {
        problems.push("a reachable state has no decision".into());
    }
    keep.push(("full game".into(), s.transcript().to_vec(), snapshot(&s)));
    let ok = problems.is_empty() && !finals.is_empty();
    let detail = format!(
        "{} queries, |A(2)|={}, {} final configurations checked, level {}",
        s.queries(),
        a2.len(),
        finals.len(),
        s.protocol().level()
    );
    problems.truncate(5);
    report(5, "full game", t0, ok, if ok { detail } else { format!("{detail}; {problems:?}") })
}

fn replays(keep: &[(String, Vec<TranscriptRecord>, DeltaSnapshot)]) -> Line {
    let t0 = Instant::now();
    let mut problems = Vec::new();
    let (mut records, mut nones, mut cuts) = (0, 0, 0);
    for (name, transcript, snap) in keep {
        match replay_transcript(transcript, snap, REPLAY_EXPLORE) {
            Ok(sum) => {
                records += sum.records;
                nones += sum.nones;
                cuts += sum.horizon_cuts;
            }
            Err(e) => problems.push(format!("{name}: {e}")),
        }
    }
    let ok = problems.is_empty() && keep.len() == 2 * SEEDS as usize + 1;
    let detail = format!("{} transcripts, {records} records, {nones} NONE answers re-verified ({cuts} cut at the final horizon)", keep.len());
    report(6, "replay consistency", t0, ok, if ok { detail } else { format!("{detail}; {problems:?}") })
}

fn non_vacuity() -> Line {
    let t0 = Instant::now();
    let mut s = Session::new(Box::new(MockProtocol::own_input(task())));
    let r = run_strategy(&mut s, &mut ValencyProver::new(1), &Budgets { max_queries: 500, max_phases: 16 }, &mut no_audit);
    let ok = r.prover_won() && r.queries <= 500;
    report(7, "adjudicator non-vacuity", t0, ok, format!("{:?} after {} queries", r.status, r.queries))
}

fn main() -> ExitCode {
    let mut keep = Vec::new();
    let lines = vec![
        correspondence(),
        lemmas(),
        campaign(&mut keep),
        chains(&mut keep),
        full_game(&mut keep),
        replays(&keep),
        non_vacuity(),
    ];
    for l in &lines {
        println!("{}", l.text);
    }
    let failed = lines.iter().filter(|l| !l.ok).count();
    println!("acceptance: {} of {} criteria passed", lines.len() - failed, lines.len());
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
