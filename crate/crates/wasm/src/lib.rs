//! Browser bindings: build and draw a subdivision level, drive a chain of
//! step queries against the adversary, and show which vertices have seen
//! each value.

use ebp_core::adversary::Adversary;
use ebp_core::complex::export::{to_export, GraphExport};
use ebp_core::complex::graph::{build_level, Caps};
use ebp_core::harness::{Action, Session};
use ebp_core::prover::{no_audit, run_strategy, Budgets, ChainProver};
use ebp_core::{Delta, DeltaMap, TaskSpec, VertexStore};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Levels past this are too large to draw.
const MAX_DRAWN_LEVEL: u32 = 2;

#[derive(Serialize)]
struct Drawing {
    #[serde(flatten)]
    graph: GraphExport,
    /// Input values each vertex has seen, in vertex order.
    seen: Vec<Vec<u8>>,
}

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn task(n: u8, k: u8) -> Result<TaskSpec, JsError> {
    TaskSpec::new(n, k).map_err(js)
}

fn drawing<D: Delta + ?Sized>(store: &mut VertexStore, t: TaskSpec, delta: &D, level: u32) -> Result<String, JsError> {
    if level > MAX_DRAWN_LEVEL {
        return Err(js(format!("level {level} is too large to draw (at most {MAX_DRAWN_LEVEL})")));
    }
    let caps = Caps { max_level: MAX_DRAWN_LEVEL, max_cliques: 20_000 };
    let g = build_level(store, &t, delta, level, &caps).map_err(js)?;
    let graph = to_export(store, &g, delta);
    let seen = graph
        .vertices
        .iter()
        .map(|v| {
            let id = store.lookup_key(&ebp_core::VertexKey::parse(&v.key).expect("own key")).expect("interned");
            t.values().filter(|&a| store.has_seen(id, a)).collect()
        })
        .collect();
    serde_json::to_string(&Drawing { graph, seen }).map_err(js)
}

/// `G_level` of the protocol that never outputs, as JSON.
#[wasm_bindgen(js_name = subdivision)]
pub fn subdivision(n: u8, k: u8, level: u32) -> Result<String, JsError> {
    drawing(&mut VertexStore::new(), task(n, k)?, &DeltaMap::continue_everywhere(), level)
}

/// A prover session against the adversary.
#[wasm_bindgen]
pub struct Game {
    session: Session,
    seed: u64,
}

#[wasm_bindgen]
impl Game {
    #[wasm_bindgen(constructor)]
    pub fn new(n: u8, k: u8) -> Result<Game, JsError> {
        let adversary = Adversary::new(task(n, k)?).map_err(js)?;
        Ok(Game { session: Session::new(Box::new(adversary)), seed: 0 })
    }

    /// One step query; `config` is a configuration key or `@inputs:schedule`.
    /// Returns the recorded response.
    pub fn step(&mut self, config: &str, process: u8) -> Result<String, JsError> {
        let action = Action::Step { config: config.into(), process: ebp_core::ProcessId(process) };
        self.session.execute(&action).map_err(js)?;
        Ok(self.last_response())
    }

    /// Extends chains of step queries until `queries` more have been asked.
    /// Returns the chain statistics.
    pub fn chain(&mut self, queries: u32) -> Result<String, JsError> {
        self.seed += 1;
        let mut prover = ChainProver::new(self.seed, 10_000);
        let budgets = Budgets { max_queries: self.session.queries() + queries as u64, max_phases: 1 };
        let report = run_strategy(&mut self.session, &mut prover, &budgets, &mut no_audit);
        if let Some(e) = report.error {
            return Err(js(e));
        }
        serde_json::to_string(prover.chain_stats()).map_err(js)
    }

    /// Level, status, query count and the terminated vertices per value.
    pub fn summary(&self) -> String {
        let s = &self.session;
        let adv = s.adversary().expect("adversary session");
        let terminated: Vec<Vec<String>> =
            s.task().values().map(|a| adv.terminated(a).iter().map(|&v| s.store().key(v).to_hex()).collect()).collect();
        serde_json::json!({
            "level": adv.level(),
            "phase": s.phase(),
            "queries": s.queries(),
            "status": s.status(),
            "terminated": terminated,
        })
        .to_string()
    }

    /// The adversary's current level graph, or a lower one.
    pub fn graph(&mut self, level: u32) -> Result<String, JsError> {
        let t = self.session.task();
        let adv = self.session.adversary_mut().expect("adversary session");
        if level > adv.level() {
            return Err(js(format!("level {level} is not built yet (current level {})", adv.level())));
        }
        let delta = adv.delta().clone();
        drawing(adv.store_mut(), t, &delta, level)
    }

    pub fn transcript(&self) -> String {
        self.session.transcript_jsonl()
    }

    fn last_response(&self) -> String {
        self.session.transcript().last().map(|r| r.response.to_string()).unwrap_or_default()
    }
}
