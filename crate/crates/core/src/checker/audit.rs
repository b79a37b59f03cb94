use serde::{Deserialize, Serialize};

use crate::adversary::{Adversary, AdversaryError};
use crate::complex::view::in_universe;
use crate::delta::Decision;
use crate::harness::{Provenance, Session};
use crate::nis::{check_task, Configuration, ProcessState};
use crate::vertex::{VertexId, VertexStore};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
    /// Canonical keys of the offending vertices, in path order where the
    /// failure is a short path.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub witness: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub level: u32,
    pub checks: Vec<InvariantCheck>,
}

impl InvariantReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&InvariantCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// One line per failed check, or `None` when everything passed.
    pub fn summary(&self) -> Option<String> {
        let lines: Vec<String> =
            self.checks.iter().filter(|c| !c.passed).map(|c| format!("{}: {}", c.name, c.detail)).collect();
        if lines.is_empty() { None } else { Some(lines.join("; ")) }
    }

    fn push(&mut self, name: &str, failure: Option<(String, Vec<String>)>) {
        let (passed, (detail, witness)) = match failure {
            None => (true, Default::default()),
            Some(f) => (false, f),
        };
        self.checks.push(InvariantCheck { name: name.to_string(), passed, detail, witness });
    }
}

fn keys(store: &VertexStore, vs: &[VertexId]) -> Vec<String> {
    vs.iter().map(|&v| store.key(v).to_hex()).collect()
}

/// Levels above which a terminated vertex is only checked at its creation
/// level. Subdividing never decreases distances, so a distance established
/// there still holds at `t`; the lemma suites check that property itself.
const LITERAL_GAP: u32 = 2;

/// Evaluates the six adversary invariants. `issued` lists every
/// configuration handed to the prover with its provenance.
pub fn audit_adversary(adv: &mut Adversary, issued: &[(Configuration, Provenance)]) -> Result<InvariantReport, AdversaryError> {
    let t = adv.level();
    let mut report = InvariantReport { level: t, checks: Vec::new() };
    let shape = adv.inv_level_shape();

    // Defined below t.
    let mut fail = shape.iter().find(|s| s.contains("continues below")).map(|s| (s.clone(), vec![]));
    if fail.is_none() {
        'outer: for (c, _) in issued {
            let roots: Vec<VertexId> = c.states.iter().map(|s| s.vertex()).collect();
            for v in adv.store().closure(&roots) {
                if adv.store().level(v) < t && adv.decide(v).is_none() {
                    fail = Some(("undefined below t".into(), keys(adv.store(), &[v])));
                    break 'outer;
                }
            }
        }
    }
    report.push("INV1", fail);

    // Nothing continues at t.
    let mut fail = shape.iter().find(|s| !s.contains("continues below")).map(|s| (s.clone(), vec![]));
    if fail.is_none() {
        'outer: for (c, _) in issued {
            for s in &c.states {
                let v = s.vertex();
                if adv.store().level(v) == t && adv.decide(v) == Some(Decision::Continue) {
                    fail = Some(("continue at level t".into(), keys(adv.store(), &[v])));
                    break 'outer;
                }
            }
        }
    }
    report.push("INV2", fail);

    report.push("INV3", provenance_depth(adv, issued));

    let mut fail = None;
    if let Some(&(a, x)) = adv.inv_terminated_near_unseen()?.first() {
        fail = Some((format!("terminated with {a} near a vertex that has not seen {a}"), keys(adv.store(), &[x])));
    }
    if fail.is_none() {
        'outer: for a in adv.task().values() {
            for x in adv.terminated(a).to_vec() {
                if t - adv.store().level(x).min(t) > LITERAL_GAP {
                    continue;
                }
                if !adv.store().has_seen(x, a) {
                    fail = Some((format!("terminated with {a} without having seen it"), keys(adv.store(), &[x])));
                    break 'outer;
                }
                let nbrs = adv.neighbors_at(x, t)?;
                if let Some(&w) = nbrs.iter().find(|&&w| !adv.store().has_seen(w, a)) {
                    fail = Some((format!("distance 1 from T({a}) to N({a})"), keys(adv.store(), &[x, w])));
                    break 'outer;
                }
            }
        }
    }
    report.push("INV4", fail);

    let mut fail = None;
    if let Some(&(x, w, d)) = adv.inv_close_outputs()?.first() {
        let r = adv.store().level(x).max(adv.store().level(w));
        let path = short_path(adv, x, w, r)?.unwrap_or(vec![x, w]);
        fail = Some((format!("distance {d} between differently terminated vertices"), keys(adv.store(), &path)));
    }
    if fail.is_none() {
        'outer: for a in 0..=adv.task().k {
            for b in a + 1..=adv.task().k {
                for x in adv.terminated(a).to_vec() {
                    for w in adv.terminated(b).to_vec() {
                        let hi = adv.store().level(x).max(adv.store().level(w));
                        if t - hi.min(t) > LITERAL_GAP {
                            continue;
                        }
                        if let Some(path) = short_path(adv, x, w, t)? {
                            let d = path.len() - 1;
                            fail = Some((format!("distance {d} between T({a}) and T({b})"), keys(adv.store(), &path)));
                            break 'outer;
                        }
                    }
                }
            }
        }
    }
    report.push("INV5", fail);

    let fail = adv.inv_refusals()?.first().map(|&(a, v)| {
        (format!("refused for {a}, has seen {a} and is not next to another value's terminated set"), keys(adv.store(), &[v]))
    });
    report.push("INV6", fail);
    Ok(report)
}

/// A path of length at most 2 between `x` and `w` in `G_r`.
fn short_path(adv: &mut Adversary, x: VertexId, w: VertexId, r: u32) -> Result<Option<Vec<VertexId>>, AdversaryError> {
    if x == w {
        return Ok(Some(vec![x]));
    }
    if adv.adjacent_at(x, w, r) {
        return Ok(Some(vec![x, w]));
    }
    let (hi, lo) = if adv.store().level(x) >= adv.store().level(w) { (x, w) } else { (w, x) };
    let nbrs = adv.neighbors_at(hi, r)?;
    Ok(nbrs.iter().find(|&&z| adv.adjacent_at(z, lo, r)).map(|&z| vec![hi, z, lo]))
}

/// Each process occurs in its configuration's schedule exactly as often as
/// its state's depth says, at most `2t+1` times, and an even count `2r`
/// means a decided state of `G_r`.
fn provenance_depth(adv: &Adversary, issued: &[(Configuration, Provenance)]) -> Option<(String, Vec<String>)> {
    let t = adv.level();
    let store = adv.store();
    for (c, prov) in issued {
        for (i, s) in c.states.iter().enumerate() {
            let q = crate::vertex::ProcessId::from_index(i);
            let count = prov.schedule.0.iter().filter(|&&p| p == q).count() as u32;
            let v = s.vertex();
            let depth = 2 * store.level(v) + u32::from(matches!(s, ProcessState::Updated(_)));
            let bad = if count > 2 * t + 1 {
                Some(format!("{q} occurs {count} times, more than 2t+1 = {}", 2 * t + 1))
            } else if count != depth {
                Some(format!("{q} occurs {count} times but its state has depth {depth}"))
            } else if count.is_multiple_of(2) && (!in_universe(store, adv.delta(), v, count / 2) || adv.decide(v).is_none()) {
                Some(format!("{q} occurs {count} times but its state is not a decided vertex of G_{}", count / 2))
            } else {
                None
            };
            if let Some(msg) = bad {
                return Some((msg, keys(store, &[v])));
            }
        }
    }
    None
}

/// Invariants plus the harness's own bookkeeping: committed and reached
/// sets replay from their provenance, and no queryable configuration
/// violates the task.
pub fn audit_session(session: &mut Session) -> InvariantReport {
    let issued = session.queryable();
    let mut report = match session.adversary_mut() {
        Some(adv) => match audit_adversary(adv, &issued) {
            Ok(r) => r,
            Err(e) => {
                let mut r = InvariantReport { level: adv.level(), checks: Vec::new() };
                r.push("audit", Some((e.to_string(), vec![])));
                r
            }
        },
        None => InvariantReport { level: session.protocol().level(), checks: Vec::new() },
    };
    report.push("structure", session.check_structure().map(|s| (s, vec![])));
    let task = session.task();
    let unsafe_config = issued.iter().find(|(c, _)| !check_task(session.store(), c, &task).is_ok());
    report.push("safety", unsafe_config.map(|(c, _)| (format!("{} violates the task", session.key_of(c)), vec![])));
    report
}

/// Audit hook for `run_strategy` that checks everything after every
/// response.
pub fn paranoid(session: &mut Session) -> Option<String> {
    audit_session(session).summary()
}
