//! DOT and JSON renderings of a level graph, ordered by vertex key.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::graph::LevelGraph;
use crate::delta::{Decision, Delta};
use crate::vertex::{Value, VertexId, VertexKind, VertexStore};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VertexExport {
    pub key: String,
    pub id: u8,
    pub level: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<Value>,
    pub scan: Vec<String>,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<Value>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphExport {
    pub level: u32,
    pub vertices: Vec<VertexExport>,
    pub cliques: Vec<Vec<String>>,
}

fn status_of<D: Delta + ?Sized>(store: &VertexStore, delta: &D, v: VertexId) -> (&'static str, Option<Value>) {
    match delta.decide(store, v) {
        Some(Decision::Continue) => ("active", None),
        Some(Decision::Output(a)) => ("terminated", Some(a)),
        None => ("undefined", None),
    }
}

pub fn to_export<D: Delta + ?Sized>(store: &VertexStore, g: &LevelGraph, delta: &D) -> GraphExport {
    let mut vertices: Vec<VertexExport> = g
        .vertices()
        .iter()
        .map(|&v| {
            let (status, output) = status_of(store, delta, v);
            let input = match store.kind(v) {
                VertexKind::Base { input, .. } => Some(*input),
                VertexKind::Derived { .. } => None,
            };
            VertexExport {
                key: store.key(v).to_hex(),
                id: store.pid(v).0,
                level: store.level(v),
                input,
                scan: store.scan(v).iter().map(|&m| store.key(m).to_hex()).collect(),
                status: status.to_string(),
                output,
            }
        })
        .collect();
    vertices.sort_by(|a, b| a.key.cmp(&b.key));
    let mut cliques: Vec<Vec<String>> = g
        .cliques()
        .iter()
        .map(|c| c.vertices().iter().map(|&v| store.key(v).to_hex()).collect())
        .collect();
    cliques.sort();
    GraphExport { level: g.level(), vertices, cliques }
}

pub fn to_json<D: Delta + ?Sized>(store: &VertexStore, g: &LevelGraph, delta: &D) -> String {
    serde_json::to_string_pretty(&to_export(store, g, delta)).expect("export serializes")
}

pub fn to_dot<D: Delta + ?Sized>(store: &VertexStore, g: &LevelGraph, delta: &D) -> String {
    let export = to_export(store, g, delta);
    let mut out = String::new();
    let _ = writeln!(out, "graph G{} {{", export.level);
    for v in &export.vertices {
        let status = match v.output {
            Some(a) => format!("terminated({a})"),
            None => v.status.clone(),
        };
        let _ = writeln!(out, "  \"{}\" [label=\"{}:{}:{}\"];", v.key, v.id, v.level, status);
    }
    let mut edges: Vec<(String, String)> = g
        .edges()
        .into_iter()
        .map(|(a, b)| {
            let (ka, kb) = (store.key(a).to_hex(), store.key(b).to_hex());
            if ka < kb { (ka, kb) } else { (kb, ka) }
        })
        .collect();
    edges.sort();
    for (a, b) in edges {
        let _ = writeln!(out, "  \"{a}\" -- \"{b}\";");
    }
    out.push_str("}\n");
    out
}
