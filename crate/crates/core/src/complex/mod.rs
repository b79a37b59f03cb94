//! Level graphs, the subdivision operator, and graph distances.

pub mod export;
pub mod graph;
pub mod view;

pub use export::{to_dot, to_export, to_json, GraphExport, VertexExport};
pub use graph::{
    build_g0, build_level, clique_to_configuration, compute_n, configuration_to_clique, correspondence_check,
    distance, has_seen, is_connected, subdivide_clique, subdivide_clique_cliques, subdivide_graph,
    subdivision_by_rules, Caps, Clique, Correspondence, Distance, LevelGraph,
};
