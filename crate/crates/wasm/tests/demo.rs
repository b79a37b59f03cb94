// Native runs of the happy paths; errors construct JS values and only work
// inside a browser.

use ebp_wasm::{subdivision, Game};
use serde_json::Value;

#[test]
fn first_subdivision_of_two_processes() {
    let g: Value = serde_json::from_str(&subdivision(2, 2, 1).unwrap()).unwrap();
    assert_eq!(g["vertices"].as_array().unwrap().len(), 24);
    assert_eq!(g["cliques"].as_array().unwrap().len(), 27);
    let seen = g["seen"].as_array().unwrap();
    assert_eq!(seen.len(), 24);
    // Solo views have seen one value, the rest have seen both inputs.
    let solo = seen.iter().filter(|s| s.as_array().unwrap().len() == 1).count();
    assert!(solo > 0 && solo < 24);
}

#[test]
fn chains_terminate_processes() {
    let mut game = Game::new(3, 2).unwrap();
    let first: Value = serde_json::from_str(&game.step("@012:", 1).unwrap()).unwrap();
    assert!(first["configKey"].is_string());
    let stats: Value = serde_json::from_str(&game.chain(200).unwrap()).unwrap();
    assert!(stats["terminated"].as_u64().unwrap() > 0);
    let summary: Value = serde_json::from_str(&game.summary()).unwrap();
    assert_eq!(summary["queries"], 201);
    let level = summary["level"].as_u64().unwrap() as u32;
    let g: Value = serde_json::from_str(&game.graph(level.min(1)).unwrap()).unwrap();
    assert!(!g["vertices"].as_array().unwrap().is_empty());
    assert_eq!(game.transcript().lines().count(), 201);
}
