use std::path::Path;
use std::process::{Command, Output};

fn ebp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ebp")).args(args).current_dir(dir).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn random_run_survives_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["run", "--n", "3", "--k", "2", "--strategy", "random", "--seed", "7", "--max-queries", "500"];
    let a = ebp(&[&args[..], &["--out", "a.json"]].concat(), dir.path());
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    let b = ebp(&[&args[..], &["--out", "b.json"]].concat(), dir.path());
    assert_eq!(code(&b), 0);
    let p = dir.path();
    assert_eq!(read(p.join("a.json")), read(p.join("b.json")));
    assert_eq!(read(p.join("a.transcript.jsonl")), read(p.join("b.transcript.jsonl")));
    assert_eq!(read(p.join("a.delta.json")), read(p.join("b.delta.json")));

    let replay = ebp(&["check", "replay", "a.transcript.jsonl"], p);
    assert_eq!(code(&replay), 0, "{}", String::from_utf8_lossy(&replay.stdout));
}

#[test]
fn chain_run_reports_terminations() {
    let dir = tempfile::tempdir().unwrap();
    let o = ebp(&["run", "--n", "2", "--k", "2", "--strategy", "chain", "--max-chain", "5000"], dir.path());
    assert_eq!(code(&o), 0);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let stats = &report["strategyStats"];
    assert!(stats["terminated"].as_u64().unwrap() > 0, "{stats}");
    assert_eq!(stats["exhausted"], 0);
}

#[test]
fn bad_task_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = ebp(&["run", "--n", "3", "--k", "1"], dir.path());
    assert_eq!(code(&o), 64);
    assert!(String::from_utf8_lossy(&o.stderr).contains("k >= 2"));
    assert_eq!(code(&ebp(&["run", "--strategy", "nonsense"], dir.path())), 64);
}

#[test]
fn fixed_protocol_loses_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = ebp(&["run", "--protocol", "own-input", "--strategy", "valency", "--max-queries", "500"], dir.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn exports() {
    let dir = tempfile::tempdir().unwrap();
    let g0 = ebp(&["export", "--n", "2", "--k", "2", "--level", "0"], dir.path());
    let j: serde_json::Value = serde_json::from_slice(&g0.stdout).unwrap();
    assert_eq!(j["vertices"].as_array().unwrap().len(), 6);
    assert_eq!(j["cliques"].as_array().unwrap().len(), 9);

    let g1 = ebp(&["export", "--n", "2", "--k", "2", "--level", "1", "--format", "json"], dir.path());
    let golden = read(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/g1_n2_k2.json"));
    assert_eq!(String::from_utf8(g1.stdout).unwrap(), golden);

    let dot = ebp(&["export", "--level", "1", "--format", "dot"], dir.path());
    let text = String::from_utf8(dot.stdout).unwrap();
    assert!(text.starts_with("graph G1 {"));

    assert_eq!(code(&ebp(&["export", "--level", "99"], dir.path())), 64);
}

#[test]
fn replay_detects_an_edited_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&ebp(&["run", "--seed", "2", "--max-queries", "120", "--out", "r.json"], p)), 0);
    let text = read(p.join("r.transcript.jsonl"));
    let mut lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let i = lines.iter().position(|r| r["kind"] == "step").unwrap();
    lines[i]["response"]["states"][0]["kind"] = "terminated".into();
    let edited: String = lines.iter().map(|l| format!("{l}\n")).collect();
    std::fs::write(p.join("bad.jsonl"), edited).unwrap();
    let o = ebp(&["check", "replay", "bad.jsonl", "--delta", "r.delta.json"], p);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains(&format!("record {i}")));
}

#[test]
fn lemma_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = ebp(&["check", "lemmas", "--instances", "10"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("correspondence"));
}
