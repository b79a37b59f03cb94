use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ebp_core::adversary::{AdversaryConfig, DeltaSnapshot};
use ebp_core::checker::{correspondence_suite, lemma_suites, paranoid, replay_transcript};
use ebp_core::complex::export::{to_dot, to_json};
use ebp_core::complex::graph::{build_level, Caps};
use ebp_core::harness::TranscriptRecord;
use ebp_core::prover::{run_strategy, Budgets, RandomProver, RandomWeights};
use ebp_core::{DeltaMap, TaskSpec, VertexStore};
use ebp_cli::run::{self, ProtocolName, RunConfig, StrategyName};

/// Exit status for malformed invocations, kept apart from the game's own
/// 0/1/2 contract.
const USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "ebp", version, about = "Extension-based proof game for k-set agreement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a prover against a protocol and write a report.
    Run(RunArgs),
    /// Export the level graph G_t of the always-continue protocol.
    Export(ExportArgs),
    /// Run one of the checker suites.
    #[command(subcommand)]
    Check(CheckCommand),
    /// Serve the HTTP API and, optionally, a static client.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long, default_value_t = 3)]
    n: u8,
    #[arg(long, default_value_t = 2)]
    k: u8,
    #[arg(long, value_enum, default_value_t = StrategyName::Random)]
    strategy: StrategyName,
    #[arg(long, value_enum, default_value_t = ProtocolName::Adversary)]
    protocol: ProtocolName,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    max_queries: u64,
    #[arg(long, default_value_t = 16)]
    max_phases: u32,
    #[arg(long, default_value_t = 10_000)]
    max_chain: u64,
    /// Highest level the adversary may subdivide to.
    #[arg(long, default_value_t = AdversaryConfig::default().max_level)]
    max_level: u32,
    /// Configurations one search may visit before the query is refused as
    /// inconclusive.
    #[arg(long, default_value_t = AdversaryConfig::default().max_explore)]
    max_explore: usize,
    /// JSON-lines file of prover actions, for `--strategy scripted`.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Skip the invariant audit after every response.
    #[arg(long)]
    no_audit: bool,
    /// Record elapsed time in the report (makes reports differ run to run).
    #[arg(long)]
    wall_time: bool,
    /// Report path; the transcript and final map are written next to it.
    /// Without it the report goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Dot,
    Json,
}

#[derive(clap::Args)]
struct ExportArgs {
    #[arg(long, default_value_t = 2)]
    n: u8,
    #[arg(long, default_value_t = 2)]
    k: u8,
    #[arg(long, default_value_t = 0)]
    level: u32,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long, default_value_t = Caps::default().max_level)]
    max_level: u32,
    #[arg(long, default_value_t = Caps::default().max_cliques)]
    max_cliques: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum CheckCommand {
    /// Subdivision against the one-round oracle, then the seeded lemma suites.
    Lemmas {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        instances: usize,
    },
    /// Random provers with every invariant audited after every response.
    Invariants {
        #[arg(long, default_value_t = 3)]
        n: u8,
        #[arg(long, default_value_t = 2)]
        k: u8,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 1000)]
        max_queries: u64,
    },
    /// Replay a transcript against the final protocol map.
    Replay {
        transcript: PathBuf,
        /// Defaults to `<stem>.delta.json` next to the transcript.
        #[arg(long)]
        delta: Option<PathBuf>,
        #[arg(long, default_value_t = 4_000_000)]
        max_explore: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Export(args) => cmd_export(args),
        Command::Check(c) => cmd_check(c),
        Command::Serve { port, host, static_dir } => cmd_serve(&host, port, static_dir),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(USAGE)
        }
    }
}

fn cmd_run(a: RunArgs) -> Result<u8, String> {
    let cfg = RunConfig {
        n: a.n,
        k: a.k,
        seed: a.seed,
        strategy: a.strategy,
        protocol: a.protocol,
        budgets: Budgets { max_queries: a.max_queries, max_phases: a.max_phases },
        max_chain: a.max_chain,
        max_level: a.max_level,
        max_explore: a.max_explore,
        script: a.script,
        audit: !a.no_audit,
        wall_time: a.wall_time,
    };
    let out = run::execute(&cfg)?;
    match &a.out {
        Some(path) => {
            run::write_outputs(&out, path).map_err(|e| format!("{}: {e}", path.display()))?;
            let r = &out.report;
            let status = serde_json::to_value(&r.status).expect("status serializes");
            eprintln!("{} after {} queries, {} phases, level {}, stop={}", status["status"], r.queries, r.phases, r.final_level, r.stop);
        }
        None => emit(&(serde_json::to_string_pretty(&out.report).expect("report serializes") + "\n")),
    }
    if let Some(f) = out.report.invariant_failures.first() {
        eprintln!("invariant failure: {f}");
    }
    Ok(out.exit_code())
}

fn cmd_export(a: ExportArgs) -> Result<u8, String> {
    let task = TaskSpec::new(a.n, a.k).map_err(|e| e.to_string())?;
    let caps = Caps { max_level: a.max_level, max_cliques: a.max_cliques };
    if a.level > caps.max_level {
        return Err(format!("level {} exceeds the level cap {}", a.level, caps.max_level));
    }
    let mut store = VertexStore::new();
    let delta = DeltaMap::continue_everywhere();
    let g = build_level(&mut store, &task, &delta, a.level, &caps).map_err(|e| e.to_string())?;
    let text = match a.format {
        Format::Dot => to_dot(&store, &g, &delta),
        Format::Json => to_json(&store, &g, &delta) + "\n",
    };
    write_or_print(a.out.as_deref(), &text)?;
    Ok(0)
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<(), String> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| format!("{}: {e}", p.display())),
        None => {
            emit(text);
            Ok(())
        }
    }
}

/// Writes to stdout, ignoring a closed pipe (`ebp run | head`).
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn cmd_check(c: CheckCommand) -> Result<u8, String> {
    let mut failed = false;
    match c {
        CheckCommand::Lemmas { seed, instances } => {
            let mut suites = vec![correspondence_suite()];
            suites.extend(lemma_suites(seed, instances));
            for s in &suites {
                println!("{:<32} {:>6} instances  {}", s.name, s.instances, if s.passed() { "ok" } else { "FAILED" });
                for f in &s.failures {
                    println!("    {f}");
                }
                failed |= !s.passed();
            }
        }
        CheckCommand::Invariants { n, k, seeds, max_queries } => {
            let task = TaskSpec::new(n, k).map_err(|e| e.to_string())?;
            for seed in 0..seeds {
                let protocol = run::new_protocol(task, ProtocolName::Adversary, AdversaryConfig::default())?;
                let mut s = ebp_core::harness::Session::new(protocol);
                let mut p = RandomProver::new(seed, RandomWeights::default());
                let r = run_strategy(&mut s, &mut p, &Budgets { max_queries, max_phases: 16 }, &mut paranoid);
                let ok = !r.internal_failure() && !r.prover_won();
                println!("seed {seed:>3}: {} queries, level {}, stop={} {}", r.queries, r.final_level, r.stop, if ok { "ok" } else { "FAILED" });
                for f in &r.invariant_failures {
                    println!("    {f}");
                }
                failed |= !ok;
            }
        }
        CheckCommand::Replay { transcript, delta, max_explore } => {
            let delta_path = delta.unwrap_or_else(|| run::delta_for_transcript(&transcript));
            let text = std::fs::read_to_string(&transcript).map_err(|e| format!("{}: {e}", transcript.display()))?;
            let mut records = Vec::new();
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let r: TranscriptRecord = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
                records.push(r);
            }
            let snap_text = std::fs::read_to_string(&delta_path).map_err(|e| format!("{}: {e}", delta_path.display()))?;
            let snap: DeltaSnapshot = serde_json::from_str(&snap_text).map_err(|e| format!("{}: {e}", delta_path.display()))?;
            match replay_transcript(&records, &snap, max_explore) {
                Ok(sum) => println!("{}", serde_json::to_string(&sum).expect("summary serializes")),
                Err(e) => {
                    println!("{e}");
                    failed = true;
                }
            }
        }
    }
    Ok(if failed { 2 } else { 0 })
}

fn cmd_serve(host: &str, port: u16, static_dir: Option<PathBuf>) -> Result<u8, String> {
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port)).await.map_err(|e| format!("{host}:{port}: {e}"))?;
        eprintln!("listening on http://{}", listener.local_addr().map_err(|e| e.to_string())?);
        axum::serve(listener, ebp_cli::api::router(static_dir)).await.map_err(|e| e.to_string())
    })?;
    Ok(0)
}
