//! Prover campaigns driven from the command line.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ebp_core::adversary::{Adversary, AdversaryConfig, DeltaSnapshot};
use ebp_core::checker::paranoid;
use ebp_core::harness::{MockProtocol, Protocol, Session};
use ebp_core::prover::*;
use ebp_core::TaskSpec;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyName {
    Random,
    Chain,
    Valency,
    Exhaustive,
    Scripted,
    Finisher,
}

/// Which protocol answers the prover.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolName {
    Adversary,
    /// Every process outputs its own input after one round.
    OwnInput,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunConfig {
    pub n: u8,
    pub k: u8,
    pub seed: u64,
    pub strategy: StrategyName,
    pub protocol: ProtocolName,
    pub budgets: Budgets,
    pub max_chain: u64,
    pub max_level: u32,
    pub max_explore: usize,
    pub script: Option<PathBuf>,
    pub audit: bool,
    pub wall_time: bool,
}

impl RunConfig {
    pub fn new(n: u8, k: u8, strategy: StrategyName) -> Self {
        RunConfig {
            n,
            k,
            seed: 0,
            strategy,
            protocol: ProtocolName::Adversary,
            budgets: Budgets::default(),
            max_chain: 10_000,
            max_level: AdversaryConfig::default().max_level,
            max_explore: AdversaryConfig::default().max_explore,
            script: None,
            audit: true,
            wall_time: false,
        }
    }
}

pub struct RunOutput {
    pub report: RunReport,
    pub transcript: String,
    /// Final protocol map; only the adversary has one.
    pub delta: Option<DeltaSnapshot>,
}

impl RunOutput {
    /// 0 when the adversary survived consistently, 1 when the prover won,
    /// 2 on an internal invariant failure.
    pub fn exit_code(&self) -> u8 {
        if self.report.internal_failure() {
            2
        } else if self.report.prover_won() {
            1
        } else {
            0
        }
    }
}

pub fn new_protocol(task: TaskSpec, which: ProtocolName, config: AdversaryConfig) -> Result<Box<dyn Protocol>, String> {
    Ok(match which {
        ProtocolName::Adversary => Box::new(Adversary::with_config(task, config).map_err(|e| e.to_string())?),
        ProtocolName::OwnInput => Box::new(MockProtocol::own_input(task)),
    })
}

fn strategy(cfg: &RunConfig) -> Result<Box<dyn Strategy>, String> {
    Ok(match cfg.strategy {
        StrategyName::Random => Box::new(RandomProver::new(cfg.seed, RandomWeights::default())),
        StrategyName::Chain => Box::new(ChainProver::new(cfg.seed, cfg.max_chain)),
        StrategyName::Valency => Box::new(ValencyProver::new(cfg.seed)),
        StrategyName::Exhaustive => Box::new(ExhaustiveProver::new(2)),
        StrategyName::Finisher => Box::new(Finisher::new()),
        StrategyName::Scripted => {
            let path = cfg.script.as_ref().ok_or("the scripted strategy needs --script")?;
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            let script = ScriptedProver::from_jsonl(&text).map_err(|e| format!("{}: {e}", path.display()))?;
            // Whatever the script leaves unfinished is driven to the end.
            Box::new(Sequence::new(vec![Box::new(script), Box::new(Finisher::new())]))
        }
    })
}

pub fn execute(cfg: &RunConfig) -> Result<RunOutput, String> {
    let task = TaskSpec::new(cfg.n, cfg.k).map_err(|e| e.to_string())?;
    if cfg.budgets.max_queries == 0 || cfg.budgets.max_phases == 0 || cfg.max_chain == 0 {
        return Err("budgets must be positive".into());
    }
    let config = AdversaryConfig { max_level: cfg.max_level, max_explore: cfg.max_explore };
    let mut session = Session::new(new_protocol(task, cfg.protocol, config)?);
    let mut strat = strategy(cfg)?;
    let started = Instant::now();
    // The audit checks the adversary's invariants; a fixed protocol has
    // none, and a violation there is the prover's win.
    let audit = cfg.audit && cfg.protocol == ProtocolName::Adversary;
    let mut report = if audit {
        run_strategy(&mut session, strat.as_mut(), &cfg.budgets, &mut paranoid)
    } else {
        run_strategy(&mut session, strat.as_mut(), &cfg.budgets, &mut no_audit)
    };
    if cfg.wall_time {
        report.wall_time_ms = Some(started.elapsed().as_millis() as u64);
    }
    Ok(RunOutput { report, transcript: session.transcript_jsonl(), delta: session.adversary().map(|a| a.snapshot()) })
}

/// `<stem>.transcript.jsonl` and `<stem>.delta.json` next to the report.
pub fn sibling(report: &Path, suffix: &str) -> PathBuf {
    let stem = report.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    report.with_file_name(format!("{stem}.{suffix}"))
}

/// The final-map file written next to a transcript by `run`.
pub fn delta_for_transcript(transcript: &Path) -> PathBuf {
    let name = transcript.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let stem = name.strip_suffix(".transcript.jsonl").or_else(|| name.strip_suffix(".jsonl")).unwrap_or(&name);
    transcript.with_file_name(format!("{stem}.delta.json"))
}

pub fn write_outputs(out: &RunOutput, report_path: &Path) -> std::io::Result<()> {
    let json = serde_json::to_string_pretty(&out.report).expect("report serializes");
    std::fs::write(report_path, json + "\n")?;
    std::fs::write(sibling(report_path, "transcript.jsonl"), &out.transcript)?;
    if let Some(d) = &out.delta {
        let json = serde_json::to_string(d).expect("snapshot serializes");
        std::fs::write(sibling(report_path, "delta.json"), json + "\n")?;
    }
    Ok(())
}
