//! `intentctl`: submit intents, inspect their records, drive the simulated
//! cloud and run the demo scenarios.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use intent_core::executor::FeedbackMode;
use intent_core::gateway::{
    run_demo, Engine, EngineConfig, GatewayError, Scenario, SubmitOptions,
};
use intent_core::twin::FaultSpec;

const DEFAULT_STATE_DIR: &str = "intent-state";

#[derive(Parser)]
#[command(name = "intentctl", version, about = "Intent-driven cloud management")]
struct Cli {
    /// Engine configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// State directory; overrides `persistence_dir`.
    #[arg(long, global = true)]
    state: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Submit an intent and fulfill it.
    Submit {
        text: String,
        #[arg(long)]
        definer: Option<String>,
        /// Queue drift events for a human instead of repairing them.
        #[arg(long)]
        no_autonomic: bool,
        #[arg(long)]
        feedback: Option<FeedbackMode>,
    },
    /// Print intent record summaries as JSON.
    Status { id: Option<String> },
    /// Render the policy trees of an intent.
    Tree {
        id: String,
        #[arg(long)]
        json: bool,
    },
    /// Inject a fault: `shutdown:<vm>` or `fail-next:<op>:<target>`.
    Inject { spec: FaultSpec },
    /// Advance the simulation clock.
    Tick {
        #[arg(default_value_t = 1)]
        n: u64,
    },
    /// List drift events.
    Drift {
        #[arg(long)]
        open: bool,
    },
    /// Print the twin snapshot as canonical JSON.
    Twin,
    /// Run a scenario on a fresh twin: fulfill, assure-1 or assure-2.
    Demo {
        scenario: Scenario,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<EngineConfig, GatewayError> {
    let mut cfg = match &cli.config {
        Some(p) => EngineConfig::load(p)?,
        None => EngineConfig::default(),
    };
    if let Some(dir) = &cli.state {
        cfg.persistence_dir = Some(dir.clone());
    } else if cfg.persistence_dir.is_none() {
        cfg.persistence_dir = Some(DEFAULT_STATE_DIR.into());
    }
    Ok(cfg)
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn record_summary(r: &intent_core::executor::IntentRecord) -> serde_json::Value {
    serde_json::json!({
        "id": r.id,
        "status": r.status().to_string(),
        "text": r.text,
        "definer": r.definer,
        "types": r.types,
        "policies": r.policy_count(),
        "trees": r.trees().count(),
        "terminal": r.latest_tree().map(|t| t.terminal.as_str()),
        "validation_findings": r.validation.as_ref().map(|v| v.findings.len()),
        "rehearsal_passed": r.rehearsal.as_ref().map(|o| o.passed),
        "open_drifts": r.drifts.iter().filter(|d| d.open).count(),
    })
}

fn run(cli: Cli) -> Result<(), GatewayError> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Demo { scenario, out } => {
            let mut cfg = cfg;
            cfg.persistence_dir = None;
            let mut engine = Engine::fresh(cfg)?;
            let report = run_demo(&mut engine, scenario)?;
            for t in &report.trees {
                println!("{t}");
            }
            println!(
                "{scenario}: {} policies (expected {}), {}, goal {}, {:.1?}",
                report.policies,
                report.expected,
                report.terminal.as_str(),
                if report.goal_holds { "holds" } else { "violated" },
                report.elapsed
            );
            if let Some(path) = out {
                std::fs::write(&path, json(&report))
                    .map_err(|e| GatewayError::Persistence(format!("{}: {e}", path.display())))?;
            }
            if !report.passed() {
                return Err(GatewayError::ScenarioMismatch {
                    scenario: scenario.to_string(),
                    detail: json(&report),
                });
            }
        }
        Command::Submit {
            text,
            definer,
            no_autonomic,
            feedback,
        } => {
            let mut engine = Engine::new(cfg)?;
            let opts = SubmitOptions {
                definer,
                autonomic_permission: no_autonomic.then_some(false),
                feedback_mode: feedback,
            };
            let id = engine.submit(&text, &opts)?;
            let rec = engine.record(&id).expect("just submitted");
            if let Some(t) = rec.latest_tree() {
                print!("{}", t.render());
            }
            println!("{id} {}", rec.status());
        }
        Command::Status { id } => {
            let engine = Engine::new(cfg)?;
            match id {
                Some(id) => {
                    let r = engine
                        .record(&id)
                        .ok_or(GatewayError::UnknownIntent(id))?;
                    println!("{}", json(&record_summary(r)));
                }
                None => {
                    let all: Vec<_> = engine.records().iter().map(record_summary).collect();
                    println!("{}", json(&all));
                }
            }
        }
        Command::Tree { id, json: as_json } => {
            let engine = Engine::new(cfg)?;
            let r = engine
                .record(&id)
                .ok_or(GatewayError::UnknownIntent(id))?;
            for t in r.trees() {
                if as_json {
                    println!("{}", t.to_json());
                } else {
                    print!("{}", t.render());
                }
            }
        }
        Command::Inject { spec } => {
            let mut engine = Engine::new(cfg)?;
            engine.inject(&spec)?;
            println!("injected {}", serde_json::to_string(&spec).expect("serializable"));
        }
        Command::Tick { n } => {
            let mut engine = Engine::new(cfg)?;
            let summary = engine.tick(n)?;
            println!("{}", json(&summary));
        }
        Command::Drift { open } => {
            let engine = Engine::new(cfg)?;
            let drifts: Vec<_> = engine.drifts().filter(|d| !open || d.open).collect();
            println!("{}", json(&drifts));
        }
        Command::Twin => {
            let engine = Engine::new(cfg)?;
            println!("{}", engine.twin().snapshot().to_json());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("intentctl: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
