use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use dynavis_core::gateway::{LlmGateway, ReplayStore};
use dynavis_replay::{replay_file, ReplayError, ReplayOptions};
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "replay", about = "Replay a session script against recorded model replies")]
struct Args {
    /// Session script (JSON).
    #[arg(long)]
    script: PathBuf,
    /// Directory of recorded replies (`*.jsonl`).
    #[arg(long)]
    fixtures: PathBuf,
    /// Write the full JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Stop at the first failed step.
    #[arg(long)]
    fail_fast: bool,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let args = Args::parse();
    if !args.fixtures.is_dir() {
        eprintln!("error: fixture directory {} does not exist", args.fixtures.display());
        return ExitCode::from(2);
    }
    let store = match ReplayStore::open_dir(&args.fixtures) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let llm = Arc::new(LlmGateway::replay(Arc::new(store)));
    let opts = ReplayOptions {
        fail_fast: args.fail_fast,
    };
    let report = match replay_file(&args.script, llm, &opts) {
        Ok(r) => r,
        Err(e @ ReplayError::ReplayMiss { .. }) => {
            eprintln!("aborted: {e}");
            return ExitCode::from(3);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    for s in &report.steps {
        let status = if s.ok { "ok  " } else { "FAIL" };
        let detail = match (&s.error_class, &s.message) {
            (Some(c), Some(m)) => format!("  {c}: {}", m.lines().next().unwrap_or("")),
            _ => String::new(),
        };
        println!("{status} #{:<3} {}{detail}", s.index, s.op);
    }
    let m = &report.metrics;
    println!(
        "steps_run={} failures={} mean_retries={:.2} mean_latency_ms={:.1} error_classes={}",
        m.steps_run,
        m.failures,
        m.mean_retries,
        m.mean_latency_ms,
        serde_json::to_string(&m.error_class_counts).expect("map serializes")
    );
    if let Some(path) = &args.report {
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        if let Err(e) = std::fs::write(path, json + "\n") {
            eprintln!("error: cannot write {}: {e}", path.display());
            return ExitCode::from(2);
        }
    }
    if m.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
