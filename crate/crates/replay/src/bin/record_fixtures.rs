//! Regenerates the fixtures under `fixtures/` by running each fixture script
//! in record mode against the authored replies:
//! `llm/<name>/recorded.jsonl` holds the model replies and
//! `sessions/<name>/` the resulting event log and canonical state. `--check`
//! compares the replies instead of writing and fails on any difference.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use dynavis_core::gateway::RECORD_FILE_NAME;
use dynavis_replay::authored::{self, Recording};

#[derive(Debug, Parser)]
#[command(name = "record-fixtures", about = "Record replay fixtures from the authored replies")]
struct Args {
    /// Fixture root holding `scripts/`, `llm/` and `sessions/`.
    #[arg(long, default_value = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures"))]
    root: PathBuf,
    /// Compare against the committed recordings instead of writing.
    #[arg(long)]
    check: bool,
}

fn write(path: &Path, content: &str) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, content)
}

fn save(root: &Path, name: &str, rec: &Recording) -> std::io::Result<()> {
    write(&root.join("llm").join(name).join(RECORD_FILE_NAME), &rec.replies)?;
    let session = root.join("sessions").join(name);
    write(&session.join("events.jsonl"), &rec.events)?;
    write(&session.join("canonical.json"), &(rec.canonical.clone() + "\n"))
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut ok = true;
    for (name, replies) in authored::sets() {
        let rec = match authored::record(&args.root, name, replies) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("{name}: {e}");
                ok = false;
                continue;
            }
        };
        let count = rec.replies.lines().count();
        if args.check {
            let path = args.root.join("llm").join(name).join(RECORD_FILE_NAME);
            let committed = std::fs::read_to_string(&path).unwrap_or_default();
            if committed == rec.replies {
                println!("{name}: up to date ({count} replies)");
            } else {
                eprintln!("{name}: {} differs from the authored replies", path.display());
                ok = false;
            }
            continue;
        }
        match save(&args.root, name, &rec) {
            Ok(()) => println!("{name}: wrote {count} replies and {} events", rec.events.lines().count()),
            Err(e) => {
                eprintln!("{name}: {e}");
                ok = false;
            }
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
