//! Per-session telemetry records.

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TelemetryKind {
    NlEdit,
    NlWidget,
    WidgetInteract,
    Toggle,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryEvent {
    pub ts_ms: u64,
    pub kind: TelemetryKind,
    pub payload: Value,
    pub latency_ms: u64,
    pub retries: u32,
}

/// JSON-lines rendering, one event per line.
pub fn to_jsonl(events: &[TelemetryEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("telemetry serializes"));
        out.push('\n');
    }
    out
}
