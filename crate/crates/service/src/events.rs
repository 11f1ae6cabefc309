//! Session event log entries. Events carry command outcomes, never
//! requests to the model, so a log replays without the gateway.

use dynavis_core::analysis::{Finding, RenameMap};
use dynavis_core::chart::{ChartSpec, DateRepair};
use dynavis_core::data::DataTable;
use dynavis_core::summary::DataSummary;
use dynavis_core::synthesis::{SynthesisOutcome, TranscriptEntry};
use dynavis_core::widget::{TransformList, Widget};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::ErrorKind;

/// Counters and transcript of one synthesis run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisMeta {
    pub attempts: u32,
    pub repair_rounds: u32,
    pub llm_calls: u32,
    pub retries: u32,
    pub latency_ms: u64,
    pub prompt_version: String,
    pub transcript: Vec<TranscriptEntry>,
}

impl SynthesisMeta {
    pub fn of<T>(o: &SynthesisOutcome<T>, latency_ms: u64) -> Self {
        Self {
            attempts: o.attempts,
            repair_rounds: o.repair_rounds,
            llm_calls: o.llm_calls,
            retries: o.retries(),
            latency_ms,
            prompt_version: o.prompt_version.clone(),
            transcript: o.transcript.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartMeta {
    pub synthesis: SynthesisMeta,
    pub date_repairs: Vec<DateRepair>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auto_widget_command: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auto_widget: Option<WidgetMeta>,
    /// Why no widget accompanies this edit, when one was attempted.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auto_widget_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidgetMeta {
    pub synthesis: SynthesisMeta,
    pub renames: RenameMap,
    pub warnings: Vec<Finding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    SessionCreated {
        dataset: DataTable,
        summary: DataSummary,
        #[serde(default)]
        base_chart: Option<ChartSpec>,
        #[serde(default)]
        layout: Map<String, Value>,
    },
    ChartCommand {
        command: String,
        chart: ChartSpec,
        #[serde(default)]
        auto_widget: Option<Widget>,
        meta: ChartMeta,
    },
    WidgetCommand {
        command: String,
        widget: Widget,
        meta: WidgetMeta,
    },
    WidgetResult {
        widget_id: String,
        transforms: TransformList,
        chart: ChartSpec,
    },
    Toggle {
        widget_id: String,
        enabled: bool,
    },
    WidgetDeleted {
        widget_id: String,
    },
    /// A rejected request; recorded for audit, ignored on replay.
    CommandFailed {
        operation: String,
        #[serde(default)]
        command: Option<String>,
        error_kind: ErrorKind,
        message: String,
        #[serde(default)]
        findings: Vec<Finding>,
        #[serde(default)]
        transcript: Vec<TranscriptEntry>,
    },
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::SessionCreated { .. } => "session_created",
            Event::ChartCommand { .. } => "chart_command",
            Event::WidgetCommand { .. } => "widget_command",
            Event::WidgetResult { .. } => "widget_result",
            Event::Toggle { .. } => "toggle",
            Event::WidgetDeleted { .. } => "widget_deleted",
            Event::CommandFailed { .. } => "command_failed",
        }
    }
}

/// One line of a session's `events.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    /// 1-based position in the log.
    pub seq: u64,
    pub ts_ms: u64,
    #[serde(flatten)]
    pub event: Event,
}
