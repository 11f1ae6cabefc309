//! Chart and widget synthesis with conversation repair and one fresh retry.
//!
//! Each attempt opens a new conversation. When a reply fails its checks, the
//! error goes back into the same conversation once; if the repaired reply
//! also fails, a second attempt starts from scratch with the same budget.

pub mod prompts;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::analysis::markup::parse_fragment;
use crate::analysis::{post_process, AnalysisReport, Finding, RenameMap};
use crate::chart::{normalize_dates, validate_spec, validate_spec_with_columns, ChartSpec, DateRepair, DATA_REF_NAME};
use crate::codeblock::extract_code_block;
use crate::data::Column;
use crate::gateway::{GatewayError, LlmGateway};
use crate::sandbox::smoke_test;
use crate::summary::DataSummary;
use crate::widget::Widget;

pub use prompts::{OutputContract, PromptBundle, PROMPT_VERSION};

pub const MAX_ATTEMPTS: u32 = 2;
pub const MAX_REPAIRS_PER_ATTEMPT: u32 = 1;

/// Prefix of the command derived for the widget that accompanies a chart
/// edit.
pub const AUTO_WIDGET_PREFIX: &str = "widget to adjust:";
const AUTO_WIDGET_MAX_PATHS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    /// Opening user message of an attempt.
    Prompt,
    Reply,
    RepairRequest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub attempt: u32,
    pub kind: EntryKind,
    pub content: String,
}

/// Counters derived from a transcript.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryCounts {
    pub attempts: u32,
    /// Repair requests in the final attempt.
    pub repair_rounds: u32,
    /// Model calls over all attempts.
    pub llm_calls: u32,
}

impl RetryCounts {
    pub fn from_transcript(transcript: &[TranscriptEntry]) -> Self {
        let attempts = transcript.iter().map(|e| e.attempt).max().unwrap_or(0);
        let repair_rounds = transcript
            .iter()
            .filter(|e| e.attempt == attempts && e.kind == EntryKind::RepairRequest)
            .count() as u32;
        let llm_calls = transcript.iter().filter(|e| e.kind == EntryKind::Reply).count() as u32;
        Self {
            attempts,
            repair_rounds,
            llm_calls,
        }
    }

    /// Automatic retries: model calls beyond the first.
    pub fn retries(&self) -> u32 {
        self.llm_calls.saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOutcome<T> {
    pub result: T,
    pub attempts: u32,
    pub repair_rounds: u32,
    pub llm_calls: u32,
    pub transcript: Vec<TranscriptEntry>,
    pub prompt_version: String,
}

impl<T> SynthesisOutcome<T> {
    pub fn counts(&self) -> RetryCounts {
        RetryCounts {
            attempts: self.attempts,
            repair_rounds: self.repair_rounds,
            llm_calls: self.llm_calls,
        }
    }

    pub fn retries(&self) -> u32 {
        self.counts().retries()
    }

    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> SynthesisOutcome<U> {
        SynthesisOutcome {
            result: f(self.result),
            attempts: self.attempts,
            repair_rounds: self.repair_rounds,
            llm_calls: self.llm_calls,
            transcript: self.transcript,
            prompt_version: self.prompt_version,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartResult {
    pub chart: ChartSpec,
    pub repairs: Vec<DateRepair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidgetResult {
    pub widget: Widget,
    pub renames: RenameMap,
    /// Warning findings of the accepted widget.
    pub warnings: Vec<Finding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exhausted {
    pub attempts: u32,
    pub repair_rounds: u32,
    pub llm_calls: u32,
    pub last_error: String,
    /// Error findings of the last rejected widget reply.
    pub findings: Vec<Finding>,
    pub transcript: Vec<TranscriptEntry>,
}

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("synthesis failed after {} attempts: {}", .0.attempts, .0.last_error)]
    Exhausted(Box<Exhausted>),
}

/// A rejected reply: message for the repair prompt plus any findings.
struct Rejection {
    message: String,
    findings: Vec<Finding>,
}

impl From<String> for Rejection {
    fn from(message: String) -> Self {
        Self {
            message,
            findings: Vec::new(),
        }
    }
}

fn run_with_budget<T>(
    llm: &LlmGateway,
    bundle: &PromptBundle,
    mut check: impl FnMut(&str) -> Result<T, Rejection>,
) -> Result<SynthesisOutcome<T>, SynthesisError> {
    let system = bundle.system_message();
    let mut transcript = Vec::new();
    let mut last: Option<Rejection> = None;
    for attempt in 1..=MAX_ATTEMPTS {
        let mut conv = llm.conversation(system.clone());
        let opening = bundle.user_message(attempt, last.as_ref().map(|r| r.message.as_str()));
        transcript.push(TranscriptEntry {
            attempt,
            kind: EntryKind::Prompt,
            content: opening.clone(),
        });
        conv.push_user(opening);
        let mut repairs = 0;
        loop {
            let reply = llm.complete(&conv)?;
            transcript.push(TranscriptEntry {
                attempt,
                kind: EntryKind::Reply,
                content: reply.clone(),
            });
            match check(&reply) {
                Ok(result) => {
                    let counts = RetryCounts::from_transcript(&transcript);
                    return Ok(SynthesisOutcome {
                        result,
                        attempts: counts.attempts,
                        repair_rounds: counts.repair_rounds,
                        llm_calls: counts.llm_calls,
                        transcript,
                        prompt_version: PROMPT_VERSION.to_string(),
                    });
                }
                Err(rejection) => {
                    tracing::debug!(attempt, repairs, error = %rejection.message, "reply rejected");
                    let repair = repairs < MAX_REPAIRS_PER_ATTEMPT;
                    if repair {
                        repairs += 1;
                        let request = bundle.repair_message(&rejection.message);
                        transcript.push(TranscriptEntry {
                            attempt,
                            kind: EntryKind::RepairRequest,
                            content: request.clone(),
                        });
                        conv.push_assistant(reply);
                        conv.push_user(request);
                    }
                    last = Some(rejection);
                    if !repair {
                        break;
                    }
                }
            }
        }
    }
    let counts = RetryCounts::from_transcript(&transcript);
    let last = last.expect("an attempt ran");
    Err(SynthesisError::Exhausted(Box::new(Exhausted {
        attempts: counts.attempts,
        repair_rounds: counts.repair_rounds,
        llm_calls: counts.llm_calls,
        last_error: last.message,
        findings: last.findings,
        transcript,
    })))
}

/// Columns of the summarized dataset, for field checks.
pub fn summary_columns(summary: &DataSummary) -> Vec<Column> {
    summary
        .columns
        .iter()
        .map(|c| Column {
            name: c.stats.name.clone(),
            atomic_type: c.stats.atomic_type,
        })
        .collect()
}

/// Reply checks for charts: extract, parse, bind the data reference,
/// repair dates, validate against the schema and the dataset's columns.
pub fn check_chart_reply(reply: &str, columns: &[Column]) -> Result<ChartResult, String> {
    let block = extract_code_block(reply, "json").map_err(|e| e.to_string())?;
    let value: Value = serde_json::from_str(&block).map_err(|e| format!("invalid JSON: {e}"))?;
    let Value::Object(mut doc) = value else {
        return Err("the specification must be a JSON object".into());
    };
    doc.insert("data".into(), serde_json::json!({ "name": DATA_REF_NAME }));
    let chart = ChartSpec::from_value(Value::Object(doc)).expect("object");
    let (chart, repairs) = normalize_dates(&chart);
    let report = validate_spec_with_columns(&chart, columns);
    if !report.ok {
        return Err(format!("the specification is not valid:\n{}", report.describe()));
    }
    Ok(ChartResult { chart, repairs })
}

pub fn synthesize_chart(
    summary: &DataSummary,
    command: &str,
    existing: Option<&ChartSpec>,
    llm: &LlmGateway,
) -> Result<SynthesisOutcome<ChartResult>, SynthesisError> {
    if command.trim().is_empty() {
        return Err(SynthesisError::InvalidRequest("command is empty".into()));
    }
    let bundle = PromptBundle::for_chart(summary, command, existing);
    let columns = summary_columns(summary);
    run_with_budget(llm, &bundle, |reply| check_chart_reply(reply, &columns).map_err(Rejection::from))
}

/// Reply checks for widgets: both blocks, the static pipeline, then the
/// sandbox smoke test.
pub fn check_widget_reply(
    reply: &str,
    widget_id: &str,
    command: &str,
    chart: &ChartSpec,
    existing_ids: &BTreeSet<String>,
) -> Result<WidgetResult, (String, Vec<Finding>)> {
    let plain = |m: String| (m, Vec::new());
    let markup = extract_code_block(reply, "html").map_err(|e| plain(e.to_string()))?;
    let script = extract_code_block(reply, "javascript")
        .or_else(|_| extract_code_block(reply, "js"))
        .map_err(|_| plain("missing code block javascript".into()))?;
    let processed = post_process(&markup, &script, existing_ids, chart);
    if !processed.report.ok {
        return Err(failed_report("the widget failed static checks", &processed.report));
    }
    let title = widget_title(&processed.markup).unwrap_or_else(|| command.trim().to_string());
    let widget = Widget::new(
        widget_id,
        title,
        processed.markup,
        processed.callback_source,
        processed.is_transform_widget,
    );
    let smoke = smoke_test(&widget, chart);
    if !smoke.ok {
        return Err(failed_report("the widget failed when run with probe inputs", &smoke));
    }
    let warnings = processed.report.findings.into_iter().chain(smoke.findings).collect();
    Ok(WidgetResult {
        widget,
        renames: processed.renames,
        warnings,
    })
}

fn failed_report(what: &str, report: &AnalysisReport) -> (String, Vec<Finding>) {
    (format!("{what}:\n{}", report.describe_errors()), report.errors().cloned().collect())
}

/// `data-widget-title` of the fragment root, unless left as the template
/// placeholder.
pub fn widget_title(markup: &str) -> Option<String> {
    let fragment = parse_fragment(markup).ok()?;
    let title = fragment.root().attr_value("data-widget-title")?.trim().to_string();
    (!title.is_empty() && title != "TITLE").then_some(title)
}

pub fn synthesize_widget(
    summary: &DataSummary,
    chart: &ChartSpec,
    command: &str,
    widget_id: &str,
    existing_ids: &BTreeSet<String>,
    llm: &LlmGateway,
) -> Result<SynthesisOutcome<WidgetResult>, SynthesisError> {
    if command.trim().is_empty() {
        return Err(SynthesisError::InvalidRequest("command is empty".into()));
    }
    let report = validate_spec(chart);
    if !report.ok {
        return Err(SynthesisError::InvalidRequest(format!("current chart is not valid:\n{}", report.describe())));
    }
    let bundle = PromptBundle::for_widget(summary, chart, command);
    run_with_budget(llm, &bundle, |reply| {
        check_widget_reply(reply, widget_id, command, chart, existing_ids)
            .map_err(|(message, findings)| Rejection { message, findings })
    })
}

/// Leaf pointers whose values differ between two charts, `data` excluded.
pub fn changed_paths(before: &ChartSpec, after: &ChartSpec) -> Vec<String> {
    let mut out = Vec::new();
    let a = before.to_value();
    let b = after.to_value();
    diff(&a, &b, &mut String::new(), &mut out);
    out.retain(|p| p != "/data" && !p.starts_with("/data/"));
    out
}

fn diff(a: &Value, b: &Value, path: &mut String, out: &mut Vec<String>) {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let keys: BTreeSet<&String> = x.keys().chain(y.keys()).collect();
            // Keep document order of the newer chart first.
            let mut ordered: Vec<&String> = y.keys().collect();
            ordered.extend(x.keys().filter(|k| !y.contains_key(*k)));
            debug_assert_eq!(ordered.len(), keys.len());
            for k in ordered {
                let len = path.len();
                path.push('/');
                path.push_str(&k.replace('~', "~0").replace('/', "~1"));
                match (x.get(k), y.get(k)) {
                    (Some(va), Some(vb)) => diff(va, vb, path, out),
                    _ => out.push(path.clone()),
                }
                path.truncate(len);
            }
        }
        _ if a != b => out.push(path.clone()),
        _ => {}
    }
}

/// Command for the widget that accompanies a chart edit, or `None` when the
/// edit changed nothing.
pub fn auto_widget_command(before: &ChartSpec, after: &ChartSpec) -> Option<String> {
    let paths = changed_paths(before, after);
    if paths.is_empty() {
        return None;
    }
    let shown: Vec<&str> = paths.iter().take(AUTO_WIDGET_MAX_PATHS).map(String::as_str).collect();
    Some(format!("{AUTO_WIDGET_PREFIX} {}", shown.join(", ")))
}

#[cfg(test)]
mod tests;
