//! Executes a session script through the service engine, running widget
//! callbacks in the sandbox the way the browser would.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use dynavis_core::gateway::LlmGateway;
use dynavis_core::sandbox::{run_callback_in, SandboxLimits, SyntheticEvent, WidgetDom};
use dynavis_core::synthesis::{RetryCounts, TranscriptEntry};
use dynavis_service::events::{Event, LogEntry};
use dynavis_service::{Engine, EngineConfig, ErrorKind, Payload, ServiceError};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::script::{ScriptError, SessionScript, Step};

/// Session id used for every replayed session.
pub const REPLAY_SESSION_ID: &str = "replay";

#[derive(Debug, Clone, Default)]
pub struct ReplayOptions {
    /// Stop at the first failed step.
    pub fail_fast: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayMetrics {
    pub steps_run: usize,
    pub failures: usize,
    /// Transcript-derived retries averaged over synthesis steps.
    pub mean_retries: f64,
    /// Engine time per step; the model is served from fixtures, so this
    /// excludes model latency.
    pub mean_latency_ms: f64,
    pub error_class_counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub index: usize,
    pub op: String,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error_class: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub message: Option<String>,
    /// Widget created or addressed by the step.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub widget_id: Option<String>,
    /// Counters of the step's primary synthesis run.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub synthesis: Option<RetryCounts>,
    /// Retries of every synthesis run in the step, auto widgets included.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub retries: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub metrics: ReplayMetrics,
    pub steps: Vec<StepReport>,
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error("{}replay miss for fingerprint {fingerprint}", step.map(|s| format!("step {s}: ")).unwrap_or_default())]
    ReplayMiss { step: Option<usize>, fingerprint: String },
    #[error("session setup failed: {0}")]
    Setup(ServiceError),
}

/// Loads the script at `path`, resolves its dataset and replays it.
pub fn replay_file(path: &Path, llm: Arc<LlmGateway>, opts: &ReplayOptions) -> Result<ReplayReport, ReplayError> {
    let script = SessionScript::load(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    replay(&script, dir, llm, opts).map(|(report, _)| report)
}

/// Replays `script`, returning the report and the engine holding the
/// finished session. `script_dir` anchors the dataset lookup.
pub fn replay(
    script: &SessionScript,
    script_dir: &Path,
    llm: Arc<LlmGateway>,
    opts: &ReplayOptions,
) -> Result<(ReplayReport, Engine), ReplayError> {
    script.check()?;
    let path = script.resolve_dataset(script_dir)?;
    let bytes = std::fs::read(&path).map_err(|e| ScriptError::Io {
        path: path.clone(),
        message: e.to_string(),
    })?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned());
    let payload = Payload::sniff(bytes, None, name.as_deref()).map_err(ReplayError::Setup)?;
    let config = EngineConfig {
        data_dir: None,
        enrich: script.enrich,
        auto_widget: script.auto_widget,
        ..EngineConfig::default()
    };
    let engine = Engine::new(llm, config).map_err(ReplayError::Setup)?;
    engine
        .create_session_with_id(REPLAY_SESSION_ID.to_string(), payload)
        .map_err(|e| match e.missing_fingerprint() {
            Some(fp) => ReplayError::ReplayMiss {
                step: None,
                fingerprint: fp.to_string(),
            },
            None => ReplayError::Setup(e),
        })?;
    let report = Runner::new(&engine).run(script, opts)?;
    Ok((report, engine))
}

struct Runner<'a> {
    engine: &'a Engine,
    aliases: HashMap<String, String>,
    doms: HashMap<String, WidgetDom>,
    limits: SandboxLimits,
}

/// Outcome of one step before it is turned into a report.
#[derive(Default)]
struct Outcome {
    widget_id: Option<String>,
    failure: Option<(String, String)>,
}

impl Outcome {
    fn fail(class: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            widget_id: None,
            failure: Some((class.into(), message.into())),
        }
    }
}

impl<'a> Runner<'a> {
    fn new(engine: &'a Engine) -> Self {
        Self {
            engine,
            aliases: HashMap::new(),
            doms: HashMap::new(),
            limits: SandboxLimits::default(),
        }
    }

    fn run(mut self, script: &SessionScript, opts: &ReplayOptions) -> Result<ReplayReport, ReplayError> {
        let mut steps = Vec::new();
        let mut latency_total = 0.0;
        let mut retries_total = 0u64;
        let mut synthesis_steps = 0u64;
        for (index, step) in script.steps.iter().enumerate() {
            let log_before = self.log_len();
            let start = Instant::now();
            let outcome = self.step(step).map_err(|fingerprint| ReplayError::ReplayMiss {
                step: Some(index),
                fingerprint,
            })?;
            latency_total += start.elapsed().as_secs_f64() * 1000.0;
            let new_entries = self.log_since(log_before);
            let (synthesis, retries) = if step.is_synthesis() {
                let (primary, retries) = synthesis_counts(&new_entries);
                synthesis_steps += 1;
                retries_total += u64::from(retries);
                (primary, Some(retries))
            } else {
                (None, None)
            };
            let ok = outcome.failure.is_none();
            let (error_class, message) = outcome.failure.unzip();
            steps.push(StepReport {
                index,
                op: step.op().to_string(),
                ok,
                error_class,
                message,
                widget_id: outcome.widget_id,
                synthesis,
                retries,
            });
            if !ok && opts.fail_fast {
                break;
            }
        }
        let mut error_class_counts = BTreeMap::new();
        for s in &steps {
            if let Some(c) = &s.error_class {
                *error_class_counts.entry(c.clone()).or_insert(0) += 1;
            }
        }
        let steps_run = steps.len();
        let metrics = ReplayMetrics {
            steps_run,
            failures: steps.iter().filter(|s| !s.ok).count(),
            mean_retries: if synthesis_steps == 0 {
                0.0
            } else {
                retries_total as f64 / synthesis_steps as f64
            },
            mean_latency_ms: if steps_run == 0 { 0.0 } else { latency_total / steps_run as f64 },
            error_class_counts,
        };
        Ok(ReplayReport { metrics, steps })
    }

    fn log_len(&self) -> usize {
        self.engine.with_session(REPLAY_SESSION_ID, |s| s.log.len()).unwrap_or(0)
    }

    fn log_since(&self, n: usize) -> Vec<LogEntry> {
        self.engine
            .with_session(REPLAY_SESSION_ID, |s| s.log[n..].to_vec())
            .unwrap_or_default()
    }

    /// Runs one step. `Err` carries the fingerprint of a replay miss, which
    /// aborts the whole replay.
    fn step(&mut self, step: &Step) -> Result<Outcome, String> {
        let id = REPLAY_SESSION_ID;
        Ok(match step {
            Step::ChartCommand {
                command,
                auto_widget_as,
                expect_error,
            } => match self.engine.chart_command(id, command) {
                Ok(r) => {
                    let widget = r.auto_widget.map(|w| w.widget);
                    if let Some(w) = &widget {
                        self.mount(w.id.clone(), &w.markup);
                    }
                    match (auto_widget_as, widget) {
                        _ if expect_error.is_some() => unexpected_success(expect_error),
                        (Some(name), Some(w)) => self.bind(name, w.id),
                        (Some(name), None) => Outcome::fail(
                            "no_auto_widget",
                            format!(
                                "no widget to bind as {name:?}: {}",
                                r.meta.auto_widget_error.as_deref().unwrap_or("the edit changed nothing")
                            ),
                        ),
                        (None, w) => Outcome {
                            widget_id: w.map(|w| w.id),
                            failure: None,
                        },
                    }
                }
                Err(e) => self.command_error(e, expect_error)?,
            },
            Step::WidgetCommand {
                command,
                alias,
                expect_error,
            } => match self.engine.widget_command(id, command) {
                Ok(r) if expect_error.is_none() => {
                    let w = r.widget.widget;
                    self.mount(w.id.clone(), &w.markup);
                    self.bind(alias, w.id)
                }
                Ok(_) => unexpected_success(expect_error),
                Err(e) => self.command_error(e, expect_error)?,
            },
            Step::WidgetEvent { widget, target, value } => {
                let event = SyntheticEvent::change(target.clone(), value.clone());
                self.widget_event(widget, &event)
            }
            Step::Toggle { widget, enabled } => match self.aliases.get(widget).cloned() {
                None => Outcome::fail("unknown_widget", format!("widget {widget:?} was never created")),
                Some(wid) => match self.engine.toggle(id, &wid, *enabled) {
                    Ok(_) => Outcome {
                        widget_id: Some(wid),
                        failure: None,
                    },
                    Err(e) => Outcome::fail(e.error_kind.as_str(), e.message),
                },
            },
            Step::Delete { widget } => match self.aliases.get(widget).cloned() {
                None => Outcome::fail("unknown_widget", format!("widget {widget:?} was never created")),
                Some(wid) => match self.engine.delete_widget(id, &wid) {
                    Ok(_) => {
                        self.doms.remove(&wid);
                        Outcome {
                            widget_id: Some(wid),
                            failure: None,
                        }
                    }
                    Err(e) => Outcome::fail(e.error_kind.as_str(), e.message),
                },
            },
            Step::Assert { pointer, equals, absent } => self.check(pointer, equals.as_ref(), *absent),
        })
    }

    fn bind(&mut self, name: &str, widget_id: String) -> Outcome {
        self.aliases.insert(name.to_string(), widget_id.clone());
        Outcome {
            widget_id: Some(widget_id),
            failure: None,
        }
    }

    fn mount(&mut self, widget_id: String, markup: &str) {
        match WidgetDom::from_markup(markup) {
            Ok(dom) => {
                self.doms.insert(widget_id, dom);
            }
            Err(e) => tracing::warn!(widget = %widget_id, error = %e, "widget markup did not mount"),
        }
    }

    fn command_error(&self, e: ServiceError, expect: &Option<String>) -> Result<Outcome, String> {
        if let Some(fp) = e.missing_fingerprint() {
            return Err(fp.to_string());
        }
        Ok(match expect {
            Some(kind) if kind == e.error_kind.as_str() => Outcome::default(),
            Some(kind) => Outcome::fail(
                "unexpected_error",
                format!("expected {kind}, got {}: {}", e.error_kind.as_str(), e.message),
            ),
            None => Outcome::fail(e.error_kind.as_str(), e.message),
        })
    }

    /// Runs the widget's callback against the current base chart and posts
    /// the result. A rejected result leaves the widget's inputs as they were.
    fn widget_event(&mut self, alias: &str, event: &SyntheticEvent) -> Outcome {
        let Some(wid) = self.aliases.get(alias).cloned() else {
            return Outcome::fail("unknown_widget", format!("widget {alias:?} was never created"));
        };
        let state = match self.engine.state(REPLAY_SESSION_ID) {
            Ok(s) => s,
            Err(e) => return Outcome::fail(e.error_kind.as_str(), e.message),
        };
        let (Some(widget), Some(chart)) = (state.registry.get(&wid).cloned(), state.base_chart) else {
            return Outcome::fail(ErrorKind::NotFound.as_str(), format!("widget {alias:?} is not registered"));
        };
        let Some(dom) = self.doms.get_mut(&wid) else {
            return Outcome::fail("mount_failed", format!("widget {alias:?} has no mounted inputs"));
        };
        let before = dom.clone();
        let result = run_callback_in(&widget, event, &chart, dom, &self.limits);
        if !result.is_ok() {
            let d = result.diagnostics.first();
            return Outcome::fail(
                d.map_or("sandbox", |d| d.kind.as_str()),
                d.map_or_else(String::new, |d| d.message.clone()),
            );
        }
        let transforms = Value::Array(result.transforms.unwrap_or_default());
        let chart = result.chart.expect("ok results carry a chart").into_value();
        match self.engine.apply_widget_result(REPLAY_SESSION_ID, &wid, transforms, chart) {
            Ok(_) => Outcome {
                widget_id: Some(wid),
                failure: None,
            },
            Err(e) => {
                *self.doms.get_mut(&wid).expect("mounted") = before;
                Outcome::fail(e.error_kind.as_str(), e.message)
            }
        }
    }

    fn check(&self, pointer: &str, equals: Option<&Value>, absent: bool) -> Outcome {
        let spec = match self.engine.effective_spec(REPLAY_SESSION_ID) {
            Ok(Some(s)) => s.into_value(),
            Ok(None) => return Outcome::fail("assert_failed", "session has no chart"),
            Err(e) => return Outcome::fail(e.error_kind.as_str(), e.message),
        };
        let found = spec.pointer(pointer);
        match (found, equals) {
            (None, _) if absent => Outcome::default(),
            (Some(v), _) if absent => Outcome::fail("assert_failed", format!("{pointer}: expected nothing, found {v}")),
            (Some(v), Some(want)) if v == want => Outcome::default(),
            (Some(v), Some(want)) => Outcome::fail("assert_failed", format!("{pointer}: expected {want}, found {v}")),
            (None, Some(want)) => Outcome::fail("assert_failed", format!("{pointer}: expected {want}, found nothing")),
            (_, None) => unreachable!("checked by SessionScript::check"),
        }
    }
}

fn unexpected_success(expect: &Option<String>) -> Outcome {
    Outcome::fail(
        "unexpected_success",
        format!("expected {}, but the command succeeded", expect.as_deref().unwrap_or("an error")),
    )
}

/// Counters of the primary synthesis and retries over every transcript in
/// the entries a step appended.
pub fn synthesis_counts(entries: &[LogEntry]) -> (Option<RetryCounts>, u32) {
    let mut primary = None;
    let mut retries = 0;
    let mut add = |t: &[TranscriptEntry], is_primary: bool| {
        let c = RetryCounts::from_transcript(t);
        retries += c.retries();
        if is_primary && primary.is_none() {
            primary = Some(c);
        }
    };
    for e in entries {
        match &e.event {
            Event::ChartCommand { meta, .. } => {
                add(&meta.synthesis.transcript, true);
                if let Some(w) = &meta.auto_widget {
                    add(&w.synthesis.transcript, false);
                }
            }
            Event::WidgetCommand { meta, .. } => add(&meta.synthesis.transcript, true),
            Event::CommandFailed { transcript, .. } if !transcript.is_empty() => add(transcript, true),
            _ => {}
        }
    }
    (primary, retries)
}
