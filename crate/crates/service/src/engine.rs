//! Session operations shared by the HTTP layer and the replay harness.
//!
//! Every mutating operation works on a clone of the session state, turns the
//! outcome into one event, applies it and appends it to the log; the live
//! state is swapped in only after the append succeeds. Requests on one
//! session are serialized by its mutex.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use dynavis_core::chart::dates::{normalize_transform_dates, temporal_fields};
use dynavis_core::chart::{normalize_dates, recombine, validate_spec_with_columns, ChartSpec};
use dynavis_core::data::Column;
use dynavis_core::gateway::{GatewayError, LlmGateway};
use dynavis_core::summary::{enrich, summarize, DataSummary, DEFAULT_SAMPLES};
use dynavis_core::synthesis::{
    auto_widget_command, synthesize_chart, synthesize_widget, RetryCounts, SynthesisError, TranscriptEntry,
};
use dynavis_core::widget::{TransformList, Widget};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{ErrorKind, ServiceError};
use crate::events::{ChartMeta, Event, LogEntry, SynthesisMeta, WidgetMeta};
use crate::import::{import, Payload};
use crate::persist::{sessions_root, SessionFiles, Snapshot};
use crate::state::SessionState;
use crate::telemetry::{TelemetryEvent, TelemetryKind};

pub const DEFAULT_SNAPSHOT_EVERY: u64 = 20;

#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Root for session logs; `None` keeps sessions in memory only.
    pub data_dir: Option<PathBuf>,
    /// Ask the model for dataset and column descriptions on import.
    pub enrich: bool,
    /// Synthesize a widget alongside every chart edit.
    pub auto_widget: bool,
    /// Write a snapshot after this many log entries; 0 disables snapshots.
    pub snapshot_every: u64,
    pub n_samples: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            enrich: true,
            auto_widget: true,
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
            n_samples: DEFAULT_SAMPLES,
        }
    }
}

pub struct Session {
    pub state: SessionState,
    pub log: Vec<LogEntry>,
    pub telemetry: Vec<TelemetryEvent>,
    files: Option<SessionFiles>,
    snapshot_every: u64,
}

impl Session {
    fn next_seq(&self) -> u64 {
        self.log.last().map_or(1, |e| e.seq + 1)
    }

    fn append(&mut self, event: Event) -> Result<u64, ServiceError> {
        let entry = LogEntry {
            seq: self.next_seq(),
            ts_ms: now_ms(),
            event,
        };
        if let Some(files) = &self.files {
            files.append_event(&entry)?;
        }
        let seq = entry.seq;
        self.log.push(entry);
        Ok(seq)
    }

    /// Applies `event` to a copy of the state, logs it, then swaps the copy in.
    fn commit(&mut self, event: Event) -> Result<u64, ServiceError> {
        let mut next = self.state.clone();
        next.apply(self.next_seq(), &event)
            .map_err(|e| ServiceError::internal(e.to_string()))?;
        let seq = self.append(event)?;
        self.state = next;
        if self.snapshot_every > 0 && seq % self.snapshot_every == 0 {
            if let Some(files) = &self.files {
                let snap = Snapshot {
                    last_seq: seq,
                    state: self.state.clone(),
                };
                if let Err(e) = files.write_snapshot(&snap) {
                    tracing::warn!(error = %e, "snapshot failed; the log stays authoritative");
                }
            }
        }
        Ok(seq)
    }

    fn telemetry(&mut self, kind: TelemetryKind, payload: Value, latency_ms: u64, retries: u32) {
        let event = TelemetryEvent {
            ts_ms: now_ms(),
            kind,
            payload,
            latency_ms,
            retries,
        };
        if let Some(files) = &self.files {
            if let Err(e) = files.append_telemetry(&event) {
                tracing::warn!(error = %e, "telemetry append failed");
            }
        }
        self.telemetry.push(event);
    }

    fn effective(&self) -> Option<ChartSpec> {
        self.state.effective_spec().ok().flatten()
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

fn elapsed_ms(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

/// A widget with its latest transform list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidgetView {
    #[serde(flatten)]
    pub widget: Widget,
    pub transforms: TransformList,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreatedResponse {
    pub session_id: String,
    pub summary: DataSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub summary: DataSummary,
    pub columns: Vec<Column>,
    pub base_chart: Option<ChartSpec>,
    pub effective_spec: Option<ChartSpec>,
    /// Newest first.
    pub widgets: Vec<WidgetView>,
    pub event_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartCommandResponse {
    /// Effective spec after the edit.
    pub chart: ChartSpec,
    pub base_chart: ChartSpec,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auto_widget: Option<WidgetView>,
    pub meta: ChartMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidgetCommandResponse {
    pub widget: WidgetView,
    pub meta: WidgetMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveResponse {
    pub effective_spec: Option<ChartSpec>,
}

/// A failed request: the error returned to the caller plus whatever
/// transcript the synthesis produced.
struct Failure {
    error: ServiceError,
    transcript: Vec<TranscriptEntry>,
}

impl From<ServiceError> for Failure {
    fn from(error: ServiceError) -> Self {
        Self {
            error,
            transcript: Vec::new(),
        }
    }
}

impl From<SynthesisError> for Failure {
    fn from(e: SynthesisError) -> Self {
        match e {
            SynthesisError::InvalidRequest(m) => ServiceError::invalid(m).into(),
            SynthesisError::Gateway(g) => ServiceError::from(g).into(),
            SynthesisError::Exhausted(ex) => {
                let mut error = ServiceError::new(
                    ErrorKind::SynthesisFailed,
                    format!("synthesis failed after {} attempts: {}", ex.attempts, ex.last_error),
                );
                error.findings = ex.findings;
                Self {
                    error,
                    transcript: ex.transcript,
                }
            }
        }
    }
}

/// Gateway failures that mean the fixture set or store is broken. These
/// abort a chart command even when they come from the auto-widget step.
fn is_setup_error(e: &SynthesisError) -> bool {
    matches!(
        e,
        SynthesisError::Gateway(GatewayError::ReplayMiss { .. } | GatewayError::Drift { .. } | GatewayError::Store { .. })
    )
}

pub struct Engine {
    llm: Arc<LlmGateway>,
    config: EngineConfig,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
}

impl Engine {
    /// Creates the engine, recovering any sessions found under the data dir.
    pub fn new(llm: Arc<LlmGateway>, config: EngineConfig) -> Result<Self, ServiceError> {
        let engine = Self {
            llm,
            config,
            sessions: RwLock::new(HashMap::new()),
        };
        engine.recover()?;
        Ok(engine)
    }

    pub fn llm(&self) -> &Arc<LlmGateway> {
        &self.llm
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    fn recover(&self) -> Result<(), ServiceError> {
        let Some(root) = &self.config.data_dir else {
            return Ok(());
        };
        let dir = sessions_root(root);
        let entries = match std::fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
            Err(e) => return Err(ServiceError::new(ErrorKind::Storage, format!("{}: {e}", dir.display()))),
        };
        let mut map = self.sessions.write().expect("session map lock");
        for entry in entries.flatten() {
            if !entry.path().is_dir() {
                continue;
            }
            let id = entry.file_name().to_string_lossy().into_owned();
            let files = SessionFiles::open(entry.path());
            let loaded = files.load()?;
            if loaded.log.is_empty() {
                continue;
            }
            let state = match loaded.snapshot {
                Some(snap) if snap.last_seq <= loaded.log.len() as u64 => {
                    let mut state = snap.state;
                    state
                        .apply_all(snap.last_seq, &loaded.log[snap.last_seq as usize..])
                        .map_err(|e| ServiceError::new(ErrorKind::Storage, format!("session {id}: {e}")))?;
                    state
                }
                _ => SessionState::replay(&id, &loaded.log)
                    .map_err(|e| ServiceError::new(ErrorKind::Storage, format!("session {id}: {e}")))?,
            };
            tracing::info!(session = %id, events = loaded.log.len(), "recovered session");
            map.insert(
                id,
                Arc::new(Mutex::new(Session {
                    state,
                    log: loaded.log,
                    telemetry: loaded.telemetry,
                    files: Some(files),
                    snapshot_every: self.config.snapshot_every,
                })),
            );
        }
        Ok(())
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("session map lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ServiceError> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::not_found(format!("session {id:?}")))
    }

    fn lock(session: &Mutex<Session>) -> MutexGuard<'_, Session> {
        // State is only replaced wholesale, so a poisoned lock still guards
        // a consistent session.
        session.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Read access to a session under its lock.
    pub fn with_session<R>(&self, id: &str, f: impl FnOnce(&Session) -> R) -> Result<R, ServiceError> {
        let s = self.session(id)?;
        let guard = Self::lock(&s);
        Ok(f(&guard))
    }

    pub fn create_session(&self, payload: Payload) -> Result<CreatedResponse, ServiceError> {
        self.create_session_with_id(uuid::Uuid::new_v4().simple().to_string(), payload)
    }

    pub fn create_session_with_id(&self, id: String, payload: Payload) -> Result<CreatedResponse, ServiceError> {
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(ServiceError::invalid(format!("invalid session id {id:?}")));
        }
        if self.sessions.read().expect("session map lock").contains_key(&id) {
            return Err(ServiceError::invalid(format!("session {id:?} already exists")));
        }
        let start = Instant::now();
        let imported = import(payload)?;
        let summary = summarize(&imported.dataset, self.config.n_samples).map_err(|e| ServiceError::invalid(e.to_string()))?;
        let summary = if self.config.enrich {
            enrich(&summary, &self.llm)?
        } else {
            summary
        };
        let event = Event::SessionCreated {
            dataset: imported.dataset,
            summary: summary.clone(),
            base_chart: imported.base_chart,
            layout: imported.layout,
        };
        let state = SessionState::created(id.clone(), &event).map_err(|e| ServiceError::internal(e.to_string()))?;
        let files = match &self.config.data_dir {
            Some(root) => Some(SessionFiles::create(root, &id)?),
            None => None,
        };
        let mut session = Session {
            state,
            log: Vec::new(),
            telemetry: Vec::new(),
            files,
            snapshot_every: self.config.snapshot_every,
        };
        session.append(event)?;
        tracing::info!(session = %id, rows = summary.row_count, ms = elapsed_ms(start), "session created");
        self.sessions
            .write()
            .expect("session map lock")
            .insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(CreatedResponse { session_id: id, summary })
    }

    /// Runs `op` under the session lock; failures are logged as
    /// `command_failed` events and error telemetry, leaving state untouched.
    fn run<T>(
        &self,
        id: &str,
        operation: &str,
        command: Option<&str>,
        op: impl FnOnce(&mut Session) -> Result<T, Failure>,
    ) -> Result<T, ServiceError> {
        let s = self.session(id)?;
        let mut session = Self::lock(&s);
        let start = Instant::now();
        match op(&mut session) {
            Ok(v) => Ok(v),
            Err(Failure { mut error, transcript }) => {
                let retries = RetryCounts::from_transcript(&transcript).retries();
                let event = Event::CommandFailed {
                    operation: operation.to_string(),
                    command: command.map(str::to_string),
                    error_kind: error.error_kind,
                    message: error.message.clone(),
                    findings: error.findings.clone(),
                    transcript,
                };
                match session.append(event) {
                    Ok(seq) => error.transcript_ref = Some(format!("/api/sessions/{id}/events/{seq}")),
                    Err(e) => tracing::error!(error = %e, "could not log failure"),
                }
                session.telemetry(
                    TelemetryKind::Error,
                    json!({"operation": operation, "command": command, "error_kind": error.error_kind, "message": error.message}),
                    elapsed_ms(start),
                    retries,
                );
                Err(error)
            }
        }
    }

    pub fn snapshot(&self, id: &str) -> Result<SessionView, ServiceError> {
        self.with_session(id, |s| SessionView {
            session_id: id.to_string(),
            summary: s.state.summary.clone(),
            columns: s.state.columns().to_vec(),
            base_chart: s.state.base_chart.clone(),
            effective_spec: s.effective(),
            widgets: s.state.registry.panel().into_iter().map(|w| view(&s.state, w)).collect(),
            event_count: s.log.len() as u64,
        })
    }

    /// Creates or edits the base chart from a natural-language command. An
    /// edit also synthesizes a widget for the properties it changed.
    pub fn chart_command(&self, id: &str, command: &str) -> Result<ChartCommandResponse, ServiceError> {
        if command.trim().is_empty() {
            return Err(ServiceError::invalid("command is empty"));
        }
        let auto_enabled = self.config.auto_widget;
        self.run(id, "chart_command", Some(command), |s| {
            let start = Instant::now();
            let before = s.state.base_chart.clone();
            let outcome = synthesize_chart(&s.state.summary, command, before.as_ref(), &self.llm)?;
            let chart_meta = SynthesisMeta::of(&outcome, elapsed_ms(start));
            let chart = outcome.result.chart;

            let mut next = s.state.clone();
            next.base_chart = Some(chart.clone());
            next.effective_spec().map_err(ServiceError::from)?;

            let auto_command = before
                .as_ref()
                .filter(|_| auto_enabled)
                .and_then(|b| auto_widget_command(b, &chart));
            let mut auto_widget = None;
            let mut auto_meta = None;
            let mut auto_error = None;
            if let Some(cmd) = &auto_command {
                let wstart = Instant::now();
                match synthesize_widget(&next.summary, &chart, cmd, &next.next_widget_id(), &next.element_ids(), &self.llm) {
                    Ok(o) => {
                        auto_meta = Some(WidgetMeta {
                            synthesis: SynthesisMeta::of(&o, elapsed_ms(wstart)),
                            renames: o.result.renames.clone(),
                            warnings: o.result.warnings.clone(),
                        });
                        auto_widget = Some(o.result.widget);
                    }
                    Err(e) if is_setup_error(&e) => return Err(e.into()),
                    Err(e) => {
                        tracing::info!(error = %e, "no widget for this edit");
                        auto_error = Some(e.to_string());
                    }
                }
            }
            let meta = ChartMeta {
                synthesis: chart_meta,
                date_repairs: outcome.result.repairs,
                auto_widget_command: auto_command,
                auto_widget: auto_meta,
                auto_widget_error: auto_error,
            };
            s.commit(Event::ChartCommand {
                command: command.to_string(),
                chart: chart.clone(),
                auto_widget: auto_widget.clone(),
                meta: meta.clone(),
            })?;
            let retries = meta.synthesis.retries + meta.auto_widget.as_ref().map_or(0, |m| m.synthesis.retries);
            s.telemetry(
                TelemetryKind::NlEdit,
                json!({
                    "command": command,
                    "created": before.is_none(),
                    "attempts": meta.synthesis.attempts,
                    "repair_rounds": meta.synthesis.repair_rounds,
                    "chart_retries": meta.synthesis.retries,
                    "auto_widget_id": auto_widget.as_ref().map(|w| w.id.clone()),
                }),
                elapsed_ms(start),
                retries,
            );
            let effective = s.effective().expect("checked before commit");
            Ok(ChartCommandResponse {
                chart: effective,
                base_chart: chart,
                auto_widget: auto_widget.and_then(|w| s.state.registry.get(&w.id).map(|w| view(&s.state, w))),
                meta,
            })
        })
    }

    /// Synthesizes and registers a widget; the chart is left as is.
    pub fn widget_command(&self, id: &str, command: &str) -> Result<WidgetCommandResponse, ServiceError> {
        if command.trim().is_empty() {
            return Err(ServiceError::invalid("command is empty"));
        }
        self.run(id, "widget_command", Some(command), |s| {
            let start = Instant::now();
            let chart = s.state.base_chart.clone().ok_or_else(|| {
                ServiceError::new(ErrorKind::NoChart, "create a chart before adding widgets")
            })?;
            let wid = s.state.next_widget_id();
            let o = synthesize_widget(&s.state.summary, &chart, command, &wid, &s.state.element_ids(), &self.llm)?;
            let meta = WidgetMeta {
                synthesis: SynthesisMeta::of(&o, elapsed_ms(start)),
                renames: o.result.renames.clone(),
                warnings: o.result.warnings.clone(),
            };
            s.commit(Event::WidgetCommand {
                command: command.to_string(),
                widget: o.result.widget,
                meta: meta.clone(),
            })?;
            s.telemetry(
                TelemetryKind::NlWidget,
                json!({
                    "command": command,
                    "widget_id": wid,
                    "attempts": meta.synthesis.attempts,
                    "repair_rounds": meta.synthesis.repair_rounds,
                }),
                elapsed_ms(start),
                meta.synthesis.retries,
            );
            let widget = view(&s.state, s.state.registry.get(&wid).expect("just registered"));
            Ok(WidgetCommandResponse { widget, meta })
        })
    }

    /// Accepts the output of one callback run: the chart becomes the base
    /// chart and the transforms the widget's latest list.
    pub fn apply_widget_result(
        &self,
        id: &str,
        widget_id: &str,
        transforms: Value,
        chart: Value,
    ) -> Result<EffectiveResponse, ServiceError> {
        self.run(id, "widget_result", None, |s| {
            let start = Instant::now();
            if s.state.registry.get(widget_id).is_none() {
                return Err(ServiceError::not_found(format!("widget {widget_id:?}")).into());
            }
            let base = s.state.base_chart.clone().ok_or_else(|| {
                ServiceError::new(ErrorKind::NoChart, "session has no chart")
            })?;
            let chart = accept_chart(chart, &base, s.state.columns())?;
            let mut transforms = accept_transforms(transforms)?;
            normalize_transform_dates(&mut transforms, &temporal_fields(&chart));
            let mut next = s.state.clone();
            next.registry
                .record_transforms(widget_id, transforms.clone())
                .map_err(ServiceError::from)?;
            next.base_chart = Some(chart.clone());
            next.effective_spec().map_err(ServiceError::from)?;
            let n = transforms.len();
            s.commit(Event::WidgetResult {
                widget_id: widget_id.to_string(),
                transforms,
                chart,
            })?;
            s.telemetry(
                TelemetryKind::WidgetInteract,
                json!({"widget_id": widget_id, "transforms": n}),
                elapsed_ms(start),
                0,
            );
            Ok(EffectiveResponse {
                effective_spec: s.effective(),
            })
        })
    }

    pub fn toggle(&self, id: &str, widget_id: &str, enabled: bool) -> Result<EffectiveResponse, ServiceError> {
        self.run(id, "toggle", None, |s| {
            let start = Instant::now();
            let mut next = s.state.clone();
            next.registry.toggle(widget_id, enabled).map_err(ServiceError::from)?;
            next.effective_spec().map_err(ServiceError::from)?;
            s.commit(Event::Toggle {
                widget_id: widget_id.to_string(),
                enabled,
            })?;
            s.telemetry(
                TelemetryKind::Toggle,
                json!({"widget_id": widget_id, "enabled": enabled}),
                elapsed_ms(start),
                0,
            );
            Ok(EffectiveResponse {
                effective_spec: s.effective(),
            })
        })
    }

    pub fn delete_widget(&self, id: &str, widget_id: &str) -> Result<EffectiveResponse, ServiceError> {
        self.run(id, "delete_widget", None, |s| {
            let mut next = s.state.clone();
            next.registry.remove(widget_id).map_err(ServiceError::from)?;
            next.effective_spec().map_err(ServiceError::from)?;
            s.commit(Event::WidgetDeleted {
                widget_id: widget_id.to_string(),
            })?;
            Ok(EffectiveResponse {
                effective_spec: s.effective(),
            })
        })
    }

    pub fn effective_spec(&self, id: &str) -> Result<Option<ChartSpec>, ServiceError> {
        self.with_session(id, |s| s.state.effective_spec().map_err(ServiceError::from))?
    }

    /// Effective spec with the rows and imported layout put back in.
    pub fn export(&self, id: &str) -> Result<Value, ServiceError> {
        self.with_session(id, |s| {
            let spec = s
                .state
                .effective_spec()?
                .ok_or_else(|| ServiceError::new(ErrorKind::NoChart, "session has no chart"))?;
            Ok(recombine(&spec, Some(&s.state.dataset), &s.state.layout))
        })?
    }

    pub fn records(&self, id: &str) -> Result<Value, ServiceError> {
        self.with_session(id, |s| {
            json!({"columns": s.state.columns(), "records": s.state.dataset.to_records()})
        })
    }

    pub fn telemetry(&self, id: &str) -> Result<Vec<TelemetryEvent>, ServiceError> {
        self.with_session(id, |s| s.telemetry.clone())
    }

    pub fn events(&self, id: &str) -> Result<Vec<LogEntry>, ServiceError> {
        self.with_session(id, |s| s.log.clone())
    }

    pub fn state(&self, id: &str) -> Result<SessionState, ServiceError> {
        self.with_session(id, |s| s.state.clone())
    }
}

fn view(state: &SessionState, w: &Widget) -> WidgetView {
    WidgetView {
        widget: w.clone(),
        transforms: state.registry.transforms_of(&w.id).cloned().unwrap_or_default(),
    }
}

fn rejected(message: String) -> ServiceError {
    ServiceError::new(ErrorKind::ValidationFailed, message)
}

/// Callback chart output: must be an object; keeps the session's data
/// binding; dates repaired, then validated against the dataset.
fn accept_chart(chart: Value, base: &ChartSpec, columns: &[Column]) -> Result<ChartSpec, ServiceError> {
    let Value::Object(mut doc) = chart else {
        return Err(rejected("chart must be a JSON object".into()).at("/chart"));
    };
    match base.document().get("data") {
        Some(data) => {
            doc.insert("data".into(), data.clone());
        }
        None => {
            doc.remove("data");
        }
    }
    let chart = ChartSpec::from_value(Value::Object(doc)).expect("object");
    let (chart, _) = normalize_dates(&chart);
    let report = validate_spec_with_columns(&chart, columns);
    if !report.ok {
        let mut err = ServiceError::validation("chart fails validation", &report);
        err.detail_path = err.detail_path.map(|p| format!("/chart{p}"));
        return Err(err);
    }
    Ok(chart)
}

fn accept_transforms(transforms: Value) -> Result<TransformList, ServiceError> {
    match transforms {
        Value::Null => Ok(Vec::new()),
        Value::Array(items) => {
            if let Some(i) = items.iter().position(|t| !t.is_object()) {
                return Err(rejected("each transform must be an object".into()).at(format!("/transforms/{i}")));
            }
            Ok(items)
        }
        _ => Err(rejected("transforms must be an array".into()).at("/transforms")),
    }
}

#[cfg(test)]
mod tests;
