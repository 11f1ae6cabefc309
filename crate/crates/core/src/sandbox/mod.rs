//! Headless evaluation of widget callbacks in an isolated interpreter.
//!
//! Each run gets a fresh QuickJS runtime with a wall-clock deadline, a
//! memory cap and a stack cap. The only host surface is a document scoped
//! to the widget's own markup; network, storage, timers, module loading and
//! process objects are replaced by stubs that report the attempt to the
//! host before throwing. The clock is fixed and `Math.random` is seeded so
//! a run is a pure function of (widget, event, chart, form state).

mod dom;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rquickjs::loader::{ImportAttributes, Loader, Resolver};
use rquickjs::module::Declared;
use rquickjs::{Context, Ctx, Function, Module, Object, Runtime};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analysis::markup::parse_fragment;
use crate::analysis::{AnalysisReport, Finding, Location, Rule};
use crate::chart::dates::{normalize_transform_dates, temporal_fields};
use crate::chart::schema::validate_transform;
use crate::chart::{normalize_dates, validate_spec, ChartSpec, DateRepair};
use crate::widget::{TransformList, Widget};

pub use dom::{format_number, DomNode, EventValue, WidgetDom};

const PRELUDE: &str = include_str!("prelude.js");

/// Wall-clock budget for one callback invocation.
pub const CALLBACK_BUDGET: Duration = Duration::from_millis(1000);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SandboxLimits {
    pub budget: Duration,
    pub memory_bytes: usize,
    pub stack_bytes: usize,
}

impl Default for SandboxLimits {
    fn default() -> Self {
        Self {
            budget: CALLBACK_BUDGET,
            memory_bytes: 64 << 20,
            stack_bytes: 1 << 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    #[default]
    Change,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEvent {
    pub target_id: String,
    pub value: EventValue,
    #[serde(default)]
    pub event_kind: EventKind,
}

impl SyntheticEvent {
    pub fn change(target_id: impl Into<String>, value: impl Into<EventValue>) -> Self {
        Self {
            target_id: target_id.into(),
            value: value.into(),
            event_kind: EventKind::Change,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    Timeout,
    IoBlocked,
    Exception,
    BadReturnShape,
    /// The returned chart or a returned transform fails schema validation.
    InvalidOutput,
}

impl DiagnosticKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagnosticKind::Timeout => "timeout",
            DiagnosticKind::IoBlocked => "io_blocked",
            DiagnosticKind::Exception => "exception",
            DiagnosticKind::BadReturnShape => "bad_return_shape",
            DiagnosticKind::InvalidOutput => "invalid_output",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub message: String,
    /// Chart path of the first validation error, for `invalid_output`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pointer: Option<String>,
}

impl Diagnostic {
    fn new(kind: DiagnosticKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
            pointer: None,
        }
    }
}

/// Outputs are present iff there are no diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxResult {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub transforms: Option<TransformList>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub chart: Option<ChartSpec>,
    pub diagnostics: Vec<Diagnostic>,
    /// Date strings rewritten in the outputs.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub repairs: Vec<DateRepair>,
}

impl SandboxResult {
    pub fn is_ok(&self) -> bool {
        self.diagnostics.is_empty()
    }

    fn failed(kind: DiagnosticKind, message: impl Into<String>) -> Self {
        Self::from_diagnostic(Diagnostic::new(kind, message))
    }

    fn from_diagnostic(d: Diagnostic) -> Self {
        Self {
            transforms: None,
            chart: None,
            diagnostics: vec![d],
            repairs: Vec::new(),
        }
    }

    pub fn has(&self, kind: DiagnosticKind) -> bool {
        self.diagnostics.iter().any(|d| d.kind == kind)
    }
}

/// Runs the callback once against the widget's initial form state.
pub fn run_callback(w: &Widget, ev: &SyntheticEvent, chart: &ChartSpec) -> SandboxResult {
    match WidgetDom::from_markup(&w.markup) {
        Ok(mut dom) => run_callback_in(w, ev, chart, &mut dom, &SandboxLimits::default()),
        Err(e) => SandboxResult::failed(DiagnosticKind::Exception, format!("widget markup does not parse: {e}")),
    }
}

/// Runs the callback against `dom`, which holds the form state left by
/// earlier runs. On success `dom` takes the post-run state; on failure it
/// is left as it was.
pub fn run_callback_in(
    w: &Widget,
    ev: &SyntheticEvent,
    chart: &ChartSpec,
    dom: &mut WidgetDom,
    limits: &SandboxLimits,
) -> SandboxResult {
    let mut staged = dom.clone();
    let target = match staged.apply_event(ev) {
        Ok(i) => i,
        Err(m) => return SandboxResult::failed(DiagnosticKind::Exception, m),
    };
    let raw = match execute(&w.callback_source, target, &staged, chart, limits) {
        Ok(raw) => raw,
        Err(d) => return SandboxResult::from_diagnostic(d),
    };
    let result = finish(raw.status, raw.message, raw.result);
    if result.is_ok() {
        *dom = raw.dom;
    }
    result
}

#[derive(Deserialize)]
struct RawOutcome {
    status: String,
    message: Option<String>,
    result: Option<String>,
    dom: WidgetDom,
}

#[derive(Deserialize)]
struct RawResult {
    transforms: Vec<Value>,
    chart: Value,
}

fn finish(status: String, message: Option<String>, result: Option<String>) -> SandboxResult {
    let message = message.unwrap_or_default();
    match status.as_str() {
        "ok" => {}
        "bad_return_shape" => return SandboxResult::failed(DiagnosticKind::BadReturnShape, message),
        _ => return SandboxResult::failed(DiagnosticKind::Exception, message),
    }
    let raw: RawResult = match result.as_deref().map(serde_json::from_str) {
        Some(Ok(r)) => r,
        _ => return SandboxResult::failed(DiagnosticKind::BadReturnShape, "callback result could not be read"),
    };
    let Ok(chart) = ChartSpec::from_value(raw.chart) else {
        return SandboxResult::failed(DiagnosticKind::BadReturnShape, "chart must be an object");
    };
    let (chart, mut repairs) = normalize_dates(&chart);
    let mut transforms = raw.transforms;
    repairs.extend(normalize_transform_dates(&mut transforms, &temporal_fields(&chart)));

    let report = validate_spec(&chart);
    if !report.ok {
        return SandboxResult::from_diagnostic(Diagnostic {
            kind: DiagnosticKind::InvalidOutput,
            message: format!("returned chart fails validation:\n{}", report.describe()),
            pointer: report.errors.first().map(|e| e.path.clone()),
        });
    }
    for (i, t) in transforms.iter().enumerate() {
        let report = validate_transform(t);
        if !report.ok {
            return SandboxResult::from_diagnostic(Diagnostic {
                kind: DiagnosticKind::InvalidOutput,
                message: format!("returned transform {i} fails validation:\n{}", report.describe()),
                pointer: report.errors.first().map(|e| format!("/transform/{i}{}", e.path)),
            });
        }
    }
    SandboxResult {
        transforms: Some(transforms),
        chart: Some(chart),
        diagnostics: Vec::new(),
        repairs,
    }
}

/// Records module loads as blocked host access.
#[derive(Clone)]
struct BlockImports(Arc<Mutex<Vec<String>>>);

impl Resolver for BlockImports {
    fn resolve<'js>(
        &mut self,
        _ctx: &Ctx<'js>,
        base: &str,
        name: &str,
        _attributes: Option<ImportAttributes<'js>>,
    ) -> rquickjs::Result<String> {
        self.0.lock().expect("poisoned").push(format!("import('{name}')"));
        Err(rquickjs::Error::new_resolving_message(base, name, "module loading is not available to widget callbacks"))
    }
}

impl Loader for BlockImports {
    fn load<'js>(
        &mut self,
        _ctx: &Ctx<'js>,
        name: &str,
        _attributes: Option<ImportAttributes<'js>>,
    ) -> rquickjs::Result<Module<'js, Declared>> {
        self.0.lock().expect("poisoned").push(format!("import('{name}')"));
        Err(rquickjs::Error::new_loading(name))
    }
}

fn execute(
    source: &str,
    target: usize,
    dom: &WidgetDom,
    chart: &ChartSpec,
    limits: &SandboxLimits,
) -> Result<RawOutcome, Diagnostic> {
    let internal = |e: rquickjs::Error| Diagnostic::new(DiagnosticKind::Exception, format!("interpreter error: {e}"));
    let rt = Runtime::new().map_err(internal)?;
    rt.set_memory_limit(limits.memory_bytes);
    rt.set_max_stack_size(limits.stack_bytes);
    let blocked = Arc::new(Mutex::new(Vec::<String>::new()));
    rt.set_loader(BlockImports(blocked.clone()), BlockImports(blocked.clone()));
    let timed_out = Arc::new(AtomicBool::new(false));
    let deadline = Instant::now() + limits.budget;
    {
        let timed_out = timed_out.clone();
        rt.set_interrupt_handler(Some(Box::new(move || {
            if Instant::now() >= deadline {
                timed_out.store(true, Ordering::SeqCst);
                true
            } else {
                false
            }
        })));
    }
    let ctx = Context::full(&rt).map_err(internal)?;
    let dom_json = serde_json::to_string(dom).expect("dom serializes");
    let chart_json = chart.to_json_string();

    let outcome: Result<String, String> = ctx.with(|ctx| {
        let host_blocked = {
            let blocked = blocked.clone();
            Function::new(ctx.clone(), move |name: String| {
                blocked.lock().expect("poisoned").push(name);
            })
        };
        let setup = || -> rquickjs::Result<Object<'_>> {
            let factory: Function = ctx.eval(PRELUDE)?;
            factory.call((ctx.globals(), host_blocked?))
        };
        let api = setup().map_err(|e| format!("sandbox setup failed: {e}"))?;
        let describe = |e: rquickjs::Error| -> String {
            if e.is_exception() {
                let thrown = ctx.catch();
                api.get::<_, Function>("describe")
                    .and_then(|d| d.call::<_, String>((thrown,)))
                    .unwrap_or_else(|_| "uncaught exception".into())
            } else {
                e.to_string()
            }
        };
        api.get::<_, Function>("setup")
            .and_then(|f| f.call::<_, ()>((dom_json,)))
            .map_err(describe)?;
        ctx.eval::<(), _>(source.as_bytes().to_vec()).map_err(describe)?;
        api.get::<_, Function>("invoke")
            .and_then(|f| f.call::<_, String>((target as u32, chart_json)))
            .map_err(describe)
    });

    // Drain promise jobs so deferred host access (dynamic imports, promise
    // callbacks) is still observed, under the same deadline.
    while rt.is_job_pending() && !timed_out.load(Ordering::SeqCst) {
        if rt.execute_pending_job().is_err() && timed_out.load(Ordering::SeqCst) {
            break;
        }
    }

    if timed_out.load(Ordering::SeqCst) {
        return Err(Diagnostic::new(
            DiagnosticKind::Timeout,
            format!("callback exceeded the {} ms budget", limits.budget.as_millis()),
        ));
    }
    let attempts = blocked.lock().expect("poisoned").clone();
    if !attempts.is_empty() {
        return Err(Diagnostic::new(
            DiagnosticKind::IoBlocked,
            format!("callback attempted host access: {}", attempts.join(", ")),
        ));
    }
    let text = outcome.map_err(|m| Diagnostic::new(DiagnosticKind::Exception, m))?;
    serde_json::from_str(&text)
        .map_err(|e| Diagnostic::new(DiagnosticKind::Exception, format!("unreadable sandbox output: {e}")))
}

/// Probe event for one input, per the fixed probe policy: ranges and
/// numbers get the midpoint of their bounds, checkboxes and radios are
/// toggled, selects pick their first option, colors and dates get fixed
/// values and everything else a fixed string.
pub fn probe_event(dom: &WidgetDom, index: usize) -> Option<SyntheticEvent> {
    let node = &dom.elements[index];
    let id = node.id()?.to_string();
    let num = |name: &str, default: f64| {
        node.attr(name).and_then(|v| v.trim().parse::<f64>().ok()).filter(|v| v.is_finite()).unwrap_or(default)
    };
    let value = match (node.tag.as_str(), node.input_type().as_str()) {
        ("select", _) => {
            let mut stack: Vec<usize> = node.children.iter().rev().copied().collect();
            let mut first = None;
            while let Some(i) = stack.pop() {
                let e = &dom.elements[i];
                if e.tag == "option" {
                    first = Some(e.attr("value").map_or_else(|| e.text.trim().to_string(), str::to_string));
                    break;
                }
                stack.extend(e.children.iter().rev());
            }
            EventValue::Text(first?)
        }
        ("input", "range" | "number") => {
            let (min, max) = (num("min", 0.0), num("max", 100.0));
            EventValue::Number(if max < min { min } else { min + (max - min) / 2.0 })
        }
        ("input", "checkbox" | "radio") => EventValue::Bool(!node.checked),
        ("input", "color") => EventValue::Text(PROBE_COLOR.into()),
        ("input", "date") => EventValue::Text(node.attr("min").unwrap_or(PROBE_DATE).to_string()),
        _ => EventValue::Text(PROBE_TEXT.into()),
    };
    Some(SyntheticEvent::change(id, value))
}

pub const PROBE_TEXT: &str = "probe";
pub const PROBE_COLOR: &str = "#1f77b4";
pub const PROBE_DATE: &str = "2005-01-01";

/// Fires one probe event per interactive input, each against the initial
/// form state and `chart`.
pub fn smoke_test(w: &Widget, chart: &ChartSpec) -> AnalysisReport {
    smoke_test_with(w, chart, &SandboxLimits::default())
}

pub fn smoke_test_with(w: &Widget, chart: &ChartSpec, limits: &SandboxLimits) -> AnalysisReport {
    let fragment = match parse_fragment(&w.markup) {
        Ok(f) => f,
        Err(e) => {
            return AnalysisReport::from_findings(vec![Finding::error(
                Rule::Parse,
                format!("markup does not parse: {}", e.message),
                Some(Location::line_col(crate::analysis::SourceKind::Markup, e.line, e.column)),
            )])
        }
    };
    let dom = WidgetDom::from_fragment(&fragment);
    let inputs: Vec<usize> = fragment
        .interactive_inputs()
        .into_iter()
        .map(|e| fragment.elements.iter().position(|x| std::ptr::eq(x, e)).expect("element of fragment"))
        .collect();
    if inputs.is_empty() {
        return AnalysisReport::from_findings(vec![Finding::warning(Rule::SmokeTest, "no interactive inputs", None)]);
    }
    let mut findings = Vec::new();
    for index in inputs {
        let Some(ev) = probe_event(&dom, index) else {
            findings.push(Finding::warning(
                Rule::SmokeTest,
                format!("<{}> input without an id cannot be probed", dom.elements[index].tag),
                None,
            ));
            continue;
        };
        let result = run_callback_in(w, &ev, chart, &mut dom.clone(), limits);
        for d in result.diagnostics {
            let value = serde_json::to_string(&ev.value).unwrap_or_default();
            findings.push(Finding::error(
                Rule::SmokeTest,
                format!("probe #{} = {value}: {}: {}", ev.target_id, d.kind.as_str(), d.message),
                d.pointer.map(Location::pointer),
            ));
        }
    }
    AnalysisReport::from_findings(findings)
}

#[cfg(test)]
mod tests;
