use std::sync::Arc;

use dynavis_core::gateway::scripted::ScriptedTransport;
use dynavis_core::gateway::{GatewayMode, ReplayStore};
use dynavis_core::synthesis::auto_widget_command;
use proptest::prelude::*;
use serde_json::json;

use super::*;

const STOCKS: &[u8] = include_bytes!("../../../../fixtures/data/stocks.csv");

const CREATE: &str = "create a line chart showing the stock trends";
const LEGEND: &str = "move the legend to the top left";
const FILTER: &str = "filter the data by stock symbol";
const COLOR: &str = "make the lines thicker";

fn line_chart() -> Value {
    json!({
        "mark": "line",
        "encoding": {
            "x": {"field": "date", "type": "temporal"},
            "y": {"field": "price", "type": "quantitative"},
            "color": {"field": "symbol", "type": "nominal"}
        }
    })
}

fn legend_chart() -> Value {
    let mut v = line_chart();
    v["encoding"]["color"]["legend"] = json!({"orient": "top-left"});
    v
}

fn spec_reply(v: &Value) -> String {
    format!("```json\n{}\n```", serde_json::to_string_pretty(v).unwrap())
}

fn widget_reply(html: &str, js: &str) -> String {
    format!("```html\n{html}\n```\n\n```javascript\n{js}\n```")
}

fn legend_widget() -> String {
    widget_reply(
        r#"<div data-widget-title="Legend position">
  <select id="legend-orient">
    <option value="left">left</option>
    <option value="top-left" selected>top-left</option>
    <option value="right">right</option>
  </select>
</div>"#,
        r#"function callback(event, chart) {
  if (!chart.encoding.color.legend) { chart.encoding.color.legend = {}; }
  chart.encoding.color.legend.orient = document.getElementById('legend-orient').value;
  return [[], chart];
}"#,
    )
}

fn filter_widget() -> String {
    widget_reply(
        r#"<div data-widget-title="Symbols">
  <label><input type="checkbox" id="sym-IBM" value="IBM" checked> IBM</label>
  <label><input type="checkbox" id="sym-MSFT" value="MSFT" checked> MSFT</label>
</div>"#,
        r#"function callback(event, chart) {
  const picked = Array.from(document.querySelectorAll('input:checked')).map(el => el.value);
  return [[{filter: {field: 'symbol', oneOf: picked}}], chart];
}"#,
    )
}

fn width_widget() -> String {
    widget_reply(
        r#"<div data-widget-title="Line width"><input type="range" id="stroke" min="1" max="8" value="2"></div>"#,
        r#"function callback(event, chart) {
  chart.mark = {type: 'line', strokeWidth: Number(event.target.value)};
  return [[], chart];
}"#,
    )
}

fn legend_auto_command() -> String {
    let before = ChartSpec::from_value(line_chart()).unwrap();
    let mut after = legend_chart();
    after["data"] = json!({"name": "dataset"});
    let mut before_v = before.to_value();
    before_v["data"] = json!({"name": "dataset"});
    auto_widget_command(&ChartSpec::from_value(before_v).unwrap(), &ChartSpec::from_value(after).unwrap()).unwrap()
}

fn script() -> Vec<(String, Vec<String>)> {
    vec![
        (CREATE.into(), vec![spec_reply(&line_chart())]),
        (LEGEND.into(), vec![spec_reply(&legend_chart())]),
        (legend_auto_command(), vec![legend_widget()]),
        (FILTER.into(), vec![filter_widget()]),
        (COLOR.into(), vec![width_widget()]),
        ("broken".into(), vec!["no code here".into()]),
    ]
}

fn engine_with(config: EngineConfig) -> (Arc<ScriptedTransport>, Engine) {
    let t = Arc::new(ScriptedTransport::by_command(script()));
    let gw = LlmGateway::new(GatewayMode::Live, t.clone(), Arc::new(ReplayStore::in_memory()));
    (t, Engine::new(Arc::new(gw), config).unwrap())
}

fn engine() -> Engine {
    engine_with(EngineConfig {
        enrich: false,
        ..EngineConfig::default()
    })
    .1
}

fn session(e: &Engine) -> String {
    e.create_session(Payload::Csv(STOCKS.to_vec())).unwrap().session_id
}

fn with_filter(e: &Engine) -> (String, String) {
    let id = session(e);
    e.chart_command(&id, CREATE).unwrap();
    let w = e.widget_command(&id, FILTER).unwrap().widget.widget;
    assert!(w.is_transform_widget);
    (id, w.id)
}

#[test]
fn import_summarizes_three_columns() {
    let e = engine();
    let created = e.create_session(Payload::Csv(STOCKS.to_vec())).unwrap();
    let names: Vec<&str> = created.summary.columns.iter().map(|c| c.stats.name.as_str()).collect();
    assert_eq!(names, ["symbol", "date", "price"]);
    let view = e.snapshot(&created.session_id).unwrap();
    assert!(view.base_chart.is_none() && view.widgets.is_empty());
    assert_eq!(view.event_count, 1);
    assert_eq!(e.create_session(Payload::Csv(Vec::new())).unwrap_err().error_kind, ErrorKind::ParseError);
}

#[test]
fn enrichment_runs_on_import() {
    let t = Arc::new(ScriptedTransport::by_command([(
        dynavis_core::summary::ENRICH_COMMAND,
        vec![r#"```json
{"dataset_description": "monthly stock prices", "columns": [{"name": "price", "semantic_type": "currency", "description": "closing price in USD"}]}
```"#],
    )]));
    let gw = LlmGateway::new(GatewayMode::Live, t, Arc::new(ReplayStore::in_memory()));
    let e = Engine::new(Arc::new(gw), EngineConfig::default()).unwrap();
    let created = e.create_session(Payload::Csv(STOCKS.to_vec())).unwrap();
    assert_eq!(created.summary.dataset_description, "monthly stock prices");
    assert_eq!(created.summary.column("price").unwrap().semantic_type, "currency");
}

#[test]
fn creation_then_edit_registers_auto_widget() {
    let e = engine();
    let id = session(&e);
    let created = e.chart_command(&id, CREATE).unwrap();
    assert!(created.auto_widget.is_none());
    assert!(created.meta.auto_widget_command.is_none());
    assert_eq!(created.chart.document()["data"], json!({"name": "dataset"}));

    let edited = e.chart_command(&id, LEGEND).unwrap();
    assert_eq!(edited.chart.document()["encoding"]["color"]["legend"]["orient"], "top-left");
    let w = edited.auto_widget.unwrap();
    assert_eq!(w.widget.title, "Legend position");
    assert_eq!(w.widget.id, "w1");
    assert_eq!(edited.meta.auto_widget_command.as_deref(), Some(legend_auto_command().as_str()));

    let kinds: Vec<TelemetryKind> = e.telemetry(&id).unwrap().iter().map(|t| t.kind).collect();
    assert_eq!(kinds, [TelemetryKind::NlEdit, TelemetryKind::NlEdit]);
}

#[test]
fn failed_synthesis_leaves_session_untouched() {
    let e = engine();
    let id = session(&e);
    e.chart_command(&id, CREATE).unwrap();
    let before = e.state(&id).unwrap();
    let err = e.chart_command(&id, "broken").unwrap_err();
    assert_eq!(err.error_kind, ErrorKind::SynthesisFailed);
    assert_eq!(e.state(&id).unwrap(), before);
    let log = e.events(&id).unwrap();
    let last = log.last().unwrap();
    assert_eq!(err.transcript_ref, Some(format!("/api/sessions/{id}/events/{}", last.seq)));
    let Event::CommandFailed { transcript, .. } = &last.event else { panic!("{last:?}") };
    assert_eq!(transcript.iter().filter(|t| t.kind == dynavis_core::synthesis::EntryKind::Reply).count(), 4);
    assert_eq!(e.telemetry(&id).unwrap().last().unwrap().kind, TelemetryKind::Error);
}

#[test]
fn widget_commands_need_a_chart_and_leave_it_alone() {
    let e = engine();
    let id = session(&e);
    assert_eq!(e.widget_command(&id, FILTER).unwrap_err().error_kind, ErrorKind::NoChart);
    let chart = e.chart_command(&id, CREATE).unwrap().base_chart;
    let a = e.widget_command(&id, COLOR).unwrap();
    let b = e.widget_command(&id, COLOR).unwrap();
    assert_ne!(a.widget.widget.id, b.widget.widget.id);
    let view = e.snapshot(&id).unwrap();
    assert_eq!(view.base_chart.unwrap(), chart);
    let seqs: Vec<u64> = view.widgets.iter().map(|w| w.widget.seq).collect();
    assert_eq!(seqs, [2, 1]);
}

#[test]
fn widget_results_update_effective_spec() {
    let e = engine();
    let (id, wid) = with_filter(&e);
    let base = e.state(&id).unwrap().base_chart.unwrap().into_value();
    let filter = json!({"filter": {"field": "symbol", "oneOf": ["MSFT", "IBM"]}});
    let out = e.apply_widget_result(&id, &wid, json!([filter.clone()]), base.clone()).unwrap();
    let spec = out.effective_spec.unwrap();
    assert_eq!(spec.document()["transform"], json!([filter]));
    assert_eq!(e.state(&id).unwrap().registry.transforms_of(&wid).unwrap().len(), 1);

    let same = e.apply_widget_result(&id, &wid, json!([filter]), base.clone()).unwrap();
    assert_eq!(same.effective_spec.unwrap(), spec);
}

#[test]
fn rejected_results_preserve_state() {
    let e = engine();
    let (id, wid) = with_filter(&e);
    let before = e.state(&id).unwrap();
    let mut bad = before.base_chart.clone().unwrap().into_value();
    bad["encoding"]["x"]["bogus"] = json!(1);
    let err = e.apply_widget_result(&id, &wid, json!([]), bad).unwrap_err();
    assert_eq!(err.error_kind, ErrorKind::ValidationFailed);
    assert_eq!(err.detail_path.as_deref(), Some("/chart/encoding/x/bogus"));
    let base = before.base_chart.clone().unwrap().into_value();
    let err = e.apply_widget_result(&id, &wid, json!([{"filter": 5}]), base.clone()).unwrap_err();
    assert_eq!(err.detail_path.as_deref(), Some("/transforms/0"));
    let err = e.apply_widget_result(&id, &wid, json!(["x"]), base.clone()).unwrap_err();
    assert_eq!(err.detail_path.as_deref(), Some("/transforms/0"));
    assert_eq!(e.apply_widget_result(&id, "nope", json!([]), base).unwrap_err().error_kind, ErrorKind::NotFound);
    assert_eq!(e.state(&id).unwrap(), before);
}

#[test]
fn string_dates_in_results_are_repaired() {
    let e = engine();
    let (id, wid) = with_filter(&e);
    let base = e.state(&id).unwrap().base_chart.unwrap().into_value();
    let t = json!([{"filter": {"field": "date", "range": ["2004-03-14", "2006-01-01"]}}]);
    let spec = e.apply_widget_result(&id, &wid, t, base).unwrap().effective_spec.unwrap();
    assert_eq!(spec.document()["transform"][0]["filter"]["range"][0], json!({"year": 2004, "month": 3, "date": 14}));
}

#[test]
fn toggle_round_trip_restores_spec() {
    let e = engine();
    let (id, wid) = with_filter(&e);
    let base = e.state(&id).unwrap().base_chart.unwrap().into_value();
    let on = e
        .apply_widget_result(&id, &wid, json!([{"filter": {"field": "symbol", "oneOf": ["IBM"]}}]), base.clone())
        .unwrap()
        .effective_spec;
    let off = e.toggle(&id, &wid, false).unwrap().effective_spec.unwrap();
    assert_eq!(off.into_value(), {
        let mut b = base.clone();
        b["data"] = json!({"name": "dataset"});
        b
    });
    assert_eq!(e.toggle(&id, &wid, true).unwrap().effective_spec, on);
    let plain = e.widget_command(&id, COLOR).unwrap().widget.widget.id;
    assert_eq!(e.toggle(&id, &plain, false).unwrap_err().error_kind, ErrorKind::InvalidRequest);
    let after_delete = e.delete_widget(&id, &wid).unwrap().effective_spec.unwrap();
    assert!(after_delete.document().get("transform").is_none());
    assert_eq!(e.delete_widget(&id, &wid).unwrap_err().error_kind, ErrorKind::NotFound);
}

#[test]
fn log_replays_to_identical_state() {
    let e = engine();
    let (id, wid) = with_filter(&e);
    e.chart_command(&id, LEGEND).unwrap();
    let base = e.state(&id).unwrap().base_chart.unwrap().into_value();
    e.apply_widget_result(&id, &wid, json!([{"filter": {"field": "symbol", "oneOf": ["IBM"]}}]), base).unwrap();
    e.toggle(&id, &wid, false).unwrap();
    e.chart_command(&id, "broken").unwrap_err();
    let live = e.state(&id).unwrap();
    let replayed = SessionState::replay(&id, &e.events(&id).unwrap()).unwrap();
    assert_eq!(replayed.canonical(), live.canonical());
    assert_eq!(replayed, live);
}

#[test]
fn sessions_recover_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let config = EngineConfig {
        data_dir: Some(dir.path().to_path_buf()),
        enrich: false,
        snapshot_every: 3,
        ..EngineConfig::default()
    };
    let (_, e) = engine_with(config.clone());
    let (id, wid) = with_filter(&e);
    e.chart_command(&id, LEGEND).unwrap();
    e.toggle(&id, &wid, false).unwrap();
    e.chart_command(&id, "broken").unwrap_err();
    let live = e.state(&id).unwrap();
    let telemetry = e.telemetry(&id).unwrap();
    assert!(dir.path().join("sessions").join(&id).join(crate::persist::SNAPSHOT_FILE).exists());
    drop(e);

    let (_, again) = engine_with(config);
    assert_eq!(again.session_ids(), [id.clone()]);
    assert_eq!(again.state(&id).unwrap().canonical(), live.canonical());
    assert_eq!(again.telemetry(&id).unwrap(), telemetry);
    let n = again.events(&id).unwrap().len();
    again.toggle(&id, &wid, true).unwrap();
    assert_eq!(again.events(&id).unwrap().last().unwrap().seq, n as u64 + 1);
}

#[test]
fn export_inlines_rows() {
    let e = engine();
    let id = session(&e);
    assert_eq!(e.export(&id).unwrap_err().error_kind, ErrorKind::NoChart);
    e.chart_command(&id, CREATE).unwrap();
    let full = e.export(&id).unwrap();
    assert_eq!(full["data"]["values"].as_array().unwrap().len(), 560);
    let reimported = e.create_session(Payload::Json(full)).unwrap().session_id;
    assert_eq!(e.effective_spec(&reimported).unwrap(), e.effective_spec(&id).unwrap());
}

#[derive(Debug, Clone)]
enum Op {
    Result(usize, Vec<&'static str>),
    Toggle(usize, bool),
    Delete(usize),
    Widget,
}

fn op() -> impl Strategy<Value = Op> {
    let syms = proptest::sample::subsequence(vec!["AAPL", "AMZN", "GOOG", "IBM", "MSFT"], 0..=5);
    prop_oneof![
        4 => (0usize..4, syms).prop_map(|(w, s)| Op::Result(w, s)),
        3 => (0usize..4, any::<bool>()).prop_map(|(w, b)| Op::Toggle(w, b)),
        1 => (0usize..4).prop_map(Op::Delete),
        1 => Just(Op::Widget),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn any_operation_sequence_replays(ops in proptest::collection::vec(op(), 1..12)) {
        let e = engine();
        let (id, first) = with_filter(&e);
        let mut widgets = vec![first];
        for op in ops {
            let base = e.state(&id).unwrap().base_chart.unwrap().into_value();
            let pick = |i: usize| widgets[i % widgets.len()].clone();
            let _ = match op {
                Op::Result(i, syms) => e
                    .apply_widget_result(&id, &pick(i), json!([{"filter": {"field": "symbol", "oneOf": syms}}]), base)
                    .map(|_| ()),
                Op::Toggle(i, on) => e.toggle(&id, &pick(i), on).map(|_| ()),
                Op::Delete(i) => e.delete_widget(&id, &pick(i)).map(|_| ()),
                Op::Widget => e.widget_command(&id, FILTER).map(|r| widgets.push(r.widget.widget.id)),
            };
        }
        let live = e.state(&id).unwrap();
        let replayed = SessionState::replay(&id, &e.events(&id).unwrap()).unwrap();
        prop_assert_eq!(replayed.canonical(), live.canonical());
        prop_assert!(live.registry.check_invariants().is_ok());
    }
}
