use std::sync::Arc;

use serde_json::json;

use super::*;
use crate::data::DataTable;
use crate::gateway::scripted::ScriptedTransport;
use crate::gateway::{GatewayMode, ReplayStore};
use crate::summary::summarize;

const STOCKS: &[u8] = include_bytes!("../../../../fixtures/data/stocks.csv");

fn stocks() -> (DataTable, DataSummary) {
    let t = DataTable::from_csv(STOCKS).unwrap();
    let s = summarize(&t, 5).unwrap();
    (t, s)
}

fn scripted(script: Vec<(&str, Vec<String>)>) -> (Arc<ScriptedTransport>, LlmGateway) {
    let t = Arc::new(ScriptedTransport::by_command(script));
    let gw = LlmGateway::new(GatewayMode::Live, t.clone(), Arc::new(ReplayStore::in_memory()));
    (t, gw)
}

fn json_reply(v: &Value) -> String {
    format!("Here is the chart:\n```json\n{}\n```", serde_json::to_string_pretty(v).unwrap())
}

fn line_chart() -> Value {
    json!({
        "$schema": "https://vega.github.io/schema/vega-lite/v5.json",
        "mark": "line",
        "encoding": {
            "x": {"field": "date", "type": "temporal"},
            "y": {"field": "price", "type": "quantitative"},
            "color": {"field": "symbol", "type": "nominal"}
        }
    })
}

const CREATE: &str = "create a line chart showing the stock trends";
const BAD_JSON: &str = "```json\n{\"mark\": \"line\",\n```";
const BAD_FIELD: &str = "```json\n{\"mark\": \"line\", \"encoding\": {\"x\": {\"field\": \"when\", \"type\": \"temporal\"}}}\n```";

fn run_chart(replies: Vec<String>) -> Result<SynthesisOutcome<ChartResult>, SynthesisError> {
    let (_, s) = stocks();
    let (_, gw) = scripted(vec![(CREATE, replies)]);
    synthesize_chart(&s, CREATE, None, &gw)
}

fn counts(o: &SynthesisOutcome<ChartResult>) -> (u32, u32) {
    assert_eq!(RetryCounts::from_transcript(&o.transcript), o.counts());
    (o.attempts, o.repair_rounds)
}

#[test]
fn valid_first_reply() {
    let o = run_chart(vec![json_reply(&line_chart())]).unwrap();
    assert_eq!(counts(&o), (1, 0));
    assert_eq!(o.retries(), 0);
    let chart = o.result.chart.to_value();
    assert_eq!(chart["mark"], "line");
    assert_eq!(chart["encoding"]["x"], json!({"field": "date", "type": "temporal"}));
    assert_eq!(chart["encoding"]["color"]["field"], "symbol");
    assert_eq!(chart["data"], json!({"name": "dataset"}));
    assert!(validate_spec(&o.result.chart).ok);
}

#[test]
fn repair_in_conversation() {
    let o = run_chart(vec![BAD_JSON.into(), json_reply(&line_chart())]).unwrap();
    assert_eq!(counts(&o), (1, 1));
    let kinds: Vec<EntryKind> = o.transcript.iter().map(|e| e.kind).collect();
    assert_eq!(kinds, [EntryKind::Prompt, EntryKind::Reply, EntryKind::RepairRequest, EntryKind::Reply]);
    assert!(o.transcript[2].content.contains("invalid JSON"));
}

#[test]
fn fresh_retry_after_failed_repair() {
    let o = run_chart(vec![BAD_JSON.into(), BAD_FIELD.into(), json_reply(&line_chart())]).unwrap();
    assert_eq!(counts(&o), (2, 0));
    assert_eq!(o.llm_calls, 3);
    assert!(o.transcript[4].content.contains("attempt 2"));
    let o = run_chart(vec![BAD_JSON.into(), BAD_JSON.into(), "no block".into(), json_reply(&line_chart())]).unwrap();
    assert_eq!(counts(&o), (2, 1));
    assert_eq!(o.retries(), 3);
}

#[test]
fn terminal_failure_uses_whole_budget() {
    let err = run_chart(vec!["prose only".into()]).unwrap_err();
    let SynthesisError::Exhausted(ex) = err else { panic!("expected exhaustion") };
    assert_eq!((ex.attempts, ex.repair_rounds, ex.llm_calls), (MAX_ATTEMPTS, MAX_REPAIRS_PER_ATTEMPT, 4));
    assert_eq!(ex.last_error, "missing code block json");
    let c = RetryCounts::from_transcript(&ex.transcript);
    assert_eq!((c.attempts, c.repair_rounds, c.llm_calls), (ex.attempts, ex.repair_rounds, ex.llm_calls));
}

#[test]
fn semantic_field_errors_are_repaired() {
    let o = run_chart(vec![BAD_FIELD.into(), json_reply(&line_chart())]).unwrap();
    assert_eq!(counts(&o), (1, 1));
    assert!(o.transcript[2].content.contains("when"));
}

#[test]
fn string_dates_are_normalized_before_validation() {
    let mut spec = line_chart();
    spec["transform"] = json!([{"filter": {"field": "date", "range": ["2004-03-14", "2006-01-01"]}}]);
    let o = run_chart(vec![json_reply(&spec)]).unwrap();
    assert_eq!(counts(&o), (1, 0));
    assert_eq!(o.result.chart.to_value()["transform"][0]["filter"]["range"][0], json!({"year": 2004, "month": 3, "date": 14}));
    assert_eq!(o.result.repairs.len(), 2);
}

#[test]
fn requests_carry_summary_not_rows() {
    let (table, summary) = stocks();
    let (transport, gw) = scripted(vec![(CREATE, vec![BAD_JSON.into(), json_reply(&line_chart())])]);
    synthesize_chart(&summary, CREATE, None, &gw).unwrap();
    let rendered = summary.render_for_prompt();
    let price = table.column_index("price").unwrap();
    let shown: BTreeSet<String> = serde_json::from_str::<Value>(&rendered).unwrap().to_string().split(|c: char| !(c.is_ascii_digit() || c == '.')).map(str::to_string).collect();
    let hidden: Vec<String> = table
        .rows()
        .iter()
        .map(|r| r[price].to_string())
        .filter(|p| p.contains('.') && !shown.contains(p))
        .take(50)
        .collect();
    assert!(!hidden.is_empty());
    for req in transport.captured() {
        let user = &req.messages[1].content;
        assert!(user.contains(&rendered));
        for m in &req.messages {
            for p in &hidden {
                assert!(!m.content.contains(p.as_str()), "row value {p} leaked");
            }
        }
    }
}

fn chart() -> ChartSpec {
    let mut v = line_chart();
    v["data"] = json!({"name": "dataset"});
    ChartSpec::from_value(v).unwrap()
}

fn widget_reply(html: &str, js: &str) -> String {
    format!("Sure.\n```html\n{html}\n```\n\n```javascript\n{js}\n```\n")
}

const COLOR_CMD: &str = "change the color of each stock symbol";
const COLOR_HTML: &str = r##"<div data-widget-title="Stock color picker">
  <label>AAPL <input type="color" id="color-AAPL" value="#4c78a8"></label>
  <label>AMZN <input type="color" id="color-AMZN" value="#f58518"></label>
  <label>GOOG <input type="color" id="color-GOOG" value="#e45756"></label>
  <label>IBM <input type="color" id="color-IBM" value="#72b7b2"></label>
  <label>MSFT <input type="color" id="color-MSFT" value="#54a24b"></label>
</div>"##;
const COLOR_JS: &str = r#"function callback(event, chart) {
  const symbols = ['AAPL', 'AMZN', 'GOOG', 'IBM', 'MSFT'];
  const colors = symbols.map(s => document.getElementById('color-' + s).value);
  if (!chart.encoding.color.scale) { chart.encoding.color.scale = {}; }
  chart.encoding.color.scale.domain = symbols;
  chart.encoding.color.scale.range = colors;
  const transforms = [];
  return [transforms, chart];
}"#;

#[test]
fn color_widget_has_one_input_per_symbol() {
    let (_, s) = stocks();
    let (_, gw) = scripted(vec![(COLOR_CMD, vec![widget_reply(COLOR_HTML, COLOR_JS)])]);
    let o = synthesize_widget(&s, &chart(), COLOR_CMD, "w1", &BTreeSet::new(), &gw).unwrap();
    let w = &o.result.widget;
    assert_eq!(w.title, "Stock color picker");
    assert!(!w.is_transform_widget);
    let fragment = parse_fragment(&w.markup).unwrap();
    let mut inputs: Vec<&str> = fragment.interactive_inputs().iter().filter_map(|e| e.id()).collect();
    inputs.sort();
    let mut symbols: Vec<String> = s.column("symbol").unwrap().stats.samples.iter().map(|v| format!("color-{}", v.as_str().unwrap())).collect();
    symbols.sort();
    assert_eq!(inputs, symbols);
}

#[test]
fn misnamed_callback_is_repaired() {
    let (_, s) = stocks();
    let wrong = COLOR_JS.replace("function callback", "function onChange");
    let (_, gw) = scripted(vec![(COLOR_CMD, vec![widget_reply(COLOR_HTML, &wrong), widget_reply(COLOR_HTML, COLOR_JS)])]);
    let o = synthesize_widget(&s, &chart(), COLOR_CMD, "w1", &BTreeSet::new(), &gw).unwrap();
    assert_eq!((o.attempts, o.repair_rounds), (1, 1));
    assert!(o.transcript[2].content.contains("signature"));
}

const COLOR_JS_LITERAL: &str = r#"function callback(event, chart) {
  const colors = [
    document.getElementById('color-AAPL').value,
    document.getElementById('color-AMZN').value,
    document.getElementById('color-GOOG').value,
    document.getElementById('color-IBM').value,
    document.getElementById('color-MSFT').value,
  ];
  if (!chart.encoding.color.scale) { chart.encoding.color.scale = {}; }
  chart.encoding.color.scale.domain = ['AAPL', 'AMZN', 'GOOG', 'IBM', 'MSFT'];
  chart.encoding.color.scale.range = colors;
  return [[], chart];
}"#;

#[test]
fn renamed_id_behind_dynamic_lookup_is_rejected() {
    let (_, s) = stocks();
    let (_, gw) = scripted(vec![(COLOR_CMD, vec![widget_reply(COLOR_HTML, COLOR_JS)])]);
    let existing: BTreeSet<String> = ["color-IBM".to_string()].into();
    let err = synthesize_widget(&s, &chart(), COLOR_CMD, "w2", &existing, &gw).unwrap_err();
    let SynthesisError::Exhausted(ex) = err else { panic!() };
    assert!(ex.last_error.contains("probe #color-IBM_2"));
}

#[test]
fn colliding_ids_are_renamed() {
    let (_, s) = stocks();
    let (_, gw) = scripted(vec![(COLOR_CMD, vec![widget_reply(COLOR_HTML, COLOR_JS_LITERAL)])]);
    let existing: BTreeSet<String> = ["color-IBM".to_string()].into();
    let o = synthesize_widget(&s, &chart(), COLOR_CMD, "w2", &existing, &gw).unwrap();
    let r = &o.result;
    assert_eq!(r.renames.len(), 1);
    assert_eq!(r.renames.entries()[0].new_id, "color-IBM_2");
    assert!(r.widget.markup.contains("id=\"color-IBM_2\""));
    assert!(r.widget.callback_source.contains("getElementById('color-IBM_2')"));
}

#[test]
fn failing_smoke_test_is_rejected() {
    let (_, s) = stocks();
    let throws = COLOR_JS.replace("const transforms = [];", "throw new Error('nope');");
    let (_, gw) = scripted(vec![(COLOR_CMD, vec![widget_reply(COLOR_HTML, &throws)])]);
    let err = synthesize_widget(&s, &chart(), COLOR_CMD, "w1", &BTreeSet::new(), &gw).unwrap_err();
    let SynthesisError::Exhausted(ex) = err else { panic!() };
    assert_eq!(ex.attempts, 2);
    assert!(ex.findings.iter().all(|f| f.rule == crate::analysis::Rule::SmokeTest));
    assert!(ex.last_error.contains("Error: nope"));
}

#[test]
fn auto_widget_command_lists_changed_leaves() {
    let before = chart();
    let after = crate::chart::set_property(&before, "/encoding/color/legend/orient", json!("top-left")).unwrap();
    assert_eq!(auto_widget_command(&before, &after).unwrap(), "widget to adjust: /encoding/color/legend");
    let after2 = crate::chart::set_property(&after, "/encoding/color/legend/orient", json!("left")).unwrap();
    assert_eq!(auto_widget_command(&after, &after2).unwrap(), "widget to adjust: /encoding/color/legend/orient");
    assert!(auto_widget_command(&before, &before).is_none());
}

#[test]
fn empty_command_is_rejected() {
    let (_, s) = stocks();
    let (_, gw) = scripted(vec![]);
    assert!(matches!(synthesize_chart(&s, "  ", None, &gw), Err(SynthesisError::InvalidRequest(_))));
}
