//! Hand-written model replies for the fixture scripts. `record-fixtures`
//! serves these through a scripted transport in record mode to produce the
//! replay stores under `fixtures/llm/`.

use dynavis_core::chart::ChartSpec;
use std::path::Path;
use std::sync::Arc;

use dynavis_core::gateway::scripted::ScriptedTransport;
use dynavis_core::gateway::{GatewayMode, LlmGateway, ReplayStore};
use dynavis_core::summary::ENRICH_COMMAND;
use dynavis_core::synthesis::auto_widget_command;
use serde_json::{json, Value};

use crate::runner::{replay, ReplayOptions, REPLAY_SESSION_ID};
use crate::script::SessionScript;

/// Command → replies in call order.
pub type Replies = Vec<(String, Vec<String>)>;

/// Fixture sets: script name and its replies.
pub fn sets() -> Vec<(&'static str, Replies)> {
    vec![
        ("scenario", scenario()),
        ("retry_paths", retry_paths()),
        ("lifecycle", lifecycle()),
    ]
}

pub fn transport(replies: Replies) -> ScriptedTransport {
    ScriptedTransport::by_command(replies)
}

/// Output of one recording run.
pub struct Recording {
    /// Model replies as sorted JSONL, the content of `recorded.jsonl`.
    pub replies: String,
    /// The session's event log as JSONL.
    pub events: String,
    /// Canonical JSON of the finished session state.
    pub canonical: String,
}

/// Runs the fixture script `name` in record mode against `replies`. Any
/// failed step is an error.
pub fn record(root: &Path, name: &str, replies: Replies) -> Result<Recording, String> {
    let store = Arc::new(ReplayStore::in_memory());
    let transport = Arc::new(transport(replies));
    let llm = Arc::new(LlmGateway::new(GatewayMode::Record, transport, store.clone()));
    let path = root.join("scripts").join(format!("{name}.json"));
    let script = SessionScript::load(&path).map_err(|e| e.to_string())?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let (report, engine) = replay(&script, dir, llm, &ReplayOptions::default()).map_err(|e| e.to_string())?;
    if let Some(s) = report.steps.iter().find(|s| !s.ok) {
        return Err(format!(
            "step {} ({}) failed: {}",
            s.index,
            s.op,
            s.message.as_deref().unwrap_or("")
        ));
    }
    let mut out = Recording {
        replies: String::new(),
        events: String::new(),
        canonical: String::new(),
    };
    for r in store.records() {
        out.replies.push_str(&serde_json::to_string(&r).expect("record serializes"));
        out.replies.push('\n');
    }
    for e in engine.events(REPLAY_SESSION_ID).map_err(|e| e.to_string())? {
        out.events.push_str(&serde_json::to_string(&e).expect("entry serializes"));
        out.events.push('\n');
    }
    out.canonical = engine.state(REPLAY_SESSION_ID).map_err(|e| e.to_string())?.canonical();
    Ok(out)
}

pub const DATASET_DESCRIPTION: &str = "stock prices for top 5 tech companies for 10 years";

fn spec_reply(v: &Value) -> String {
    format!(
        "Here is the updated specification.\n\n```json\n{}\n```",
        serde_json::to_string_pretty(v).expect("spec serializes")
    )
}

fn widget_reply(html: &str, js: &str) -> String {
    format!("```html\n{}\n```\n\n```javascript\n{}\n```", html.trim(), js.trim())
}

fn enrich_reply() -> String {
    let v = json!({
        "dataset_description": DATASET_DESCRIPTION,
        "columns": [
            {"name": "symbol", "semantic_type": "company ticker", "description": "Stock ticker symbol of the company"},
            {"name": "date", "semantic_type": "date", "description": "Month of the observation"},
            {"name": "price", "semantic_type": "currency", "description": "Stock price in USD"}
        ]
    });
    format!("```json\n{}\n```", serde_json::to_string_pretty(&v).expect("serializes"))
}

/// Chart as the engine stores it: bound to the named dataset.
fn bound(v: &Value) -> ChartSpec {
    let mut v = v.clone();
    v["data"] = json!({"name": "dataset"});
    ChartSpec::from_value(v).expect("object")
}

fn auto_command(before: &Value, after: &Value) -> String {
    auto_widget_command(&bound(before), &bound(after)).expect("the edit changes the chart")
}

pub const CREATE: &str = "create a line chart showing the stock trends";
pub const LEGEND: &str = "move the legend to the left of the chart";
pub const XLABELS: &str = "increase the x-axis text size to 20 and rotate the labels by 60 degrees";
pub const COLORS: &str = "change the color of each stock symbol";
pub const COMPARE: &str = "compare only MSFT and IBM";
pub const DATES: &str = "add a date slicer to zoom into a smaller time window";
pub const YRANGE: &str = "add a widget to slice the y-axis range";

pub const IBM_COLOR: &str = "#d62728";

const LEGEND_HTML: &str = r#"
<div data-widget-title="Legend position">
  <label for="legend-orient">Legend position</label>
  <select id="legend-orient">
    <option value="left" selected>left</option>
    <option value="right">right</option>
    <option value="top">top</option>
    <option value="bottom">bottom</option>
    <option value="top-left">top-left</option>
    <option value="top-right">top-right</option>
    <option value="bottom-left">bottom-left</option>
    <option value="bottom-right">bottom-right</option>
  </select>
</div>"#;

const LEGEND_JS: &str = r#"
function callback(event, chart) {
  if (!chart.encoding.color.legend) {
    chart.encoding.color.legend = {};
  }
  chart.encoding.color.legend.orient = event.target.value;
  const transforms = [];
  return [transforms, chart];
}"#;

const XLABELS_HTML: &str = r#"
<div data-widget-title="x-axis Label Editor">
  <label for="x-font">Font size</label>
  <input type="range" id="x-font" min="8" max="30" step="1" value="20">
  <label for="x-angle">Rotation angle</label>
  <input type="number" id="x-angle" min="-90" max="90" step="5" value="60">
</div>"#;

const XLABELS_JS: &str = r#"
function callback(event, chart) {
  chart.encoding.x.axis = chart.encoding.x.axis || {};
  chart.encoding.x.axis.labelFontSize = Number(document.getElementById('x-font').value);
  chart.encoding.x.axis.labelAngle = Number(document.getElementById('x-angle').value);
  return [[], chart];
}"#;

const COLORS_HTML: &str = r##"
<div data-widget-title="Stock color picker">
  <label>AAPL <input type="color" id="color-AAPL" value="#4c78a8"></label>
  <label>AMZN <input type="color" id="color-AMZN" value="#f58518"></label>
  <label>GOOG <input type="color" id="color-GOOG" value="#e45756"></label>
  <label>IBM <input type="color" id="color-IBM" value="#72b7b2"></label>
  <label>MSFT <input type="color" id="color-MSFT" value="#54a24b"></label>
</div>"##;

const COLORS_JS: &str = r#"
function callback(event, chart) {
  const range = [
    document.getElementById('color-AAPL').value,
    document.getElementById('color-AMZN').value,
    document.getElementById('color-GOOG').value,
    document.getElementById('color-IBM').value,
    document.getElementById('color-MSFT').value
  ];
  if (!chart.encoding.color.scale) {
    chart.encoding.color.scale = {};
  }
  chart.encoding.color.scale.domain = ['AAPL', 'AMZN', 'GOOG', 'IBM', 'MSFT'];
  chart.encoding.color.scale.range = range;
  return [[], chart];
}"#;

const SYMBOLS_HTML: &str = r#"
<div data-widget-title="Symbol Filter">
  <label><input type="checkbox" id="sym-AAPL" value="AAPL"> AAPL</label>
  <label><input type="checkbox" id="sym-AMZN" value="AMZN"> AMZN</label>
  <label><input type="checkbox" id="sym-GOOG" value="GOOG"> GOOG</label>
  <label><input type="checkbox" id="sym-IBM" value="IBM" checked> IBM</label>
  <label><input type="checkbox" id="sym-MSFT" value="MSFT" checked> MSFT</label>
</div>"#;

// Takes over the symbol filter from the chart so the switch can disable it.
const SYMBOLS_JS: &str = r#"
function callback(event, chart) {
  const picked = Array.from(document.querySelectorAll('input[type=checkbox]:checked')).map(el => el.value);
  chart.transform = (chart.transform || []).filter(t => !(t.filter && t.filter.field === 'symbol'));
  if (chart.transform.length === 0) {
    delete chart.transform;
  }
  return [[{filter: {field: 'symbol', oneOf: picked}}], chart];
}"#;

const DATES_HTML: &str = r#"
<div data-widget-title="Date slicer">
  <label>From <input type="date" id="date-start" min="2000-01-01" max="2010-03-01" value="2000-01-01"></label>
  <label>To <input type="date" id="date-end" min="2000-01-01" max="2010-03-01" value="2010-03-01"></label>
</div>"#;

const DATES_JS: &str = r#"
function callback(event, chart) {
  const start = document.getElementById('date-start').value;
  const end = document.getElementById('date-end').value;
  return [[{filter: {field: 'date', range: [start, end]}}], chart];
}"#;

const YRANGE_HTML: &str = r#"
<div data-widget-title="y-axis range slicer">
  <label>Min <input type="number" id="y-min" min="0" max="800" step="10" value="0"></label>
  <label>Max <input type="number" id="y-max" min="0" max="800" step="10" value="800"></label>
</div>"#;

const YRANGE_JS: &str = r#"
function callback(event, chart) {
  const lo = Number(document.getElementById('y-min').value);
  const hi = Number(document.getElementById('y-max').value);
  chart.encoding.y.scale = {domain: [lo, hi]};
  chart.mark = {type: 'line', clip: true};
  return [[], chart];
}"#;

fn line_chart() -> Value {
    json!({
        "$schema": "https://vega.github.io/schema/vega-lite/v5.json",
        "mark": "line",
        "encoding": {
            "x": {"field": "date", "type": "temporal", "title": "Date"},
            "y": {"field": "price", "type": "quantitative", "title": "Price (USD)"},
            "color": {"field": "symbol", "type": "nominal", "title": "Symbol"}
        }
    })
}

/// Charts the model returns along the walkthrough, each built on the chart
/// the session holds at that point.
pub struct ScenarioCharts {
    pub created: Value,
    pub legend_left: Value,
    pub legend_top_left: Value,
    pub xlabels: Value,
    pub xlabels_tuned: Value,
    pub colored: Value,
    pub compared: Value,
}

pub fn scenario_charts() -> ScenarioCharts {
    let created = line_chart();
    let mut legend_left = created.clone();
    legend_left["encoding"]["color"]["legend"] = json!({"orient": "left"});
    let mut legend_top_left = legend_left.clone();
    legend_top_left["encoding"]["color"]["legend"]["orient"] = json!("top-left");
    let mut xlabels = legend_top_left.clone();
    xlabels["encoding"]["x"]["axis"] = json!({"labelFontSize": 20, "labelAngle": 60});
    let mut xlabels_tuned = xlabels.clone();
    xlabels_tuned["encoding"]["x"]["axis"] = json!({"labelFontSize": 15, "labelAngle": -45});
    let mut colored = xlabels_tuned.clone();
    colored["encoding"]["color"]["scale"] = json!({
        "domain": ["AAPL", "AMZN", "GOOG", "IBM", "MSFT"],
        "range": ["#4c78a8", "#f58518", "#e45756", IBM_COLOR, "#54a24b"]
    });
    let mut compared = colored.clone();
    compared["transform"] = json!([{"filter": {"field": "symbol", "oneOf": ["MSFT", "IBM"]}}]);
    ScenarioCharts {
        created,
        legend_left,
        legend_top_left,
        xlabels,
        xlabels_tuned,
        colored,
        compared,
    }
}

pub fn scenario() -> Replies {
    let c = scenario_charts();
    vec![
        (ENRICH_COMMAND.into(), vec![enrich_reply()]),
        (CREATE.into(), vec![spec_reply(&c.created)]),
        (LEGEND.into(), vec![spec_reply(&c.legend_left)]),
        (auto_command(&c.created, &c.legend_left), vec![widget_reply(LEGEND_HTML, LEGEND_JS)]),
        (XLABELS.into(), vec![spec_reply(&c.xlabels)]),
        (auto_command(&c.legend_top_left, &c.xlabels), vec![widget_reply(XLABELS_HTML, XLABELS_JS)]),
        (COLORS.into(), vec![widget_reply(COLORS_HTML, COLORS_JS)]),
        (COMPARE.into(), vec![spec_reply(&c.compared)]),
        (auto_command(&c.colored, &c.compared), vec![widget_reply(SYMBOLS_HTML, SYMBOLS_JS)]),
        (DATES.into(), vec![widget_reply(DATES_HTML, DATES_JS)]),
        (YRANGE.into(), vec![widget_reply(YRANGE_HTML, YRANGE_JS)]),
    ]
}

pub const BAR: &str = "show the average price of each symbol as a bar chart";
pub const SORT: &str = "sort the bars by average price";
pub const TITLE: &str = "label the y axis Average price";
pub const LOG: &str = "use a logarithmic y scale";
pub const SPARKLE: &str = "make the chart sparkle";
pub const SINCE: &str = "show only prices from 14 March 2004 onwards";

const BAD_JSON: &str = "```json\n{\"mark\": \"bar\",\n  \"encoding\": {\n```";
const BAD_FIELD: &str =
    "```json\n{\"mark\": \"bar\", \"encoding\": {\"x\": {\"field\": \"ticker\", \"type\": \"nominal\"}}}\n```";
const NO_BLOCK: &str = "I am not able to make a chart sparkle.";

fn bar_chart() -> Value {
    json!({
        "mark": "bar",
        "encoding": {
            "x": {"field": "symbol", "type": "nominal"},
            "y": {"field": "price", "type": "quantitative", "aggregate": "mean"}
        }
    })
}

/// Replies exercising each retry path: valid first, repaired in the
/// conversation, fixed by a fresh retry, fresh retry after a repair, and
/// exhaustion; the last command returns string dates.
pub fn retry_paths() -> Replies {
    let bar = bar_chart();
    let mut sorted = bar.clone();
    sorted["encoding"]["x"]["sort"] = json!("-y");
    let mut titled = sorted.clone();
    titled["encoding"]["y"]["title"] = json!("Average price");
    let mut log = titled.clone();
    log["encoding"]["y"]["scale"] = json!({"type": "log"});
    let mut since = line_chart();
    since["transform"] = json!([{"filter": {"field": "date", "gte": "2004-03-14"}}]);
    vec![
        (ENRICH_COMMAND.into(), vec![enrich_reply()]),
        (BAR.into(), vec![spec_reply(&bar)]),
        (SORT.into(), vec![BAD_JSON.into(), spec_reply(&sorted)]),
        (TITLE.into(), vec![BAD_JSON.into(), BAD_FIELD.into(), spec_reply(&titled)]),
        (LOG.into(), vec![BAD_JSON.into(), BAD_FIELD.into(), BAD_JSON.into(), spec_reply(&log)]),
        (SPARKLE.into(), vec![NO_BLOCK.into()]),
        (SINCE.into(), vec![spec_reply(&since)]),
    ]
}

pub const SYMBOLS: &str = "filter the data by stock symbol";
pub const THRESHOLD: &str = "add a minimum price input";
pub const BROKEN: &str = "add a widget that plays music";
pub const POINTS: &str = "use points instead of lines";

const THRESHOLD_HTML: &str = r#"
<div data-widget-title="Minimum price">
  <label for="price-min">Minimum price</label>
  <input type="number" id="price-min" min="0" max="800" step="10" value="0">
</div>"#;

const THRESHOLD_JS: &str = r#"
function callback(event, chart) {
  const min = Number(document.getElementById('price-min').value);
  return [[{filter: {field: 'price', gte: min}}], chart];
}"#;

/// Widget creation, interaction, a failed command, toggling, deletion and a
/// chart edit that keeps the widgets.
pub fn lifecycle() -> Replies {
    let line = line_chart();
    let mut points = line.clone();
    points["mark"] = json!("point");
    vec![
        (CREATE.into(), vec![spec_reply(&line)]),
        (SYMBOLS.into(), vec![widget_reply(SYMBOLS_HTML, SYMBOLS_JS)]),
        (THRESHOLD.into(), vec![widget_reply(THRESHOLD_HTML, THRESHOLD_JS)]),
        (BROKEN.into(), vec![NO_BLOCK.into()]),
        (POINTS.into(), vec![spec_reply(&points)]),
    ]
}
