use std::time::Instant;

use serde_json::json;

use super::*;
use crate::chart::set_property;

fn stocks_chart() -> ChartSpec {
    ChartSpec::from_value(json!({
        "data": {"name": "dataset"},
        "mark": "line",
        "encoding": {
            "x": {"field": "date", "type": "temporal"},
            "y": {"field": "price", "type": "quantitative"},
            "color": {"field": "symbol", "type": "nominal"}
        }
    }))
    .unwrap()
}

fn widget(markup: &str, callback: &str) -> Widget {
    Widget::new("w1", "test", markup, callback, false)
}

const SLIDER: &str = r#"<div><input type="range" id="angle" min="-90" max="90" value="0"></div>"#;
const SLIDER_CB: &str = r#"function callback(event, chart) {
  if (!chart.encoding.x.axis) { chart.encoding.x.axis = {}; }
  chart.encoding.x.axis.labelAngle = Number(event.target.value);
  return [[], chart];
}"#;

#[test]
fn slider_sets_label_angle() {
    let chart = stocks_chart();
    let before = chart.clone();
    let r = run_callback(&widget(SLIDER, SLIDER_CB), &SyntheticEvent::change("angle", 45i64), &chart);
    assert!(r.is_ok(), "{r:?}");
    let expected = set_property(&chart, "/encoding/x/axis/labelAngle", json!(45)).unwrap();
    assert_eq!(r.chart.unwrap(), expected);
    assert_eq!(r.transforms.unwrap(), Vec::<Value>::new());
    assert_eq!(chart, before);
}

const FILTER: &str = r#"<div data-widget-title="Symbols">
  <label><input type="checkbox" id="sym-AAPL" value="AAPL" checked> AAPL</label>
  <label><input type="checkbox" id="sym-AMZN" value="AMZN" checked> AMZN</label>
  <label><input type="checkbox" id="sym-GOOG" value="GOOG" checked> GOOG</label>
  <label><input type="checkbox" id="sym-IBM" value="IBM" checked> IBM</label>
  <label><input type="checkbox" id="sym-MSFT" value="MSFT" checked> MSFT</label>
</div>"#;
const FILTER_CB: &str = r#"function callback(event, chart) {
  const picked = Array.from(document.querySelectorAll('input[type=checkbox]:checked')).map(el => el.value);
  return [[{filter: {field: 'symbol', oneOf: picked}}], chart];
}"#;

#[test]
fn checkbox_filter_keeps_state_across_runs() {
    let chart = stocks_chart();
    let w = widget(FILTER, FILTER_CB);
    let mut dom = WidgetDom::from_markup(FILTER).unwrap();
    let mut last = None;
    for sym in ["AAPL", "AMZN", "GOOG"] {
        let r = run_callback_in(&w, &SyntheticEvent::change(format!("sym-{sym}"), false), &chart, &mut dom, &SandboxLimits::default());
        assert!(r.is_ok(), "{r:?}");
        last = Some(r);
    }
    let r = last.unwrap();
    assert_eq!(r.transforms.unwrap(), vec![json!({"filter": {"field": "symbol", "oneOf": ["IBM", "MSFT"]}})]);
    assert_eq!(r.chart.unwrap(), chart);
}

#[test]
fn infinite_loop_times_out() {
    let limits = SandboxLimits::default();
    let start = Instant::now();
    let w = widget(SLIDER, "function callback(e, c) { while (true) { try { for (;;) {} } catch (x) {} } }");
    let r = run_callback_in(&w, &SyntheticEvent::change("angle", 1i64), &stocks_chart(), &mut WidgetDom::from_markup(SLIDER).unwrap(), &limits);
    let elapsed = start.elapsed();
    assert!(r.has(DiagnosticKind::Timeout), "{r:?}");
    assert!(r.chart.is_none() && r.transforms.is_none());
    assert!(elapsed >= limits.budget && elapsed < limits.budget * 3, "{elapsed:?}");
}

#[test]
fn host_access_is_blocked_even_when_caught() {
    for cb in [
        "function callback(e, c) { try { fetch('http://example.com'); } catch (x) {} return [[], c]; }",
        "function callback(e, c) { try { new XMLHttpRequest(); } catch (x) {} return [[], c]; }",
        "function callback(e, c) { try { process.env.HOME; } catch (x) {} return [[], c]; }",
        "function callback(e, c) { try { localStorage.setItem('a', 1); } catch (x) {} return [[], c]; }",
        "function callback(e, c) { try { require('fs'); } catch (x) {} return [[], c]; }",
        "function callback(e, c) { import('fs').catch(() => {}); return [[], c]; }",
        "function callback(e, c) { try { document.cookie; } catch (x) {} return [[], c]; }",
    ] {
        let r = run_callback(&widget(SLIDER, cb), &SyntheticEvent::change("angle", 1i64), &stocks_chart());
        assert!(r.has(DiagnosticKind::IoBlocked), "{cb}: {r:?}");
        assert!(r.chart.is_none());
    }
}

#[test]
fn exceptions_and_shapes() {
    let run = |cb: &str| run_callback(&widget(SLIDER, cb), &SyntheticEvent::change("angle", 1i64), &stocks_chart());
    let r = run("function callback(e, c) { throw new TypeError('boom'); }");
    assert_eq!(r.diagnostics[0].kind, DiagnosticKind::Exception);
    assert!(r.diagnostics[0].message.contains("TypeError: boom"));
    assert!(run("function callback(e, c) { return c; }").has(DiagnosticKind::BadReturnShape));
    assert!(run("function callback(e, c) { return [[], c, 1]; }").has(DiagnosticKind::BadReturnShape));
    assert!(run("function callback(e, c) { return [5, c]; }").has(DiagnosticKind::BadReturnShape));
    assert!(run("function callback(e, c) { return [[], null]; }").has(DiagnosticKind::BadReturnShape));
    assert!(run("function callback(e, c) { return [null, c]; }").is_ok());
    assert!(run("syntax error here(").has(DiagnosticKind::Exception));
    assert!(run("function notIt(e, c) { return [[], c]; }").has(DiagnosticKind::Exception));
    let r = run("function callback(e, c) { c.encoding.x.bogusKey = 1; return [[], c]; }");
    assert!(r.has(DiagnosticKind::InvalidOutput), "{r:?}");
    assert_eq!(r.diagnostics[0].pointer.as_deref(), Some("/encoding/x/bogusKey"));
    assert!(run("function callback(e, c) { const f = () => f(); f(); return [[], c]; }").has(DiagnosticKind::Exception));
}

#[test]
fn runs_are_deterministic() {
    let cb = "function callback(e, c) { c.title = String(Math.random()) + ' ' + new Date().toISOString() + ' ' + Date.now(); return [[], c]; }";
    let a = run_callback(&widget(SLIDER, cb), &SyntheticEvent::change("angle", 1i64), &stocks_chart());
    let b = run_callback(&widget(SLIDER, cb), &SyntheticEvent::change("angle", 1i64), &stocks_chart());
    assert!(a.is_ok(), "{a:?}");
    assert_eq!(a, b);
}

#[test]
fn transform_dates_are_repaired() {
    let markup = r#"<div><input type="date" id="start" min="2004-03-14"></div>"#;
    let cb = "function callback(e, c) { return [[{filter: {field: 'date', range: [e.target.value, '2010-01-01']}}], c]; }";
    let r = run_callback(&widget(markup, cb), &SyntheticEvent::change("start", "2004-03-14"), &stocks_chart());
    assert!(r.is_ok(), "{r:?}");
    assert_eq!(
        r.transforms.unwrap()[0],
        json!({"filter": {"field": "date", "range": [{"year": 2004, "month": 3, "date": 14}, {"year": 2010, "month": 1, "date": 1}]}})
    );
    assert_eq!(r.repairs.len(), 2);
}

#[test]
fn bad_event_target_is_reported() {
    let r = run_callback(&widget(SLIDER, SLIDER_CB), &SyntheticEvent::change("nope", 1i64), &stocks_chart());
    assert!(r.has(DiagnosticKind::Exception));
}

#[test]
fn smoke_test_two_input_label_editor() {
    let markup = r#"<div data-widget-title="x-axis Label Editor">
  <label>Font size <input type="range" id="x-font" min="8" max="24" value="11"></label>
  <label>Angle <input type="number" id="x-angle" min="-90" max="90" value="0"></label>
</div>"#;
    let cb = r#"function callback(event, chart) {
  chart.encoding.x.axis = chart.encoding.x.axis || {};
  chart.encoding.x.axis.labelFontSize = Number(document.getElementById('x-font').value);
  chart.encoding.x.axis.labelAngle = Number(document.getElementById('x-angle').value);
  return [[], chart];
}"#;
    let report = smoke_test(&widget(markup, cb), &stocks_chart());
    assert!(report.ok, "{report:?}");
    assert!(report.findings.is_empty());
}

#[test]
fn smoke_test_cites_validation_path() {
    let cb = "function callback(e, c) { c.encoding.x.axis = {labelWobble: 3}; return [[], c]; }";
    let report = smoke_test(&widget(SLIDER, cb), &stocks_chart());
    assert!(!report.ok);
    let f = &report.findings[0];
    assert_eq!(f.rule, Rule::SmokeTest);
    assert!(f.message.contains("invalid_output"));
    assert_eq!(f.location.as_ref().unwrap().pointer.as_deref(), Some("/encoding/x/axis/labelWobble"));
}

#[test]
fn smoke_test_without_inputs_warns() {
    let report = smoke_test(&widget("<div><p>hello</p></div>", "function callback(e, c) { return [[], c]; }"), &stocks_chart());
    assert!(report.ok);
    assert_eq!(report.findings[0].message, "no interactive inputs");
}

#[test]
fn probe_policy() {
    let dom = WidgetDom::from_markup(
        r##"<div><input type="range" id="r" min="10" max="20"><input type="checkbox" id="c" checked>
<select id="s"><option value="a">A</option><option value="b">B</option></select><input id="t"><input type="color" id="k"></div>"##,
    )
    .unwrap();
    let probe = |id: &str| probe_event(&dom, dom.index_of(id).unwrap()).unwrap().value;
    assert_eq!(probe("r"), EventValue::Number(15.0));
    assert_eq!(probe("c"), EventValue::Bool(false));
    assert_eq!(probe("s"), EventValue::Text("a".into()));
    assert_eq!(probe("t"), EventValue::Text(PROBE_TEXT.into()));
    assert_eq!(probe("k"), EventValue::Text(PROBE_COLOR.into()));
}

#[test]
fn selectors_and_dom_api() {
    let markup = r#"<div id="root" class="w">
  <select id="s"><option value="a">A</option><option value="b" selected>B</option></select>
  <span class="x y" data-symbol-name="IBM">t</span>
  <input type="radio" name="g" id="g1" value="1" checked><input type="radio" name="g" id="g2" value="2">
</div>"#;
    let cb = r#"function callback(event, chart) {
  const out = [
    document.querySelector('#root > select').value,
    document.querySelectorAll('div .x.y').length,
    document.querySelector('[data-symbol-name="IBM"]').dataset.symbolName,
    document.querySelector('input[name=g]:checked').value,
    document.getElementById('s').selectedIndex,
    document.querySelector('span').closest('.w').id,
    document.getElementsByName('g').length,
  ];
  chart.title = out.join('|');
  return [[], chart];
}"#;
    let r = run_callback(&widget(markup, cb), &SyntheticEvent::change("g2", true), &stocks_chart());
    assert!(r.is_ok(), "{r:?}");
    assert_eq!(r.chart.unwrap().document()["title"], json!("b|1|IBM|2|1|root|2"));
}
