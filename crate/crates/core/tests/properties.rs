use std::collections::BTreeSet;
use std::sync::Arc;

use dynavis_core::analysis::{deconflict_ids, post_process};
use dynavis_core::chart::dates::parse_iso_datetime;
use dynavis_core::chart::{normalize_dates, recombine, set_property, split_spec, validate_spec, ChartSpec, RepairKind};
use dynavis_core::data::{Column, DataTable};
use dynavis_core::gateway::scripted::ScriptedTransport;
use dynavis_core::gateway::{GatewayError, GatewayMode, LlmGateway, ReplayStore};
use dynavis_core::sandbox::{run_callback, SyntheticEvent};
use dynavis_core::summary::{enrich, summarize_seeded, ENRICH_COMMAND};
use dynavis_core::synthesis::{synthesize_chart, RetryCounts, SynthesisError, MAX_ATTEMPTS, MAX_REPAIRS_PER_ATTEMPT};
use dynavis_core::widget::{Widget, WidgetRegistry};
use proptest::prelude::*;
use serde_json::{json, Value};

fn chart(v: Value) -> ChartSpec {
    ChartSpec::from_value(v).unwrap()
}

fn records() -> impl Strategy<Value = Vec<Value>> {
    prop::collection::vec((-1000i64..1000, "[a-z]{0,6}", any::<bool>()), 1..25)
        .prop_map(|rows| rows.into_iter().map(|(a, b, c)| json!({"a": a, "b": b, "c": c})).collect())
}

fn mark() -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(json!("bar")),
        Just(json!("line")),
        Just(json!("point")),
        Just(json!("sparkle")),
        Just(json!({"type": "line", "clip": true})),
        Just(json!(7)),
    ]
}

fn date_operand() -> impl Strategy<Value = Value> {
    prop_oneof![
        (1990..2030i32, 1..=12u32, 1..=28u32).prop_map(|(y, m, d)| json!(format!("{y:04}-{m:02}-{d:02}"))),
        (1990..2030i32, 0..24u32, 0..60u32).prop_map(|(y, h, m)| json!(format!("{y:04}-06-15T{h:02}:{m:02}"))),
        Just(json!("2004-02-30")),
        Just(json!("next week")),
        (0..2_000_000_000i64).prop_map(|n| json!(n)),
        Just(json!({"year": 2004, "month": 3, "date": 14})),
    ]
}

fn dated_spec() -> impl Strategy<Value = Value> {
    (
        prop::collection::vec((prop::sample::select(vec!["lt", "lte", "gt", "gte", "equal"]), date_operand()), 0..3),
        prop::option::of((date_operand(), date_operand())),
        prop::option::of((date_operand(), date_operand())),
        mark(),
    )
        .prop_map(|(preds, range, domain, mark)| {
            let mut transforms: Vec<Value> = preds
                .into_iter()
                .map(|(op, v)| json!({"filter": {"field": "date", op: v}}))
                .collect();
            if let Some((a, b)) = range {
                transforms.push(json!({"filter": {"field": "date", "range": [a, b]}}));
            }
            let mut x = json!({"field": "date", "type": "temporal"});
            if let Some((a, b)) = domain {
                x["scale"] = json!({"domain": [a, b]});
            }
            json!({
                "mark": mark,
                "transform": transforms,
                "encoding": {"x": x, "y": {"field": "price", "type": "quantitative"}}
            })
        })
}

proptest! {
    #[test]
    fn split_then_recombine_round_trips(rows in records(), mark in mark(), width in prop::option::of(100..900u32)) {
        let mut full = json!({
            "mark": mark,
            "data": {"values": rows.clone()},
            "encoding": {"x": {"field": "a", "type": "quantitative"}, "y": {"field": "b", "type": "nominal"}}
        });
        if let Some(w) = width {
            full["width"] = json!(w);
        }
        let split = split_spec(&full).unwrap();
        prop_assert!(!split.chart.has_inline_values());
        prop_assert!(split.chart.to_value().pointer("/data/values").is_none());
        let back = recombine(&split.chart, split.dataset.as_ref(), &split.layout);
        prop_assert_eq!(back.pointer("/data/values"), Some(&Value::Array(rows)));
        prop_assert_eq!(validate_spec(&chart(back)).ok, validate_spec(&chart(full)).ok);
    }

    #[test]
    fn set_property_is_idempotent_and_commutes(
        a in prop::sample::select(vec!["/mark", "/encoding/x/axis/labelAngle", "/config/legend/orient", "/title"]),
        b in prop::sample::select(vec!["/encoding/y/scale/type", "/width", "/encoding/color/legend/orient"]),
        va in any::<i32>(),
        vb in "[a-z]{1,5}",
    ) {
        let base = chart(json!({"mark": "line", "encoding": {"x": {"field": "date", "type": "temporal"}}}));
        let once = set_property(&base, a, json!(va)).unwrap();
        prop_assert_eq!(&set_property(&once, a, json!(va)).unwrap(), &once);
        let ab = set_property(&once, b, json!(vb)).unwrap();
        let ba = set_property(&set_property(&base, b, json!(vb)).unwrap(), a, json!(va)).unwrap();
        let (ab, ba) = (ab.to_value(), ba.to_value());
        prop_assert_eq!(ab.pointer(a), ba.pointer(a));
        prop_assert_eq!(ab.pointer(b), ba.pointer(b));
        prop_assert_eq!(&ab, &ba);
    }

    #[test]
    fn normalize_dates_is_idempotent_and_keeps_validity(spec in dated_spec()) {
        let input = chart(spec);
        let (once, _) = normalize_dates(&input);
        let (twice, again) = normalize_dates(&once);
        prop_assert_eq!(&twice, &once);
        prop_assert!(again.iter().all(|r| r.kind == RepairKind::Unrepaired));
        if validate_spec(&input).ok {
            prop_assert!(validate_spec(&once).ok, "{}", validate_spec(&once).describe());
        }
    }

    #[test]
    fn validation_ok_iff_no_errors(spec in dated_spec()) {
        let report = validate_spec(&chart(spec));
        prop_assert_eq!(report.ok, report.errors.is_empty());
    }

    #[test]
    fn parsed_datetimes_are_in_range(y in 0..10000u32, m in 0..100u32, d in 0..100u32, time in prop::option::of((0..100u32, 0..100u32, prop::option::of(0..100u32)))) {
        let mut s = format!("{y:04}-{m:02}-{d:02}");
        if let Some((h, mi, sec)) = time {
            s.push_str(&format!("T{h:02}:{mi:02}"));
            if let Some(sec) = sec {
                s.push_str(&format!(":{sec:02}"));
            }
        }
        match parse_iso_datetime(&s) {
            Some(dt) => {
                prop_assert!((1..=12).contains(&dt.month) && (1..=31).contains(&dt.date));
                prop_assert!(dt.hours.is_none_or(|h| h < 24) && dt.minutes.is_none_or(|m| m < 60) && dt.seconds.is_none_or(|s| s < 60));
                prop_assert_eq!((dt.year as u32, dt.month, dt.date), (y, m, d));
            }
            None => prop_assert!(m == 0 || m > 12 || d == 0 || d > 28 || time.is_some_and(|(h, mi, sec)| h > 23 || mi > 59 || sec.is_some_and(|s| s > 59))),
        }
    }

    #[test]
    fn tables_keep_row_shape_and_types(rows in prop::collection::vec(prop::collection::btree_map("[abc]", prop_oneof![
        Just(Value::Null), any::<i32>().prop_map(|n| json!(n)), any::<bool>().prop_map(|b| json!(b)), "[a-z0-9-]{0,10}".prop_map(|s| json!(s)), (-1e6..1e6f64).prop_map(|f| json!(f))
    ], 1..4), 1..30)) {
        let records = Value::Array(rows.into_iter().map(|m| Value::Object(m.into_iter().collect())).collect());
        if let Ok(table) = DataTable::from_json_records(&records) {
            for row in table.rows() {
                prop_assert_eq!(row.len(), table.columns().len());
                for (v, col) in row.iter().zip(table.columns()) {
                    prop_assert!(col.atomic_type.admits(v), "{:?} rejects {}", col.atomic_type, v);
                }
            }
        }
    }

    #[test]
    fn summary_invariants(rows in prop::collection::vec((prop::option::of(-50i64..50), prop::option::of("[a-e]{1,2}"), prop::option::of(any::<bool>())), 0..200), n in 1..8usize, seed in any::<u64>()) {
        let columns = vec![
            Column { name: "n".into(), atomic_type: dynavis_core::data::AtomicType::Integer },
            Column { name: "s".into(), atomic_type: dynavis_core::data::AtomicType::String },
            Column { name: "b".into(), atomic_type: dynavis_core::data::AtomicType::Boolean },
        ];
        let data: Vec<Vec<Value>> = rows.iter().map(|(a, b, c)| vec![json!(a), json!(b), json!(c)]).collect();
        let table = DataTable::new(columns.clone(), data).unwrap();
        let s = summarize_seeded(&table, n, seed).unwrap();
        prop_assert_eq!(&s, &summarize_seeded(&table, n, seed).unwrap());
        let names: Vec<&str> = s.columns.iter().map(|c| c.stats.name.as_str()).collect();
        prop_assert_eq!(names, ["n", "s", "b"]);
        for (i, c) in s.columns.iter().enumerate() {
            let st = &c.stats;
            prop_assert!(st.unique_count + st.null_count <= table.row_count());
            prop_assert!(st.samples.len() <= n.min(st.unique_count));
            let column: Vec<&Value> = table.column_values(i).collect();
            for sample in &st.samples {
                prop_assert!(column.contains(&sample));
            }
            if let (Some(lo), Some(hi)) = (&st.min, &st.max) {
                prop_assert!(lo.as_f64().unwrap() <= hi.as_f64().unwrap());
            }
        }
    }

    #[test]
    fn enrichment_never_touches_stats(description in "[ -~]{0,40}", semantic in "[a-z ]{0,12}", garbage in any::<bool>()) {
        let table = DataTable::from_csv(b"symbol,price\nIBM,10\nMSFT,20\n").unwrap();
        let before = summarize_seeded(&table, 5, 0).unwrap();
        let reply = if garbage {
            format!("no block {description}")
        } else {
            format!("```json\n{}\n```", json!({"dataset_description": description, "columns": [{"name": "price", "semantic_type": semantic, "description": "USD"}, {"name": "ghost", "semantic_type": "x"}]}))
        };
        let t = Arc::new(ScriptedTransport::by_command([(ENRICH_COMMAND, vec![reply])]));
        let gw = LlmGateway::new(GatewayMode::Live, t, Arc::new(ReplayStore::in_memory()));
        let after = enrich(&before, &gw).unwrap();
        prop_assert_eq!(after.columns.len(), before.columns.len());
        for (a, b) in after.columns.iter().zip(&before.columns) {
            prop_assert_eq!(&a.stats, &b.stats);
        }
        prop_assert_eq!(after.row_count, before.row_count);
    }
}

#[derive(Debug, Clone)]
enum RegOp {
    Register(bool),
    Record(usize, usize),
    Toggle(usize, bool),
    Remove(usize),
}

fn reg_op() -> impl Strategy<Value = RegOp> {
    prop_oneof![
        any::<bool>().prop_map(RegOp::Register),
        (0..8usize, 0..3usize).prop_map(|(w, n)| RegOp::Record(w, n)),
        (0..8usize, any::<bool>()).prop_map(|(w, e)| RegOp::Toggle(w, e)),
        (0..8usize).prop_map(RegOp::Remove),
    ]
}

proptest! {
    #[test]
    fn registry_invariants_hold(ops in prop::collection::vec(reg_op(), 0..40)) {
        let base = chart(json!({"mark": "line", "encoding": {"x": {"field": "date", "type": "temporal"}, "y": {"field": "price", "type": "quantitative"}}}));
        let mut reg = WidgetRegistry::new();
        let mut created = 0;
        for op in ops {
            let ids: Vec<String> = reg.widgets().iter().map(|w| w.id.clone()).collect();
            let pick = |i: usize| ids.get(i % ids.len().max(1)).cloned().unwrap_or_else(|| "missing".into());
            let _ = match op {
                RegOp::Register(t) => {
                    created += 1;
                    reg.register(Widget::new(format!("w{created}"), "t", "<div></div>", "function callback(e, c) { return [[], c]; }", t)).map(|_| ())
                }
                RegOp::Record(i, n) => {
                    let list = (0..n).map(|k| json!({"filter": {"field": "price", "gt": k}})).collect();
                    reg.record_transforms(&pick(i), list)
                }
                RegOp::Toggle(i, e) => reg.toggle(&pick(i), e),
                RegOp::Remove(i) => reg.remove(&pick(i)).map(|_| ()),
            };
            prop_assert!(reg.check_invariants().is_ok(), "{:?}", reg.check_invariants());
            let keys: BTreeSet<&String> = reg.latest_transforms().keys().collect();
            prop_assert!(keys.iter().all(|k| reg.get(k).is_some()));
            let seqs: Vec<u64> = reg.panel().iter().map(|w| w.seq).collect();
            prop_assert!(seqs.windows(2).all(|p| p[0] > p[1]));
            let a = reg.effective_spec(&base, None).unwrap();
            prop_assert_eq!(&a, &reg.effective_spec(&base, None).unwrap());
        }
    }

    #[test]
    fn post_processing_twice_is_a_fixpoint(
        ids in prop::collection::vec(prop::sample::select(vec!["angle", "size", "a_2", "angle_2", "pick"]), 1..5),
        existing in prop::sample::subsequence(vec!["angle", "size", "angle_2", "other"], 0..=4),
    ) {
        let existing: BTreeSet<String> = existing.into_iter().map(String::from).collect();
        let inputs: String = ids.iter().map(|id| format!("<input type=\"range\" id=\"{id}\" min=\"0\" max=\"90\">")).collect();
        let markup = format!("<div data-widget-title=\"Gen\">{inputs}</div>");
        let uniq: BTreeSet<&str> = ids.iter().copied().collect();
        let reads: String = uniq
            .iter()
            .enumerate()
            .map(|(i, id)| format!("  const v{i} = Number(document.getElementById('{id}').value);\n"))
            .collect();
        let callback = format!("function callback(event, chart) {{\n{reads}  chart.title = 'edited';\n  return [[], chart];\n}}");
        let base = chart(json!({"mark": "line", "encoding": {"x": {"field": "date", "type": "temporal"}}}));
        let first = post_process(&markup, &callback, &existing, &base);
        prop_assert!(first.report.ok, "{}", first.report.describe_errors());
        let second = post_process(&first.markup, &first.callback_source, &existing, &base);
        prop_assert!(second.renames.is_empty());
        prop_assert_eq!(&second.markup, &first.markup);
        prop_assert_eq!(&second.callback_source, &first.callback_source);
        prop_assert!(second.report.ok);
        let again = deconflict_ids(&first.markup, &first.callback_source, &existing).unwrap();
        prop_assert!(again.renames.is_empty());
    }
}

const SLIDER: &str = r#"<div data-widget-title="Angle"><input type="range" id="angle" min="-90" max="90" value="0"></div>"#;
const SLIDER_JS: &str = r#"function callback(event, chart) {
  chart.encoding.x.axis = chart.encoding.x.axis || {};
  chart.encoding.x.axis.labelAngle = Number(event.target.value);
  return [[], chart];
}"#;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sandbox_runs_are_pure_and_valid(angle in -90i64..=90, with_axis in any::<bool>()) {
        let mut v = json!({"mark": "line", "encoding": {"x": {"field": "date", "type": "temporal"}, "y": {"field": "price", "type": "quantitative"}}});
        if with_axis {
            v["encoding"]["x"]["axis"] = json!({"labelFontSize": 12});
        }
        let input = chart(v);
        let copy = input.clone();
        let w = Widget::new("w1", "Angle", SLIDER, SLIDER_JS, false);
        let ev = SyntheticEvent::change("angle", angle);
        let a = run_callback(&w, &ev, &input);
        let b = run_callback(&w, &ev, &input);
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&input, &copy);
        prop_assert!(a.is_ok(), "{:?}", a.diagnostics);
        let out = a.chart.unwrap();
        prop_assert!(validate_spec(&out).ok);
        let out = out.to_value();
        prop_assert_eq!(out.pointer("/encoding/x/axis/labelAngle"), Some(&json!(angle)));
    }

    #[test]
    fn retry_accounting_matches_transcripts(replies in prop::collection::vec(0..3u8, 1..6)) {
        const CMD: &str = "plot the secret column";
        let secrets: Vec<String> = (0..50).map(|i| format!("row-{i:03}")).collect();
        let csv: String = std::iter::once("secret,price".to_string())
            .chain(secrets.iter().enumerate().map(|(i, s)| format!("{s},{i}")))
            .collect::<Vec<_>>()
            .join("\n");
        let table = DataTable::from_csv(csv.as_bytes()).unwrap();
        let summary = summarize_seeded(&table, 5, 0).unwrap();
        let good = format!("```json\n{}\n```", json!({"mark": "bar", "encoding": {"x": {"field": "secret", "type": "nominal"}, "y": {"field": "price", "type": "quantitative"}}}));
        let texts: Vec<String> = replies
            .iter()
            .map(|r| match r {
                0 => good.clone(),
                1 => "```json\n{\"mark\": \n```".to_string(),
                _ => "```json\n{\"mark\": \"bar\", \"encoding\": {\"x\": {\"field\": \"nope\", \"type\": \"nominal\"}}}\n```".to_string(),
            })
            .collect();
        let t = Arc::new(ScriptedTransport::by_command([(CMD, texts)]));
        let gw = LlmGateway::new(GatewayMode::Live, t.clone(), Arc::new(ReplayStore::in_memory()));
        let (counts, stored) = match synthesize_chart(&summary, CMD, None, &gw) {
            Ok(o) => {
                prop_assert!(validate_spec(&o.result.chart).ok);
                (RetryCounts::from_transcript(&o.transcript), o.counts())
            }
            Err(SynthesisError::Exhausted(e)) => {
                prop_assert_eq!((e.attempts, e.repair_rounds), (MAX_ATTEMPTS, MAX_REPAIRS_PER_ATTEMPT));
                (
                    RetryCounts::from_transcript(&e.transcript),
                    RetryCounts { attempts: e.attempts, repair_rounds: e.repair_rounds, llm_calls: e.llm_calls },
                )
            }
            Err(other) => return Err(TestCaseError::fail(other.to_string())),
        };
        prop_assert_eq!(counts, stored);
        prop_assert!(counts.attempts >= 1 && counts.attempts <= MAX_ATTEMPTS);
        prop_assert!(counts.repair_rounds <= MAX_REPAIRS_PER_ATTEMPT);
        let requests = t.captured();
        prop_assert_eq!(requests.len() as u32, counts.llm_calls);
        let sampled: BTreeSet<String> = summary.columns[0].stats.samples.iter().map(|v| v.as_str().unwrap().to_string()).collect();
        for req in &requests {
            let text: String = req.messages.iter().map(|m| m.content.as_str()).collect();
            for s in &secrets {
                prop_assert!(!text.contains(s.as_str()) || sampled.contains(s), "{} leaked", s);
            }
        }
    }

    #[test]
    fn recorded_replies_replay_identically(content in "[ -~\n]{0,200}", user in "[a-z ]{1,30}") {
        let store = Arc::new(ReplayStore::in_memory());
        let reply = content.clone();
        let t = Arc::new(ScriptedTransport::from_fn(move |_| Ok(reply.clone())));
        let recorder = LlmGateway::new(GatewayMode::Record, t, store.clone());
        let mut conv = recorder.conversation("system");
        conv.push_user(format!("USER COMMAND: {user}"));
        prop_assert_eq!(recorder.complete(&conv).unwrap(), content.clone());
        let replayer = LlmGateway::replay(store);
        prop_assert_eq!(replayer.complete(&conv).unwrap(), content);
        let mut other = replayer.conversation("system");
        other.push_user(format!("USER COMMAND: {user}!"));
        let miss = matches!(replayer.complete(&other), Err(GatewayError::ReplayMiss { .. }));
        prop_assert!(miss);
    }
}
