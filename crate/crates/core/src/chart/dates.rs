//! Rewrites ISO date strings found in datetime positions into the grammar's
//! structured date objects.
//!
//! Datetime positions are filter predicate operands (`range`, `equal`, `lt`,
//! `lte`, `gt`, `gte`, `oneOf`) over temporal fields, and scale domain entries
//! (`domain`, `domainMin`, `domainMax`) of temporal encodings. A field is
//! temporal when some encoding in the spec uses it with `"type": "temporal"`,
//! or when the predicate carries a `timeUnit`.

use std::collections::BTreeSet;

use chrono::{NaiveDate, NaiveTime};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::ChartSpec;
use crate::pointer::JsonPointer;

/// Structured date. `month` is 1-based (March = 3).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateTimeObject {
    pub date: u32,
    pub month: u32,
    pub year: i32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hours: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub minutes: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seconds: Option<u32>,
}

impl DateTimeObject {
    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("plain struct serializes")
    }

    pub fn naive_date(&self) -> Option<NaiveDate> {
        NaiveDate::from_ymd_opt(self.year, self.month, self.date)
    }
}

/// Parses `YYYY-MM-DD[THH:MM[:SS]]`, rejecting impossible calendar dates.
pub fn parse_iso_datetime(s: &str) -> Option<DateTimeObject> {
    let b = s.as_bytes();
    let digits = |r: std::ops::Range<usize>| -> Option<u32> {
        let part = s.get(r)?;
        if part.bytes().all(|c| c.is_ascii_digit()) {
            part.parse().ok()
        } else {
            None
        }
    };
    if b.len() < 10 || b[4] != b'-' || b[7] != b'-' {
        return None;
    }
    let year = digits(0..4)? as i32;
    let month = digits(5..7)?;
    let date = digits(8..10)?;
    NaiveDate::from_ymd_opt(year, month, date)?;
    let mut out = DateTimeObject {
        date,
        month,
        year,
        hours: None,
        minutes: None,
        seconds: None,
    };
    match b.len() {
        10 => {}
        16 | 19 if b[10] == b'T' && b[13] == b':' => {
            let h = digits(11..13)?;
            let m = digits(14..16)?;
            let sec = if b.len() == 19 {
                if b[16] != b':' {
                    return None;
                }
                Some(digits(17..19)?)
            } else {
                None
            };
            NaiveTime::from_hms_opt(h, m, sec.unwrap_or(0))?;
            out.hours = Some(h);
            out.minutes = Some(m);
            out.seconds = sec;
        }
        _ => return None,
    }
    Some(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairKind {
    Repaired,
    Unrepaired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DateRepair {
    pub path: String,
    pub before: Value,
    pub after: Option<Value>,
    pub kind: RepairKind,
}

const PREDICATE_OPERANDS: [&str; 7] = ["range", "equal", "lt", "lte", "gt", "gte", "oneOf"];
const DOMAIN_KEYS: [&str; 3] = ["domain", "domainMin", "domainMax"];

/// Returns the repaired chart and the list of rewrites. Idempotent.
pub fn normalize_dates(chart: &ChartSpec) -> (ChartSpec, Vec<DateRepair>) {
    let temporal = temporal_fields(chart);
    let mut doc = chart.document().clone();
    let mut repairs = Vec::new();
    normalize_view(&mut doc, &JsonPointer::root(), &temporal, &mut repairs);
    (
        ChartSpec::from_value(Value::Object(doc)).expect("still an object"),
        repairs,
    )
}

/// Applies the same rewrite to a standalone transform list, treating
/// `temporal` as the set of temporal fields.
pub fn normalize_transform_dates(transforms: &mut [Value], temporal: &BTreeSet<String>) -> Vec<DateRepair> {
    let mut repairs = Vec::new();
    for (i, t) in transforms.iter_mut().enumerate() {
        normalize_transform(t, &JsonPointer::root().child(i.to_string()), temporal, &mut repairs);
    }
    repairs
}

/// Fields used by any temporal encoding, across layers.
pub fn temporal_fields(chart: &ChartSpec) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    collect_temporal(chart.document(), &mut out);
    out
}

fn collect_temporal(view: &Map<String, Value>, out: &mut BTreeSet<String>) {
    if let Some(Value::Object(enc)) = view.get("encoding") {
        for def in enc.values() {
            let defs: Vec<&Value> = match def {
                Value::Array(items) => items.iter().collect(),
                other => vec![other],
            };
            for d in defs {
                if d.get("type").and_then(Value::as_str) == Some("temporal") {
                    if let Some(f) = d.get("field").and_then(Value::as_str) {
                        out.insert(f.to_string());
                    }
                }
            }
        }
    }
    if let Some(Value::Array(layers)) = view.get("layer") {
        for l in layers.iter().filter_map(Value::as_object) {
            collect_temporal(l, out);
        }
    }
}

fn normalize_view(
    view: &mut Map<String, Value>,
    at: &JsonPointer,
    temporal: &BTreeSet<String>,
    repairs: &mut Vec<DateRepair>,
) {
    if let Some(Value::Array(transforms)) = view.get_mut("transform") {
        for (i, t) in transforms.iter_mut().enumerate() {
            normalize_transform(t, &at.child("transform").child(i.to_string()), temporal, repairs);
        }
    }
    if let Some(Value::Object(enc)) = view.get_mut("encoding") {
        for (channel, def) in enc.iter_mut() {
            let base = at.child("encoding").child(channel.clone());
            match def {
                Value::Array(items) => {
                    for (i, d) in items.iter_mut().enumerate() {
                        normalize_encoding(d, &base.child(i.to_string()), repairs);
                    }
                }
                d => normalize_encoding(d, &base, repairs),
            }
        }
    }
    if let Some(Value::Array(layers)) = view.get_mut("layer") {
        for (i, l) in layers.iter_mut().enumerate() {
            if let Value::Object(l) = l {
                normalize_view(l, &at.child("layer").child(i.to_string()), temporal, repairs);
            }
        }
    }
}

fn normalize_transform(t: &mut Value, at: &JsonPointer, temporal: &BTreeSet<String>, repairs: &mut Vec<DateRepair>) {
    if let Some(pred) = t.get_mut("filter") {
        normalize_predicate(pred, &at.child("filter"), temporal, repairs);
    }
}

fn normalize_predicate(p: &mut Value, at: &JsonPointer, temporal: &BTreeSet<String>, repairs: &mut Vec<DateRepair>) {
    let Value::Object(m) = p else { return };
    for logical in ["and", "or"] {
        if let Some(Value::Array(items)) = m.get_mut(logical) {
            for (i, item) in items.iter_mut().enumerate() {
                normalize_predicate(item, &at.child(logical).child(i.to_string()), temporal, repairs);
            }
        }
    }
    if let Some(inner) = m.get_mut("not") {
        normalize_predicate(inner, &at.child("not"), temporal, repairs);
    }
    let is_temporal = m.contains_key("timeUnit")
        || m.get("field").and_then(Value::as_str).is_some_and(|f| temporal.contains(f));
    if !is_temporal {
        return;
    }
    for key in PREDICATE_OPERANDS {
        if let Some(operand) = m.get_mut(key) {
            repair_position(operand, &at.child(key), repairs);
        }
    }
}

fn normalize_encoding(def: &mut Value, at: &JsonPointer, repairs: &mut Vec<DateRepair>) {
    if def.get("type").and_then(Value::as_str) != Some("temporal") {
        return;
    }
    let Some(Value::Object(scale)) = def.get_mut("scale") else { return };
    for key in DOMAIN_KEYS {
        if let Some(v) = scale.get_mut(key) {
            repair_position(v, &at.child("scale").child(key), repairs);
        }
    }
}

// A position may hold a single value or an array of values.
fn repair_position(v: &mut Value, at: &JsonPointer, repairs: &mut Vec<DateRepair>) {
    match v {
        Value::Array(items) => {
            for (i, item) in items.iter_mut().enumerate() {
                repair_scalar(item, &at.child(i.to_string()), repairs);
            }
        }
        other => repair_scalar(other, at, repairs),
    }
}

fn repair_scalar(v: &mut Value, at: &JsonPointer, repairs: &mut Vec<DateRepair>) {
    let Value::String(s) = v else { return };
    match parse_iso_datetime(s) {
        Some(dt) => {
            let after = dt.to_value();
            repairs.push(DateRepair {
                path: at.to_string(),
                before: v.clone(),
                after: Some(after.clone()),
                kind: RepairKind::Repaired,
            });
            *v = after;
        }
        None => repairs.push(DateRepair {
            path: at.to_string(),
            before: v.clone(),
            after: None,
            kind: RepairKind::Unrepaired,
        }),
    }
}
