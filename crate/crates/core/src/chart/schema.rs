//! Offline validation against the bundled Vega-Lite v5 JSON schema
//! (`crates/core/schema/vega-lite-v5.json`) plus two semantic checks that
//! need the dataset's columns.

use std::collections::HashSet;
use std::sync::OnceLock;

use jsonschema::error::ValidationErrorKind;
use jsonschema::Validator;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{ChartSpec, DATA_REF_NAME};
use crate::data::{AtomicType, Column};

/// The vendored grammar schema (Vega-Lite 5.21.0 build).
pub const BUNDLED_SCHEMA: &str = include_str!("../../schema/vega-lite-v5.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    JsonParse,
    Schema,
    Semantic,
}

impl ErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::JsonParse => "json_parse",
            ErrorKind::Schema => "schema",
            ErrorKind::Semantic => "semantic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationError {
    /// JSON pointer into the validated document.
    pub path: String,
    pub message: String,
    pub kind: ErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub errors: Vec<ValidationError>,
}

impl ValidationReport {
    pub fn from_errors(errors: Vec<ValidationError>) -> Self {
        Self {
            ok: errors.is_empty(),
            errors,
        }
    }

    pub fn ok() -> Self {
        Self::from_errors(Vec::new())
    }

    /// Human-readable listing, one error per line, used in repair prompts.
    pub fn describe(&self) -> String {
        self.errors
            .iter()
            .map(|e| {
                let path = if e.path.is_empty() { "/" } else { &e.path };
                format!("- [{}] at {path}: {}", e.kind.as_str(), e.message)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

struct Validators {
    spec: Validator,
    transform: Validator,
}

fn validators() -> &'static Validators {
    static CELL: OnceLock<Validators> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut schema: Value =
            serde_json::from_str(BUNDLED_SCHEMA).expect("bundled schema is valid JSON");
        encode_refs(&mut schema);
        let spec = jsonschema::validator_for(&schema).expect("bundled schema compiles");
        let transform_schema = json!({
            "$schema": "http://json-schema.org/draft-07/schema#",
            "$ref": "#/definitions/Transform",
            "definitions": schema["definitions"].clone(),
        });
        let transform =
            jsonschema::validator_for(&transform_schema).expect("transform subschema compiles");
        Validators { spec, transform }
    })
}

// Definition names such as `MarkDef<"line">` are not valid URI fragments;
// percent-encode every `$ref` so the resolver accepts them.
fn encode_refs(v: &mut Value) {
    match v {
        Value::Object(m) => {
            for (k, val) in m.iter_mut() {
                match val {
                    Value::String(s) if k == "$ref" => *s = percent_encode_ref(s),
                    _ => encode_refs(val),
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(encode_refs),
        _ => {}
    }
}

fn percent_encode_ref(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for (i, c) in s.chars().enumerate() {
        if c.is_ascii_alphanumeric() || "-._~!$&'()*+,;=:@/".contains(c) || (i == 0 && c == '#') {
            out.push(c);
        } else {
            let mut buf = [0u8; 4];
            for b in c.encode_utf8(&mut buf).bytes() {
                out.push_str(&format!("%{b:02X}"));
            }
        }
    }
    out
}

/// Validates a chart against the bundled schema.
pub fn validate_spec(chart: &ChartSpec) -> ValidationReport {
    validate_value(&chart.to_value(), None)
}

/// Schema validation plus the dataset-dependent semantic checks.
pub fn validate_spec_with_columns(chart: &ChartSpec, columns: &[Column]) -> ValidationReport {
    validate_value(&chart.to_value(), Some(columns))
}

/// Parses and validates raw JSON text.
pub fn validate_json_text(text: &str, columns: Option<&[Column]>) -> ValidationReport {
    match serde_json::from_str::<Value>(text) {
        Ok(v) => validate_value(&v, columns),
        Err(e) => ValidationReport::from_errors(vec![ValidationError {
            path: String::new(),
            message: format!("invalid JSON: {e}"),
            kind: ErrorKind::JsonParse,
        }]),
    }
}

/// Validates any JSON value as a chart document. Charts without a `data`
/// entry are checked as if bound to the session dataset.
pub fn validate_value(doc: &Value, columns: Option<&[Column]>) -> ValidationReport {
    let Value::Object(map) = doc else {
        return ValidationReport::from_errors(vec![ValidationError {
            path: String::new(),
            message: format!("chart must be a JSON object, found {}", super::json_kind(doc)),
            kind: ErrorKind::JsonParse,
        }]);
    };
    let bound;
    let target = if map.contains_key("data") {
        doc
    } else {
        let mut m = map.clone();
        m.insert("data".into(), json!({ "name": DATA_REF_NAME }));
        bound = Value::Object(m);
        &bound
    };
    let mut errors = schema_errors(&validators().spec, target);
    if errors.is_empty() {
        if let Some(columns) = columns {
            errors.extend(semantic_errors(map, columns));
        }
    }
    ValidationReport::from_errors(errors)
}

/// Validates a single entry of a `transform` array.
pub fn validate_transform(entry: &Value) -> ValidationReport {
    ValidationReport::from_errors(schema_errors(&validators().transform, entry))
}

fn schema_errors(validator: &Validator, instance: &Value) -> Vec<ValidationError> {
    let mut out = Vec::new();
    for err in validator.iter_errors(instance) {
        flatten_error(&err, &mut out);
    }
    dedup(out)
}

fn dedup(errors: Vec<ValidationError>) -> Vec<ValidationError> {
    let mut seen = HashSet::new();
    errors
        .into_iter()
        .filter(|e| seen.insert((e.path.clone(), e.message.clone())))
        .collect()
}

// Descends into the most plausible branch of anyOf/oneOf failures so the
// reported path points at the offending member rather than the root.
fn flatten_error(err: &jsonschema::ValidationError<'_>, out: &mut Vec<ValidationError>) {
    let path = err.instance_path().to_string();
    match err.kind() {
        ValidationErrorKind::AnyOf { context } | ValidationErrorKind::OneOfNotValid { context }
            if !context.is_empty() =>
        {
            let mut best: Option<(Vec<ValidationError>, (usize, isize))> = None;
            for branch in context {
                let mut leaves = Vec::new();
                for e in branch {
                    flatten_error(e, &mut leaves);
                }
                let leaves = dedup(leaves);
                let depth = leaves.iter().map(|e| pointer_depth(&e.path)).max().unwrap_or(0);
                let score = (depth, -(leaves.len() as isize));
                if best.as_ref().is_none_or(|(_, s)| score > *s) {
                    best = Some((leaves, score));
                }
            }
            match best {
                Some((leaves, _)) if !leaves.is_empty() => out.extend(leaves),
                _ => out.push(schema_error(path, err.to_string())),
            }
        }
        ValidationErrorKind::AdditionalProperties { unexpected } => {
            for key in unexpected {
                out.push(schema_error(
                    format!("{path}/{}", key.replace('~', "~0").replace('/', "~1")),
                    format!("unknown property {key:?}"),
                ));
            }
        }
        _ => out.push(schema_error(path, truncate(err.to_string()))),
    }
}

fn truncate(mut s: String) -> String {
    const MAX: usize = 300;
    if s.len() > MAX {
        let mut cut = MAX;
        while !s.is_char_boundary(cut) {
            cut -= 1;
        }
        s.truncate(cut);
        s.push('…');
    }
    s
}

fn schema_error(path: String, message: String) -> ValidationError {
    ValidationError {
        path,
        message,
        kind: ErrorKind::Schema,
    }
}

fn pointer_depth(p: &str) -> usize {
    p.matches('/').count()
}

fn semantic_errors(doc: &Map<String, Value>, columns: &[Column]) -> Vec<ValidationError> {
    let mut errors = Vec::new();
    let mut derived: HashSet<String> = HashSet::new();
    let mut opaque = false;
    collect_derived_fields(doc, &mut derived, &mut opaque);
    check_view(doc, "", columns, &derived, opaque, &mut errors);
    errors
}

fn collect_derived_fields(view: &Map<String, Value>, derived: &mut HashSet<String>, opaque: &mut bool) {
    if let Some(Value::Array(transforms)) = view.get("transform") {
        for t in transforms {
            let Some(t) = t.as_object() else { continue };
            if t.contains_key("pivot") || t.contains_key("flatten") && !t.contains_key("as") {
                *opaque = true;
            }
            if t.contains_key("fold") && !t.contains_key("as") {
                derived.insert("key".into());
                derived.insert("value".into());
            }
            collect_as_names(&Value::Object(t.clone()), derived);
        }
    }
    if let Some(Value::Array(layers)) = view.get("layer") {
        for l in layers.iter().filter_map(Value::as_object) {
            collect_derived_fields(l, derived, opaque);
        }
    }
}

fn collect_as_names(v: &Value, out: &mut HashSet<String>) {
    match v {
        Value::Object(m) => {
            for (k, val) in m {
                match (k.as_str(), val) {
                    ("as", Value::String(s)) => {
                        out.insert(s.clone());
                    }
                    ("as", Value::Array(items)) => {
                        out.extend(items.iter().filter_map(Value::as_str).map(String::from));
                    }
                    _ => collect_as_names(val, out),
                }
            }
        }
        Value::Array(items) => items.iter().for_each(|i| collect_as_names(i, out)),
        _ => {}
    }
}

fn check_view(
    view: &Map<String, Value>,
    base: &str,
    columns: &[Column],
    derived: &HashSet<String>,
    opaque: bool,
    errors: &mut Vec<ValidationError>,
) {
    if let Some(Value::Object(encoding)) = view.get("encoding") {
        for (channel, def) in encoding {
            let defs: Vec<(String, &Map<String, Value>)> = match def {
                Value::Object(m) => vec![(format!("{base}/encoding/{channel}"), m)],
                Value::Array(items) => items
                    .iter()
                    .enumerate()
                    .filter_map(|(i, d)| d.as_object().map(|m| (format!("{base}/encoding/{channel}/{i}"), m)))
                    .collect(),
                _ => Vec::new(),
            };
            for (path, def) in defs {
                check_field_def(def, &path, columns, derived, opaque, errors);
            }
        }
    }
    if let Some(Value::Array(layers)) = view.get("layer") {
        for (i, l) in layers.iter().enumerate() {
            if let Some(l) = l.as_object() {
                check_view(l, &format!("{base}/layer/{i}"), columns, derived, opaque, errors);
            }
        }
    }
}

fn check_field_def(
    def: &Map<String, Value>,
    path: &str,
    columns: &[Column],
    derived: &HashSet<String>,
    opaque: bool,
    errors: &mut Vec<ValidationError>,
) {
    let Some(field) = def.get("field").and_then(Value::as_str) else {
        return;
    };
    // Nested access ("a.b") is rooted at the first segment.
    let root = field.split('.').next().unwrap_or(field);
    let column = columns.iter().find(|c| c.name == field || c.name == root);
    match column {
        None if !opaque && !derived.contains(field) && !derived.contains(root) => {
            errors.push(ValidationError {
                path: format!("{path}/field"),
                message: format!(
                    "field {field:?} is not a dataset column (columns: {})",
                    columns.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join(", ")
                ),
                kind: ErrorKind::Semantic,
            });
        }
        Some(col) if def.get("type").and_then(Value::as_str) == Some("temporal") => {
            if matches!(col.atomic_type, AtomicType::String | AtomicType::Boolean) {
                errors.push(ValidationError {
                    path: format!("{path}/type"),
                    message: format!(
                        "temporal encoding over {field:?}, which is a {} column",
                        col.atomic_type.as_str()
                    ),
                    kind: ErrorKind::Semantic,
                });
            }
        }
        _ => {}
    }
}
