//! The declarative chart specification: data/layout separation, schema
//! validation, value-semantic property edits and the date repair pass.

pub mod dates;
pub mod schema;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::data::{DataError, DataTable};
use crate::pointer::{JsonPointer, PointerError};

pub use dates::{normalize_dates, DateRepair, DateTimeObject, RepairKind};
pub use schema::{validate_spec, validate_spec_with_columns, ErrorKind, ValidationError, ValidationReport};

/// Grammar dialect every spec is validated against.
pub const SCHEMA_VERSION: &str = "v5";

/// Name of the symbolic data reference left in a chart once its inline rows
/// have been split off.
pub const DATA_REF_NAME: &str = "dataset";

/// Top-level keys moved into the layout part by [`split_spec`].
pub const LAYOUT_KEYS: [&str; 3] = ["width", "height", "config"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChartError {
    #[error("chart document must be a JSON object")]
    NotAnObject,
    #[error("malformed inline data at {path}: {message}")]
    MalformedData { path: String, message: String },
    #[error(transparent)]
    Pointer(#[from] PointerError),
    #[error("cannot set {pointer}: segment {segment:?} traverses a {found} value")]
    Traversal {
        pointer: String,
        segment: String,
        found: &'static str,
    },
    #[error("cannot set {pointer}: array index {segment:?} is out of bounds")]
    IndexOutOfBounds { pointer: String, segment: String },
}

/// A chart document in the v5 grammar. Always a JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Value", into = "Value")]
pub struct ChartSpec {
    document: Map<String, Value>,
}

impl ChartSpec {
    pub fn from_value(value: Value) -> Result<Self, ChartError> {
        match value {
            Value::Object(document) => Ok(Self { document }),
            _ => Err(ChartError::NotAnObject),
        }
    }

    pub fn empty() -> Self {
        Self {
            document: Map::new(),
        }
    }

    pub fn document(&self) -> &Map<String, Value> {
        &self.document
    }

    pub fn to_value(&self) -> Value {
        Value::Object(self.document.clone())
    }

    pub fn into_value(self) -> Value {
        Value::Object(self.document)
    }

    pub fn schema_version(&self) -> &'static str {
        SCHEMA_VERSION
    }

    pub fn get(&self, pointer: &JsonPointer) -> Option<&Value> {
        let mut cur: Option<&Value> = None;
        for (i, seg) in pointer.segments().iter().enumerate() {
            cur = if i == 0 {
                self.document.get(seg)
            } else {
                match cur? {
                    Value::Object(m) => m.get(seg),
                    Value::Array(a) => seg.parse::<usize>().ok().and_then(|k| a.get(k)),
                    _ => None,
                }
            };
            cur?;
        }
        cur
    }

    /// Whether any inline rows remain under `data.values`.
    pub fn has_inline_values(&self) -> bool {
        self.document
            .get("data")
            .and_then(Value::as_object)
            .is_some_and(|d| d.contains_key("values"))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&self.document).expect("JSON maps always serialize")
    }
}

impl TryFrom<Value> for ChartSpec {
    type Error = ChartError;

    fn try_from(value: Value) -> Result<Self, Self::Error> {
        Self::from_value(value)
    }
}

impl From<ChartSpec> for Value {
    fn from(value: ChartSpec) -> Self {
        value.into_value()
    }
}

/// The three parts of an imported full spec.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub chart: ChartSpec,
    pub dataset: Option<DataTable>,
    pub layout: Map<String, Value>,
}

/// Separates inline data and layout noise (width, height, top-level config)
/// from a full spec. The chart keeps a symbolic `{"name": "dataset"}` data
/// reference in place of the rows.
pub fn split_spec(full_spec: &Value) -> Result<SplitSpec, ChartError> {
    let Value::Object(doc) = full_spec else {
        return Err(ChartError::NotAnObject);
    };
    let mut chart = Map::new();
    let mut layout = Map::new();
    let mut dataset = None;
    for (key, value) in doc {
        if LAYOUT_KEYS.contains(&key.as_str()) {
            layout.insert(key.clone(), value.clone());
            continue;
        }
        if key == "data" {
            if let Some(values) = value.as_object().and_then(|d| d.get("values")) {
                let table = DataTable::from_records_at(values, "/data/values").map_err(|e| {
                    let (path, message) = match e {
                        DataError::Json { path, message } => (path, message),
                        other => ("/data/values".to_string(), other.to_string()),
                    };
                    ChartError::MalformedData { path, message }
                })?;
                check_records_uniform(values)?;
                let mut data = value.as_object().cloned().unwrap_or_default();
                data.remove("values");
                if !data.contains_key("name") {
                    data.insert("name".into(), Value::String(DATA_REF_NAME.into()));
                }
                chart.insert(key.clone(), Value::Object(data));
                dataset = Some(table);
                continue;
            }
        }
        chart.insert(key.clone(), value.clone());
    }
    Ok(SplitSpec {
        chart: ChartSpec { document: chart },
        dataset,
        layout,
    })
}

// Every record must carry the same key set as the first one.
fn check_records_uniform(values: &Value) -> Result<(), ChartError> {
    let items = values.as_array().expect("validated as array");
    let first: Vec<&String> = items[0].as_object().expect("validated").keys().collect();
    for (i, item) in items.iter().enumerate().skip(1) {
        let keys: Vec<&String> = item.as_object().expect("validated").keys().collect();
        let same = keys.len() == first.len() && keys.iter().all(|k| first.contains(k));
        if !same {
            return Err(ChartError::MalformedData {
                path: format!("/data/values/{i}"),
                message: "record keys differ from the first record".into(),
            });
        }
    }
    Ok(())
}

/// Inverse of [`split_spec`]: puts rows and layout back into a full spec.
pub fn recombine(chart: &ChartSpec, dataset: Option<&DataTable>, layout: &Map<String, Value>) -> Value {
    let mut out = Map::new();
    for (key, value) in &chart.document {
        if key == "data" {
            if let (Some(table), Value::Object(data)) = (dataset, value) {
                let mut data = data.clone();
                if data.get("name").and_then(Value::as_str) == Some(DATA_REF_NAME) {
                    data.remove("name");
                }
                data.insert("values".into(), Value::Array(table.to_records()));
                out.insert(key.clone(), Value::Object(data));
                continue;
            }
        }
        out.insert(key.clone(), value.clone());
    }
    if let Some(table) = dataset {
        if !out.contains_key("data") {
            let mut data = Map::new();
            data.insert("values".into(), Value::Array(table.to_records()));
            out.insert("data".into(), Value::Object(data));
        }
    }
    for (key, value) in layout {
        out.insert(key.clone(), value.clone());
    }
    Value::Object(out)
}

/// Returns a copy of `chart` with `value` stored at `pointer`, creating
/// intermediate objects as needed. The input is left untouched.
pub fn set_property(chart: &ChartSpec, pointer: &str, value: Value) -> Result<ChartSpec, ChartError> {
    let ptr = JsonPointer::parse(pointer)?;
    if ptr.is_root() {
        return ChartSpec::from_value(value);
    }
    let mut root = Value::Object(chart.document.clone());
    let segments = ptr.segments();
    let mut cur = &mut root;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(seg.clone(), value);
                    break;
                }
                map.entry(seg.clone())
                    .or_insert_with(|| Value::Object(Map::new()))
            }
            Value::Array(items) => {
                let len = items.len();
                let index = if seg == "-" {
                    len
                } else {
                    seg.parse::<usize>().map_err(|_| ChartError::Traversal {
                        pointer: pointer.to_string(),
                        segment: seg.clone(),
                        found: "array",
                    })?
                };
                if index > len {
                    return Err(ChartError::IndexOutOfBounds {
                        pointer: pointer.to_string(),
                        segment: seg.clone(),
                    });
                }
                if last {
                    if index == len {
                        items.push(value);
                    } else {
                        items[index] = value;
                    }
                    break;
                }
                if index == len {
                    items.push(Value::Object(Map::new()));
                }
                &mut items[index]
            }
            other => {
                return Err(ChartError::Traversal {
                    pointer: pointer.to_string(),
                    segment: seg.clone(),
                    found: json_kind(other),
                })
            }
        };
    }
    ChartSpec::from_value(root)
}

pub(crate) fn json_kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}
