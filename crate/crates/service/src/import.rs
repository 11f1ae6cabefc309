//! Dataset import: CSV, JSON records, or a full spec with inline data.

use dynavis_core::chart::{normalize_dates, split_spec, validate_spec_with_columns, ChartSpec};
use dynavis_core::data::DataTable;
use serde_json::{Map, Value};

use crate::error::{ErrorKind, ServiceError};

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Csv(Vec<u8>),
    Json(Value),
}

impl Payload {
    /// Picks the format from the content type or file name, falling back to
    /// the first non-blank byte.
    pub fn sniff(bytes: Vec<u8>, content_type: Option<&str>, file_name: Option<&str>) -> Result<Self, ServiceError> {
        let ct = content_type.unwrap_or("").to_ascii_lowercase();
        let name = file_name.unwrap_or("").to_ascii_lowercase();
        let json = if ct.contains("json") || name.ends_with(".json") {
            true
        } else if ct.contains("csv") || name.ends_with(".csv") {
            false
        } else {
            matches!(bytes.iter().find(|b| !b.is_ascii_whitespace()), Some(b'[' | b'{'))
        };
        if !json {
            return Ok(Self::Csv(bytes));
        }
        let value = serde_json::from_slice(&bytes).map_err(|e| {
            ServiceError::new(ErrorKind::ParseError, format!("invalid JSON: {e}")).at(format!("/lines/{}", e.line()))
        })?;
        Ok(Self::Json(value))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Imported {
    pub dataset: DataTable,
    pub base_chart: Option<ChartSpec>,
    pub layout: Map<String, Value>,
}

impl Imported {
    fn data(dataset: DataTable) -> Self {
        Self {
            dataset,
            base_chart: None,
            layout: Map::new(),
        }
    }
}

/// Accepted JSON shapes: an array of records, `{"records": [...]}`,
/// `{"csv": "..."}`, or a full chart spec whose `data.values` holds the rows.
pub fn import(payload: Payload) -> Result<Imported, ServiceError> {
    match payload {
        Payload::Csv(bytes) => Ok(Imported::data(DataTable::from_csv(&bytes)?)),
        Payload::Json(value @ Value::Array(_)) => Ok(Imported::data(DataTable::from_json_records(&value)?)),
        Payload::Json(Value::Object(obj)) => {
            if let Some(csv) = obj.get("csv") {
                let text = csv
                    .as_str()
                    .ok_or_else(|| ServiceError::new(ErrorKind::ParseError, "`csv` must be a string").at("/csv"))?;
                return Ok(Imported::data(DataTable::from_csv(text.as_bytes())?));
            }
            if let Some(records) = obj.get("records") {
                return match DataTable::from_json_records(records) {
                    Ok(t) => Ok(Imported::data(t)),
                    Err(e) => Err(prefixed(ServiceError::from(e), "/records")),
                };
            }
            import_spec(&Value::Object(obj))
        }
        Payload::Json(_) => Err(ServiceError::new(
            ErrorKind::ParseError,
            "expected an array of records or a chart spec with inline data",
        )
        .at("")),
    }
}

fn prefixed(mut e: ServiceError, prefix: &str) -> ServiceError {
    if let Some(p) = e.detail_path.take() {
        e.detail_path = Some(if p == "/" { prefix.to_string() } else { format!("{prefix}{p}") });
    }
    e
}

fn import_spec(spec: &Value) -> Result<Imported, ServiceError> {
    let split = split_spec(spec)?;
    let dataset = split.dataset.ok_or_else(|| {
        ServiceError::new(ErrorKind::ParseError, "chart spec carries no inline data").at("/data/values")
    })?;
    let (chart, _) = normalize_dates(&split.chart);
    let report = validate_spec_with_columns(&chart, dataset.columns());
    if !report.ok {
        return Err(ServiceError::validation("imported chart is not valid", &report));
    }
    Ok(Imported {
        dataset,
        base_chart: Some(chart),
        layout: split.layout,
    })
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::*;

    #[test]
    fn csv_and_records_are_equivalent() {
        let csv = import(Payload::Csv(b"a,b\n1,x\n2,y\n".to_vec())).unwrap();
        let records = import(Payload::Json(json!([{"a": 1, "b": "x"}, {"a": 2, "b": "y"}]))).unwrap();
        let wrapped = import(Payload::Json(json!({"records": [{"a": 1, "b": "x"}, {"a": 2, "b": "y"}]}))).unwrap();
        assert_eq!(csv, records);
        assert_eq!(csv, wrapped);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert_eq!(import(Payload::Csv(Vec::new())).unwrap_err().error_kind, ErrorKind::ParseError);
        assert_eq!(import(Payload::Json(json!([]))).unwrap_err().error_kind, ErrorKind::ParseError);
    }

    #[test]
    fn cell_errors_carry_paths() {
        let err = import(Payload::Json(json!({"records": [{"a": 1}, 5]}))).unwrap_err();
        assert_eq!(err.error_kind, ErrorKind::ParseError);
        assert_eq!(err.detail_path.as_deref(), Some("/records/1"));
        let err = import(Payload::Csv(b"a,b\n1,2\n3\n".to_vec())).unwrap_err();
        assert!(err.detail_path.is_some(), "{err:?}");
    }

    #[test]
    fn full_spec_splits_into_chart_data_and_layout() {
        let spec = json!({
            "width": 400,
            "data": {"values": [{"d": "2004-03-14", "v": 1}, {"d": "2004-03-15", "v": 2}]},
            "mark": "line",
            "encoding": {"x": {"field": "d", "type": "temporal"}, "y": {"field": "v", "type": "quantitative"}}
        });
        let imp = import(Payload::Json(spec)).unwrap();
        assert_eq!(imp.dataset.row_count(), 2);
        assert_eq!(imp.layout["width"], 400);
        assert_eq!(imp.base_chart.unwrap().document()["data"], json!({"name": "dataset"}));
        let err = import(Payload::Json(json!({"mark": "bar"}))).unwrap_err();
        assert_eq!(err.detail_path.as_deref(), Some("/data/values"));
    }

    #[test]
    fn sniffing() {
        assert!(matches!(Payload::sniff(b" [1]".to_vec(), None, None).unwrap(), Payload::Json(_)));
        assert!(matches!(Payload::sniff(b"a\n1".to_vec(), None, None).unwrap(), Payload::Csv(_)));
        assert!(matches!(Payload::sniff(b"[".to_vec(), None, Some("x.csv")).unwrap(), Payload::Csv(_)));
        assert_eq!(Payload::sniff(b"{".to_vec(), Some("application/json"), None).unwrap_err().error_kind, ErrorKind::ParseError);
    }
}
