//! Dataset summaries used as LLM grounding context.
//!
//! [`summarize`] computes exact per-column statistics plus a seeded sample of
//! distinct values. [`enrich`] asks the LLM for a dataset description and
//! per-column semantic annotations without touching the statistics.

use std::cmp::Ordering;
use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::chart::dates::parse_iso_datetime;
use crate::codeblock::extract_code_block;
use crate::data::{AtomicType, DataTable};
use crate::gateway::scripted::COMMAND_MARKER;
use crate::gateway::{GatewayError, LlmGateway};

pub const DEFAULT_SAMPLES: usize = 5;
pub const DEFAULT_SEED: u64 = 0;

/// Command line carried by enrichment prompts.
pub const ENRICH_COMMAND: &str = "describe the dataset";

const ENRICH_SYSTEM: &str = include_str!("../prompts/enrich_system.md");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub atomic_type: AtomicType,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub min: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub max: Option<Value>,
    pub unique_count: usize,
    pub null_count: usize,
    pub samples: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    #[serde(flatten)]
    pub stats: ColumnStats,
    #[serde(default)]
    pub semantic_type: String,
    #[serde(default)]
    pub semantic_description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    #[serde(default)]
    pub dataset_description: String,
    pub row_count: usize,
    pub columns: Vec<ColumnSummary>,
    /// Set when enrichment fell back to the unenriched summary.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub enrichment_warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SummaryError {
    #[error("n_samples must be at least 1")]
    ZeroSamples,
    #[error("dataset has no columns")]
    NoColumns,
}

impl DataSummary {
    pub fn column(&self, name: &str) -> Option<&ColumnSummary> {
        self.columns.iter().find(|c| c.stats.name == name)
    }

    pub fn stats(&self) -> Vec<&ColumnStats> {
        self.columns.iter().map(|c| &c.stats).collect()
    }

    /// Compact JSON rendering passed to the LLM. Contains only statistics,
    /// samples and annotations, never dataset rows.
    pub fn render_for_prompt(&self) -> String {
        let columns: Vec<Value> = self
            .columns
            .iter()
            .map(|c| {
                let mut obj = serde_json::Map::new();
                obj.insert("name".into(), json!(c.stats.name));
                obj.insert("type".into(), json!(c.stats.atomic_type));
                if let Some(min) = &c.stats.min {
                    obj.insert("min".into(), min.clone());
                }
                if let Some(max) = &c.stats.max {
                    obj.insert("max".into(), max.clone());
                }
                obj.insert("unique".into(), json!(c.stats.unique_count));
                obj.insert("nulls".into(), json!(c.stats.null_count));
                obj.insert("samples".into(), json!(c.stats.samples));
                if !c.semantic_type.is_empty() {
                    obj.insert("semantic_type".into(), json!(c.semantic_type));
                }
                if !c.semantic_description.is_empty() {
                    obj.insert("description".into(), json!(c.semantic_description));
                }
                Value::Object(obj)
            })
            .collect();
        let mut doc = serde_json::Map::new();
        if !self.dataset_description.is_empty() {
            doc.insert("description".into(), json!(self.dataset_description));
        }
        doc.insert("rows".into(), json!(self.row_count));
        doc.insert("columns".into(), Value::Array(columns));
        serde_json::to_string(&Value::Object(doc)).expect("summary serializes")
    }
}

/// Rule-based summary with the default sampling seed.
pub fn summarize(dataset: &DataTable, n_samples: usize) -> Result<DataSummary, SummaryError> {
    summarize_seeded(dataset, n_samples, DEFAULT_SEED)
}

/// Rule-based summary. Samples are drawn uniformly without replacement from
/// each column's distinct non-null values using a ChaCha8 stream per column
/// (seed `seed`, stream = column index); chosen values keep their
/// first-occurrence order.
pub fn summarize_seeded(dataset: &DataTable, n_samples: usize, seed: u64) -> Result<DataSummary, SummaryError> {
    if n_samples == 0 {
        return Err(SummaryError::ZeroSamples);
    }
    if dataset.columns().is_empty() {
        return Err(SummaryError::NoColumns);
    }
    let columns = dataset
        .columns()
        .iter()
        .enumerate()
        .map(|(i, col)| {
            let stats = column_stats(dataset, i, n_samples, seed);
            debug_assert_eq!(stats.name, col.name);
            ColumnSummary {
                stats,
                semantic_type: String::new(),
                semantic_description: String::new(),
            }
        })
        .collect();
    Ok(DataSummary {
        dataset_description: String::new(),
        row_count: dataset.row_count(),
        columns,
        enrichment_warning: None,
    })
}

fn column_stats(dataset: &DataTable, index: usize, n_samples: usize, seed: u64) -> ColumnStats {
    let col = &dataset.columns()[index];
    let mut null_count = 0;
    let mut seen: HashSet<String> = HashSet::new();
    let mut distinct: Vec<&Value> = Vec::new();
    let mut min: Option<(&Value, OrderKey)> = None;
    let mut max: Option<(&Value, OrderKey)> = None;

    for v in dataset.column_values(index) {
        if v.is_null() {
            null_count += 1;
            continue;
        }
        if seen.insert(identity_key(v)) {
            distinct.push(v);
        }
        if let Some(key) = order_key(col.atomic_type, v) {
            if min.as_ref().is_none_or(|(_, k)| key.cmp(k) == Ordering::Less) {
                min = Some((v, key.clone()));
            }
            if max.as_ref().is_none_or(|(_, k)| key.cmp(k) == Ordering::Greater) {
                max = Some((v, key));
            }
        }
    }

    let samples = if distinct.len() <= n_samples {
        distinct.iter().map(|v| (*v).clone()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let mut picked = rand::seq::index::sample(&mut rng, distinct.len(), n_samples).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| distinct[i].clone()).collect()
    };

    ColumnStats {
        name: col.name.clone(),
        atomic_type: col.atomic_type,
        min: min.map(|(v, _)| v.clone()),
        max: max.map(|(v, _)| v.clone()),
        unique_count: distinct.len(),
        null_count,
        samples,
    }
}

// Numbers compare by value (so -0.0 and 0.0 are one value); everything else
// by its JSON text.
fn identity_key(v: &Value) -> String {
    match v.as_f64() {
        Some(f) if f == 0.0 => "n:0".to_string(),
        Some(f) => format!("n:{f:?}"),
        None => v.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, PartialOrd)]
enum OrderKey {
    Number(f64),
    Date((i32, u32, u32, u32, u32, u32)),
}

impl OrderKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.partial_cmp(other).unwrap_or(Ordering::Equal)
    }
}

fn order_key(ty: AtomicType, v: &Value) -> Option<OrderKey> {
    match ty {
        AtomicType::Integer | AtomicType::Number => v.as_f64().map(OrderKey::Number),
        AtomicType::Date => {
            let d = parse_iso_datetime(v.as_str()?)?;
            Some(OrderKey::Date((
                d.year,
                d.month,
                d.date,
                d.hours.unwrap_or(0),
                d.minutes.unwrap_or(0),
                d.seconds.unwrap_or(0),
            )))
        }
        _ => None,
    }
}

#[derive(Debug, Deserialize)]
struct EnrichReply {
    #[serde(default)]
    dataset_description: String,
    #[serde(default)]
    columns: Vec<EnrichColumn>,
}

#[derive(Debug, Deserialize)]
struct EnrichColumn {
    name: String,
    #[serde(default)]
    semantic_type: String,
    #[serde(default)]
    description: String,
}

/// Fills the description and semantic annotations from one LLM exchange
/// with at most one in-conversation repair. Malformed replies or transport
/// failures fall back to the input with `enrichment_warning` set. Replay
/// misses and fixture-store errors are returned, since they indicate a
/// broken test setup rather than a model failure.
pub fn enrich(summary: &DataSummary, llm: &LlmGateway) -> Result<DataSummary, GatewayError> {
    let mut conv = llm.conversation(ENRICH_SYSTEM);
    conv.push_user(format!(
        "{COMMAND_MARKER} {ENRICH_COMMAND}\n\nDATA SUMMARY:\n{}",
        summary.render_for_prompt()
    ));
    let mut last_error = String::new();
    for round in 0..2 {
        let reply = match llm.complete(&conv) {
            Ok(r) => r,
            Err(e @ (GatewayError::ReplayMiss { .. } | GatewayError::Drift { .. } | GatewayError::Store { .. })) => {
                return Err(e)
            }
            Err(e) => {
                last_error = e.to_string();
                break;
            }
        };
        match apply_reply(summary, &reply) {
            Ok(enriched) => return Ok(enriched),
            Err(msg) => {
                last_error = msg;
                if round == 0 {
                    conv.push_assistant(reply);
                    conv.push_user(format!(
                        "The reply could not be used: {last_error}\nPlease fix it and reply with a single json code block."
                    ));
                }
            }
        }
    }
    tracing::warn!(error = %last_error, "summary enrichment failed; using rule-based summary");
    let mut fallback = summary.clone();
    fallback.enrichment_warning = Some(format!("enrichment failed: {last_error}"));
    Ok(fallback)
}

fn apply_reply(summary: &DataSummary, reply: &str) -> Result<DataSummary, String> {
    let block = extract_code_block(reply, "json").map_err(|e| e.to_string())?;
    let parsed: EnrichReply = serde_json::from_str(&block).map_err(|e| format!("invalid JSON: {e}"))?;
    let mut out = summary.clone();
    out.dataset_description = parsed.dataset_description.trim().to_string();
    out.enrichment_warning = None;
    for c in &mut out.columns {
        c.semantic_type.clear();
        c.semantic_description.clear();
    }
    for col in parsed.columns {
        let target = out
            .columns
            .iter_mut()
            .find(|c| c.stats.name == col.name)
            .ok_or_else(|| format!("unknown column {:?}", col.name))?;
        target.semantic_type = col.semantic_type.trim().to_string();
        target.semantic_description = col.description.trim().to_string();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Column;
    use crate::gateway::scripted::ScriptedTransport;
    use crate::gateway::{GatewayMode, ReplayStore};
    use std::sync::Arc;

    fn single(ty: AtomicType, values: Vec<Value>) -> DataTable {
        DataTable::new(
            vec![Column { name: "c".into(), atomic_type: ty }],
            values.into_iter().map(|v| vec![v]).collect(),
        )
        .unwrap()
    }

    #[test]
    fn small_column_exact() {
        let s = summarize(&single(AtomicType::Integer, vec![json!(1), json!(2), json!(3)]), 5).unwrap();
        let c = &s.columns[0].stats;
        assert_eq!((c.min.clone(), c.max.clone()), (Some(json!(1)), Some(json!(3))));
        assert_eq!((c.unique_count, c.null_count), (3, 0));
        assert_eq!(c.samples, vec![json!(1), json!(2), json!(3)]);
    }

    #[test]
    fn all_null_column() {
        let s = summarize(&single(AtomicType::Number, vec![Value::Null; 4]), 5).unwrap();
        let c = &s.columns[0].stats;
        assert_eq!(c.null_count, 4);
        assert!(c.min.is_none() && c.max.is_none());
        assert!(c.samples.is_empty());
    }

    #[test]
    fn empty_table_and_bad_args() {
        let s = summarize(&single(AtomicType::String, vec![]), 5).unwrap();
        assert_eq!(s.row_count, 0);
        assert_eq!(s.columns[0].stats.unique_count, 0);
        assert_eq!(summarize(&single(AtomicType::String, vec![]), 0), Err(SummaryError::ZeroSamples));
    }

    #[test]
    fn dates_order_chronologically_and_strings_have_no_range() {
        let t = DataTable::from_csv(b"d,s\n2001-02-01,b\n2000-12-31,a\n2001-01-15,c\n").unwrap();
        let s = summarize(&t, 5).unwrap();
        assert_eq!(s.columns[0].stats.min, Some(json!("2000-12-31")));
        assert_eq!(s.columns[0].stats.max, Some(json!("2001-02-01")));
        assert!(s.columns[1].stats.min.is_none());
    }

    #[test]
    fn sampling_is_seeded_distinct_and_ordered() {
        let values: Vec<Value> = (0..50).map(|i| json!(format!("v{}", i % 20))).collect();
        let t = single(AtomicType::String, values);
        let a = summarize_seeded(&t, 5, 7).unwrap();
        let b = summarize_seeded(&t, 5, 7).unwrap();
        assert_eq!(a, b);
        let samples = &a.columns[0].stats.samples;
        assert_eq!(samples.len(), 5);
        let idx: Vec<usize> = samples
            .iter()
            .map(|s| s.as_str().unwrap()[1..].parse().unwrap())
            .collect();
        assert!(idx.windows(2).all(|w| w[0] < w[1]), "{idx:?}");
    }

    fn gateway_with(replies: Vec<&str>) -> LlmGateway {
        let transport = Arc::new(ScriptedTransport::by_command([(ENRICH_COMMAND, replies)]));
        LlmGateway::new(GatewayMode::Live, transport, Arc::new(ReplayStore::in_memory()))
    }

    fn stock_summary() -> DataSummary {
        let t = DataTable::from_csv(b"symbol,price\nMSFT,1.5\nIBM,2\n").unwrap();
        summarize(&t, 5).unwrap()
    }

    #[test]
    fn enrich_fills_semantics_and_keeps_stats() {
        let s = stock_summary();
        let reply = "```json\n{\"dataset_description\":\"stock prices\",\"columns\":[{\"name\":\"symbol\",\"semantic_type\":\"company ticker\",\"description\":\"ticker\"}]}\n```";
        let e = enrich(&s, &gateway_with(vec![reply])).unwrap();
        assert_eq!(e.dataset_description, "stock prices");
        assert_eq!(e.columns[0].semantic_type, "company ticker");
        assert_eq!(e.columns[1].semantic_type, "");
        assert_eq!(e.stats(), s.stats());
        assert!(e.enrichment_warning.is_none());
    }

    #[test]
    fn enrich_repairs_once_then_falls_back() {
        let s = stock_summary();
        let good = "```json\n{\"dataset_description\":\"d\",\"columns\":[]}\n```";
        let repaired = enrich(&s, &gateway_with(vec!["garbage", good])).unwrap();
        assert_eq!(repaired.dataset_description, "d");

        let failed = enrich(&s, &gateway_with(vec!["garbage", "still garbage"])).unwrap();
        assert!(failed.enrichment_warning.is_some());
        let mut expected = s.clone();
        expected.enrichment_warning = failed.enrichment_warning.clone();
        assert_eq!(failed, expected);
    }

    #[test]
    fn enrich_replay_miss_propagates() {
        let gw = LlmGateway::replay(Arc::new(ReplayStore::in_memory()));
        assert!(matches!(enrich(&stock_summary(), &gw), Err(GatewayError::ReplayMiss { .. })));
    }

    #[test]
    fn prompt_rendering_has_no_rows() {
        let t = DataTable::from_csv(b"a\nsecret-row-value\n").unwrap();
        let s = summarize(&t, 1).unwrap();
        let r = s.render_for_prompt();
        assert!(r.contains("\"rows\":1"));
        assert!(serde_json::from_str::<Value>(&r).is_ok());
    }
}
