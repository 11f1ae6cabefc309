//! Dynamic widgets and the per-session registry that orders them.
//!
//! The registry keeps each widget's most recent transform list. The
//! effective chart is the base chart with the base's own transforms first,
//! followed by the latest transforms of every enabled transform widget in
//! creation order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::chart::{normalize_dates, validate_spec, validate_spec_with_columns, ChartSpec, ValidationReport};
use crate::data::Column;

pub type TransformList = Vec<Value>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Widget {
    pub id: String,
    pub title: String,
    pub markup: String,
    pub callback_source: String,
    pub is_transform_widget: bool,
    pub enabled: bool,
    pub seq: u64,
}

impl Widget {
    /// Unregistered widget; `seq` is assigned on registration.
    pub fn new(
        id: impl Into<String>,
        title: impl Into<String>,
        markup: impl Into<String>,
        callback_source: impl Into<String>,
        is_transform_widget: bool,
    ) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            markup: markup.into(),
            callback_source: callback_source.into(),
            is_transform_widget,
            enabled: true,
            seq: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegistryError {
    #[error("widget id {0:?} is already registered")]
    DuplicateId(String),
    #[error("unknown widget {0:?}")]
    UnknownWidget(String),
    #[error("widget {0:?} is not a transform widget")]
    NotTransformWidget(String),
    #[error("transform {index} of widget {widget:?} is invalid: {report}")]
    InvalidTransform {
        widget: String,
        index: usize,
        report: String,
    },
    #[error("base chart `transform` must be an array")]
    BaseTransformNotArray,
    #[error("effective spec fails validation: {}", report.describe())]
    InvalidEffectiveSpec { report: ValidationReport },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WidgetRegistry {
    widgets: Vec<Widget>,
    latest_transforms: BTreeMap<String, TransformList>,
    next_seq: u64,
}

impl WidgetRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn widgets(&self) -> &[Widget] {
        &self.widgets
    }

    pub fn get(&self, id: &str) -> Option<&Widget> {
        self.widgets.iter().find(|w| w.id == id)
    }

    pub fn latest_transforms(&self) -> &BTreeMap<String, TransformList> {
        &self.latest_transforms
    }

    pub fn transforms_of(&self, id: &str) -> Option<&TransformList> {
        self.latest_transforms.get(id)
    }

    pub fn len(&self) -> usize {
        self.widgets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.widgets.is_empty()
    }

    /// Widgets newest first, as shown in the widget panel.
    pub fn panel(&self) -> Vec<&Widget> {
        let mut out: Vec<&Widget> = self.widgets.iter().collect();
        out.sort_by(|a, b| b.seq.cmp(&a.seq));
        out
    }

    /// Every element id in use across registered widgets' markup.
    pub fn element_ids(&self) -> std::collections::BTreeSet<String> {
        self.widgets
            .iter()
            .flat_map(|w| crate::analysis::markup_ids(&w.markup))
            .collect()
    }

    /// Appends `w` with the next sequence number; the widget starts enabled.
    pub fn register(&mut self, mut w: Widget) -> Result<&Widget, RegistryError> {
        if self.get(&w.id).is_some() {
            return Err(RegistryError::DuplicateId(w.id));
        }
        self.next_seq += 1;
        w.seq = self.next_seq;
        w.enabled = true;
        self.widgets.push(w);
        Ok(self.widgets.last().expect("just pushed"))
    }

    /// Replaces the widget's latest transform list.
    pub fn record_transforms(&mut self, widget_id: &str, transforms: TransformList) -> Result<(), RegistryError> {
        let w = self
            .get(widget_id)
            .ok_or_else(|| RegistryError::UnknownWidget(widget_id.to_string()))?;
        if !w.is_transform_widget && !transforms.is_empty() {
            return Err(RegistryError::NotTransformWidget(widget_id.to_string()));
        }
        for (index, t) in transforms.iter().enumerate() {
            let report = crate::chart::schema::validate_transform(t);
            if !report.ok {
                return Err(RegistryError::InvalidTransform {
                    widget: widget_id.to_string(),
                    index,
                    report: report.describe(),
                });
            }
        }
        self.latest_transforms.insert(widget_id.to_string(), transforms);
        Ok(())
    }

    pub fn toggle(&mut self, widget_id: &str, enabled: bool) -> Result<(), RegistryError> {
        let w = self
            .widgets
            .iter_mut()
            .find(|w| w.id == widget_id)
            .ok_or_else(|| RegistryError::UnknownWidget(widget_id.to_string()))?;
        if !w.is_transform_widget {
            return Err(RegistryError::NotTransformWidget(widget_id.to_string()));
        }
        w.enabled = enabled;
        Ok(())
    }

    pub fn remove(&mut self, widget_id: &str) -> Result<Widget, RegistryError> {
        let pos = self
            .widgets
            .iter()
            .position(|w| w.id == widget_id)
            .ok_or_else(|| RegistryError::UnknownWidget(widget_id.to_string()))?;
        self.latest_transforms.remove(widget_id);
        Ok(self.widgets.remove(pos))
    }

    /// Widget transforms to append to the base chart, in seq order.
    pub fn active_transforms(&self) -> TransformList {
        let mut ordered: Vec<&Widget> = self
            .widgets
            .iter()
            .filter(|w| w.is_transform_widget && w.enabled)
            .collect();
        ordered.sort_by_key(|w| w.seq);
        ordered
            .into_iter()
            .filter_map(|w| self.latest_transforms.get(&w.id))
            .flatten()
            .cloned()
            .collect()
    }

    /// Base chart plus active widget transforms, date-normalized and
    /// validated. Column-aware semantic checks run when `columns` is given.
    pub fn effective_spec(&self, base: &ChartSpec, columns: Option<&[Column]>) -> Result<ChartSpec, RegistryError> {
        let extra = self.active_transforms();
        let combined = if extra.is_empty() {
            base.clone()
        } else {
            let mut doc = base.document().clone();
            let entry = doc.entry("transform").or_insert_with(|| Value::Array(Vec::new()));
            let Value::Array(list) = entry else {
                return Err(RegistryError::BaseTransformNotArray);
            };
            list.extend(extra);
            ChartSpec::from_value(Value::Object(doc)).expect("object stays an object")
        };
        let (normalized, _) = normalize_dates(&combined);
        let report = match columns {
            Some(cols) => validate_spec_with_columns(&normalized, cols),
            None => validate_spec(&normalized),
        };
        if !report.ok {
            return Err(RegistryError::InvalidEffectiveSpec { report });
        }
        Ok(normalized)
    }

    /// Checks the structural invariants; used by tests and on load.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut ids = std::collections::HashSet::new();
        for w in &self.widgets {
            if !ids.insert(w.id.as_str()) {
                return Err(format!("duplicate id {:?}", w.id));
            }
        }
        if !self.widgets.windows(2).all(|p| p[0].seq < p[1].seq) {
            return Err("seq not strictly increasing".into());
        }
        if self.widgets.last().is_some_and(|w| w.seq > self.next_seq) {
            return Err("seq counter behind widgets".into());
        }
        for (id, t) in &self.latest_transforms {
            let w = self.get(id).ok_or_else(|| format!("transforms for unknown widget {id:?}"))?;
            if !w.is_transform_widget && !t.is_empty() {
                return Err(format!("non-transform widget {id:?} has transforms"));
            }
        }
        Ok(())
    }
}
