//! Session state as a fold over its event log.

use std::collections::BTreeSet;

use dynavis_core::chart::ChartSpec;
use dynavis_core::data::{Column, DataTable};
use dynavis_core::summary::DataSummary;
use dynavis_core::widget::{RegistryError, WidgetRegistry};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::events::{Event, LogEntry};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ApplyError {
    #[error("log must start with session_created")]
    MissingCreate,
    #[error("session_created may only appear first")]
    DuplicateCreate,
    #[error("event {seq}: {message}")]
    Rejected { seq: u64, message: String },
    #[error("event {seq}: no base chart")]
    NoChart { seq: u64 },
    #[error("event seq {found} follows {previous}")]
    OutOfOrder { previous: u64, found: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub dataset: DataTable,
    pub summary: DataSummary,
    pub base_chart: Option<ChartSpec>,
    pub registry: WidgetRegistry,
    /// Width, height and config of an imported spec, kept for export.
    pub layout: Map<String, Value>,
    /// Widgets created so far, deleted ones included; names the next id.
    pub widgets_created: u64,
}

impl SessionState {
    pub fn created(id: impl Into<String>, event: &Event) -> Result<Self, ApplyError> {
        let Event::SessionCreated {
            dataset,
            summary,
            base_chart,
            layout,
        } = event
        else {
            return Err(ApplyError::MissingCreate);
        };
        Ok(Self {
            id: id.into(),
            dataset: dataset.clone(),
            summary: summary.clone(),
            base_chart: base_chart.clone(),
            registry: WidgetRegistry::new(),
            layout: layout.clone(),
            widgets_created: 0,
        })
    }

    /// Rebuilds the state from a complete log.
    pub fn replay(id: &str, log: &[LogEntry]) -> Result<Self, ApplyError> {
        let first = log.first().ok_or(ApplyError::MissingCreate)?;
        let mut state = Self::created(id, &first.event)?;
        state.apply_all(first.seq, &log[1..])?;
        Ok(state)
    }

    /// Applies entries that follow position `after`.
    pub fn apply_all(&mut self, after: u64, entries: &[LogEntry]) -> Result<(), ApplyError> {
        let mut previous = after;
        for e in entries {
            if e.seq != previous + 1 {
                return Err(ApplyError::OutOfOrder { previous, found: e.seq });
            }
            self.apply(e.seq, &e.event)?;
            previous = e.seq;
        }
        Ok(())
    }

    pub fn apply(&mut self, seq: u64, event: &Event) -> Result<(), ApplyError> {
        let reg = |e: RegistryError| ApplyError::Rejected { seq, message: e.to_string() };
        match event {
            Event::SessionCreated { .. } => return Err(ApplyError::DuplicateCreate),
            Event::ChartCommand { chart, auto_widget, .. } => {
                self.base_chart = Some(chart.clone());
                if let Some(w) = auto_widget {
                    self.registry.register(w.clone()).map_err(reg)?;
                    self.widgets_created += 1;
                }
            }
            Event::WidgetCommand { widget, .. } => {
                if self.base_chart.is_none() {
                    return Err(ApplyError::NoChart { seq });
                }
                self.registry.register(widget.clone()).map_err(reg)?;
                self.widgets_created += 1;
            }
            Event::WidgetResult {
                widget_id,
                transforms,
                chart,
            } => {
                self.registry.record_transforms(widget_id, transforms.clone()).map_err(reg)?;
                self.base_chart = Some(chart.clone());
            }
            Event::Toggle { widget_id, enabled } => self.registry.toggle(widget_id, *enabled).map_err(reg)?,
            Event::WidgetDeleted { widget_id } => {
                self.registry.remove(widget_id).map_err(reg)?;
            }
            Event::CommandFailed { .. } => {}
        }
        Ok(())
    }

    pub fn next_widget_id(&self) -> String {
        format!("w{}", self.widgets_created + 1)
    }

    pub fn columns(&self) -> &[Column] {
        self.dataset.columns()
    }

    pub fn element_ids(&self) -> BTreeSet<String> {
        self.registry.element_ids()
    }

    /// Base chart with enabled widget transforms, or `None` before the first
    /// chart exists.
    pub fn effective_spec(&self) -> Result<Option<ChartSpec>, RegistryError> {
        match &self.base_chart {
            Some(base) => self.registry.effective_spec(base, Some(self.columns())).map(Some),
            None => Ok(None),
        }
    }

    /// Serialized base chart, registry and effective spec; equal strings
    /// mean equal observable state.
    pub fn canonical(&self) -> String {
        let effective = self.effective_spec().ok().flatten();
        serde_json::to_string(&serde_json::json!({
            "base_chart": self.base_chart,
            "registry": self.registry,
            "effective_spec": effective,
        }))
        .expect("state serializes")
    }
}
