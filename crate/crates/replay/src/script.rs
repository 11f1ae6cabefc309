//! Versioned session scripts.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use dynavis_core::sandbox::EventValue;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const SCRIPT_VERSION: u32 = 1;

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionScript {
    pub version: u32,
    /// Repo-relative path of the dataset file.
    pub dataset: String,
    /// Ask the model for dataset descriptions on import.
    #[serde(default = "yes")]
    pub enrich: bool,
    /// Synthesize a widget with each chart edit.
    #[serde(default = "yes")]
    pub auto_widget: bool,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    ChartCommand {
        command: String,
        /// Name under which later steps refer to the accompanying widget.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        auto_widget_as: Option<String>,
        /// The step passes only if the command fails with this error kind.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expect_error: Option<String>,
    },
    WidgetCommand {
        command: String,
        #[serde(rename = "as")]
        alias: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expect_error: Option<String>,
    },
    WidgetEvent {
        widget: String,
        target: String,
        value: EventValue,
    },
    Toggle {
        widget: String,
        enabled: bool,
    },
    Delete {
        widget: String,
    },
    /// Compares the effective spec at `pointer` with `equals`, or checks that
    /// nothing is there when `absent` is set.
    Assert {
        pointer: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        equals: Option<Value>,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        absent: bool,
    },
}

impl Step {
    pub fn op(&self) -> &'static str {
        match self {
            Step::ChartCommand { .. } => "chart_command",
            Step::WidgetCommand { .. } => "widget_command",
            Step::WidgetEvent { .. } => "widget_event",
            Step::Toggle { .. } => "toggle",
            Step::Delete { .. } => "delete",
            Step::Assert { .. } => "assert",
        }
    }

    pub fn is_synthesis(&self) -> bool {
        matches!(self, Step::ChartCommand { .. } | Step::WidgetCommand { .. })
    }
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: invalid script: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("unsupported script version {0}")]
    Version(u32),
    #[error("step {index}: {message}")]
    Step { index: usize, message: String },
    #[error("dataset {0:?} not found next to the script or in any parent directory")]
    DatasetNotFound(String),
}

impl SessionScript {
    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScriptError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let script: Self = serde_json::from_str(&text).map_err(|e| ScriptError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        script.check()?;
        Ok(script)
    }

    /// Version, pointer syntax and widget references resolving to widgets
    /// named by earlier steps.
    pub fn check(&self) -> Result<(), ScriptError> {
        if self.version != SCRIPT_VERSION {
            return Err(ScriptError::Version(self.version));
        }
        let mut names = BTreeSet::new();
        for (index, step) in self.steps.iter().enumerate() {
            let err = |message: String| ScriptError::Step { index, message };
            match step {
                Step::ChartCommand { auto_widget_as, .. } => {
                    if let Some(name) = auto_widget_as {
                        if !self.auto_widget {
                            return Err(err("auto_widget_as needs auto widgets enabled".into()));
                        }
                        if !names.insert(name.clone()) {
                            return Err(err(format!("widget name {name:?} is already taken")));
                        }
                    }
                }
                Step::WidgetCommand { alias, .. } => {
                    if !names.insert(alias.clone()) {
                        return Err(err(format!("widget name {alias:?} is already taken")));
                    }
                }
                Step::WidgetEvent { widget, .. } | Step::Toggle { widget, .. } | Step::Delete { widget } => {
                    if !names.contains(widget) {
                        return Err(err(format!("widget {widget:?} is not created by an earlier step")));
                    }
                }
                Step::Assert { pointer, equals, absent } => {
                    if !(pointer.is_empty() || pointer.starts_with('/')) {
                        return Err(err(format!("{pointer:?} is not a JSON pointer")));
                    }
                    if equals.is_some() == *absent {
                        return Err(err("assert needs exactly one of `equals` and `absent`".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Looks for the dataset relative to `script_dir` and then each of its
    /// ancestors, so repo-relative paths work from any fixture folder.
    pub fn resolve_dataset(&self, script_dir: &Path) -> Result<PathBuf, ScriptError> {
        let rel = Path::new(&self.dataset);
        if rel.is_absolute() {
            return rel
                .exists()
                .then(|| rel.to_path_buf())
                .ok_or_else(|| ScriptError::DatasetNotFound(self.dataset.clone()));
        }
        script_dir
            .ancestors()
            .map(|dir| dir.join(rel))
            .find(|p| p.is_file())
            .ok_or_else(|| ScriptError::DatasetNotFound(self.dataset.clone()))
    }
}
