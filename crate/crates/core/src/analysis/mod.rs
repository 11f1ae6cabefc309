//! Static analysis of synthesized widget code.
//!
//! A widget arrives as a markup fragment plus a callback script. The passes
//! here rename element ids that collide with the session, check the callback
//! contract, check chart property accesses for missing parents, and decide
//! whether the widget emits data transforms.

mod classify;
mod ids;
pub mod markup;
mod safety;
pub mod script;
mod signature;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::chart::ChartSpec;

pub use classify::{classify_transform_widget, Classification};
pub use ids::{deconflict_ids, Deconflicted};
pub use markup::{markup_ids, parse_fragment, Fragment, MarkupError};
pub use safety::check_property_safety;
pub use script::ScriptError;
pub use signature::check_callback_signature;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    IdConflict,
    Signature,
    UnresolvedId,
    NullSafety,
    Classification,
    /// Markup or script does not parse.
    Parse,
    /// A sandbox probe run failed.
    SmokeTest,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::IdConflict => "id_conflict",
            Rule::Signature => "signature",
            Rule::UnresolvedId => "unresolved_id",
            Rule::NullSafety => "null_safety",
            Rule::Classification => "classification",
            Rule::Parse => "parse",
            Rule::SmokeTest => "smoke_test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Markup,
    Callback,
    Chart,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Location {
    pub source: SourceKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub column: Option<usize>,
    /// JSON pointer into the chart, for findings about chart paths.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pointer: Option<String>,
}

impl Location {
    pub fn at(source: SourceKind, text: &str, offset: usize) -> Self {
        let (line, column) = script::line_col(text, offset);
        Self {
            source,
            line: Some(line),
            column: Some(column),
            pointer: None,
        }
    }

    pub fn line_col(source: SourceKind, line: usize, column: usize) -> Self {
        Self {
            source,
            line: Some(line),
            column: Some(column),
            pointer: None,
        }
    }

    pub fn pointer(pointer: impl Into<String>) -> Self {
        Self {
            source: SourceKind::Chart,
            line: None,
            column: None,
            pointer: Some(pointer.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub rule: Rule,
    pub severity: Severity,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub location: Option<Location>,
}

impl Finding {
    pub fn error(rule: Rule, message: impl Into<String>, location: Option<Location>) -> Self {
        Self {
            rule,
            severity: Severity::Error,
            message: message.into(),
            location,
        }
    }

    pub fn warning(rule: Rule, message: impl Into<String>, location: Option<Location>) -> Self {
        Self {
            rule,
            severity: Severity::Warning,
            message: message.into(),
            location,
        }
    }
}

impl std::fmt::Display for Finding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}[{}]: {}", self.rule.as_str(), self.message)?;
        if let Some(loc) = &self.location {
            if let (Some(l), Some(c)) = (loc.line, loc.column) {
                let src = match loc.source {
                    SourceKind::Markup => "markup",
                    SourceKind::Callback => "callback",
                    SourceKind::Chart => "chart",
                };
                write!(f, " ({src} {l}:{c})")?;
            }
            if let Some(p) = &loc.pointer {
                write!(f, " at {p}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub ok: bool,
    pub findings: Vec<Finding>,
}

impl AnalysisReport {
    pub fn from_findings(findings: Vec<Finding>) -> Self {
        let ok = findings.iter().all(|f| f.severity != Severity::Error);
        Self { ok, findings }
    }

    pub fn ok() -> Self {
        Self::from_findings(Vec::new())
    }

    pub fn merge(mut self, other: AnalysisReport) -> Self {
        self.findings.extend(other.findings);
        Self::from_findings(self.findings)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Error)
    }

    pub fn has_rule(&self, rule: Rule) -> bool {
        self.findings.iter().any(|f| f.rule == rule)
    }

    /// Error findings, one per line, for repair prompts.
    pub fn describe_errors(&self) -> String {
        self.errors().map(ToString::to_string).collect::<Vec<_>>().join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenameEntry {
    pub old_id: String,
    pub new_id: String,
}

/// Ordered id renames. An old id may appear more than once when it was
/// duplicated inside the fragment; every new id is distinct.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RenameMap(pub Vec<RenameEntry>);

impl RenameMap {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn entries(&self) -> &[RenameEntry] {
        &self.0
    }

    pub fn new_ids(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|e| e.new_id.as_str())
    }
}

/// Output of the full static pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostProcessed {
    pub markup: String,
    pub callback_source: String,
    pub renames: RenameMap,
    pub is_transform_widget: bool,
    pub report: AnalysisReport,
}

/// Runs deconfliction, signature, property-safety and classification.
/// Parse failures short-circuit with a `parse` error finding.
pub fn post_process(markup: &str, callback_source: &str, existing_ids: &BTreeSet<String>, chart: &ChartSpec) -> PostProcessed {
    let failed = |finding: Finding| PostProcessed {
        markup: markup.to_string(),
        callback_source: callback_source.to_string(),
        renames: RenameMap::default(),
        is_transform_widget: false,
        report: AnalysisReport::from_findings(vec![finding]),
    };
    let d = match deconflict_ids(markup, callback_source, existing_ids) {
        Ok(d) => d,
        Err(ids::DeconflictError::Markup(e)) => {
            return failed(Finding::error(
                Rule::Parse,
                format!("markup does not parse: {}", e.message),
                Some(Location::line_col(SourceKind::Markup, e.line, e.column)),
            ))
        }
        Err(ids::DeconflictError::Script(e)) => {
            return failed(Finding::error(
                Rule::Parse,
                format!("callback does not parse: {}", e.message),
                Some(Location::line_col(SourceKind::Callback, e.line, e.column)),
            ))
        }
    };
    let mut report = AnalysisReport::from_findings(d.findings)
        .merge(check_callback_signature(&d.callback_source))
        .merge(check_property_safety(&d.callback_source, chart));
    let class = classify_transform_widget(&d.callback_source);
    let is_transform_widget = match class {
        Ok(c) => {
            report = report.merge(AnalysisReport::from_findings(c.findings));
            c.is_transform
        }
        Err(_) => false,
    };
    PostProcessed {
        markup: d.markup,
        callback_source: d.callback_source,
        renames: d.renames,
        is_transform_widget,
        report,
    }
}
