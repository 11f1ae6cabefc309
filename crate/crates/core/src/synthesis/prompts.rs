//! Prompt templates, few-shot banks and prompt assembly.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::chart::{ChartSpec, DATA_REF_NAME};
use crate::gateway::scripted::COMMAND_MARKER;
use crate::summary::DataSummary;

pub const CHART_SYSTEM: &str = include_str!("../../prompts/chart_system.md");
pub const WIDGET_SYSTEM: &str = include_str!("../../prompts/widget_system.md");
pub const WIDGET_HTML_TEMPLATE: &str = include_str!("../../prompts/widget_template.html");
pub const WIDGET_JS_TEMPLATE: &str = include_str!("../../prompts/widget_template.js");
const CHART_EXAMPLES: &str = include_str!("../../prompts/chart_examples.v1.json");
const WIDGET_EXAMPLES: &str = include_str!("../../prompts/widget_examples.v1.json");

/// Version tag of the prompt set, recorded with every outcome.
pub const PROMPT_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputContract {
    /// One `json` block holding a chart.
    JsonSpecBlock,
    /// One `html` block and one `javascript` block.
    WidgetDualBlock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShot {
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grounding {
    /// Rendered data summary; never raw rows.
    pub summary: String,
    /// Current chart with its data reduced to the named reference.
    pub chart: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_preamble: String,
    pub few_shot: Vec<FewShot>,
    pub grounding: Grounding,
    pub user_command: String,
    pub output_contract: OutputContract,
}

#[derive(Deserialize)]
struct ChartBank {
    examples: Vec<ChartExample>,
}

#[derive(Deserialize)]
struct ChartExample {
    description: String,
    spec: Value,
}

#[derive(Deserialize)]
struct WidgetBank {
    examples: Vec<WidgetExample>,
}

#[derive(Deserialize)]
struct WidgetExample {
    command: String,
    html: String,
    javascript: String,
}

pub fn chart_few_shot() -> Vec<FewShot> {
    let bank: ChartBank = serde_json::from_str(CHART_EXAMPLES).expect("chart example bank parses");
    bank.examples
        .into_iter()
        .map(|e| FewShot {
            input: e.description,
            output: format!("```json\n{}\n```", serde_json::to_string_pretty(&e.spec).expect("spec serializes")),
        })
        .collect()
}

pub fn widget_few_shot() -> Vec<FewShot> {
    let bank: WidgetBank = serde_json::from_str(WIDGET_EXAMPLES).expect("widget example bank parses");
    bank.examples
        .into_iter()
        .map(|e| FewShot {
            input: e.command,
            output: format!("```html\n{}\n```\n\n```javascript\n{}\n```", e.html, e.javascript),
        })
        .collect()
}

/// Chart as sent to the model: inline data replaced by the named reference.
pub fn chart_for_prompt(chart: &ChartSpec) -> String {
    let mut doc = chart.document().clone();
    if doc.contains_key("data") {
        doc.insert("data".into(), serde_json::json!({ "name": DATA_REF_NAME }));
    }
    serde_json::to_string_pretty(&Value::Object(doc)).expect("chart serializes")
}

impl PromptBundle {
    pub fn for_chart(summary: &DataSummary, command: &str, existing: Option<&ChartSpec>) -> Self {
        Self {
            system_preamble: CHART_SYSTEM.to_string(),
            few_shot: chart_few_shot(),
            grounding: Grounding {
                summary: summary.render_for_prompt(),
                chart: existing.map(chart_for_prompt),
            },
            user_command: command.trim().to_string(),
            output_contract: OutputContract::JsonSpecBlock,
        }
    }

    pub fn for_widget(summary: &DataSummary, chart: &ChartSpec, command: &str) -> Self {
        let preamble = WIDGET_SYSTEM
            .replace("{{HTML_TEMPLATE}}", WIDGET_HTML_TEMPLATE.trim_end())
            .replace("{{JS_TEMPLATE}}", WIDGET_JS_TEMPLATE.trim_end());
        Self {
            system_preamble: preamble,
            few_shot: widget_few_shot(),
            grounding: Grounding {
                summary: summary.render_for_prompt(),
                chart: Some(chart_for_prompt(chart)),
            },
            user_command: command.trim().to_string(),
            output_contract: OutputContract::WidgetDualBlock,
        }
    }

    /// System message: preamble followed by the examples.
    pub fn system_message(&self) -> String {
        let mut out = self.system_preamble.trim_end().to_string();
        for (i, ex) in self.few_shot.iter().enumerate() {
            let label = match self.output_contract {
                OutputContract::JsonSpecBlock => "Description",
                OutputContract::WidgetDualBlock => "Request",
            };
            out.push_str(&format!("\n\nExample {}\n{label}: {}\n{}", i + 1, ex.input, ex.output));
        }
        out
    }

    /// First user message of an attempt. Later attempts name the failure of
    /// the previous one so that the request differs from the first.
    pub fn user_message(&self, attempt: u32, previous_error: Option<&str>) -> String {
        let mut out = format!("{COMMAND_MARKER} {}\n\nDATA SUMMARY:\n{}\n", self.user_command, self.grounding.summary);
        match &self.grounding.chart {
            Some(chart) => out.push_str(&format!("\nCURRENT CHART:\n```json\n{chart}\n```\n")),
            None => out.push_str("\nCURRENT CHART: none\n"),
        }
        if attempt > 1 {
            out.push_str(&format!("\nThis is attempt {attempt}."));
            if let Some(err) = previous_error {
                out.push_str(&format!(" The previous attempt failed with:\n{err}\n"));
            }
        }
        out
    }

    pub fn repair_message(&self, error: &str) -> String {
        let blocks = match self.output_contract {
            OutputContract::JsonSpecBlock => "a single json code block",
            OutputContract::WidgetDualBlock => "one html code block and one javascript code block",
        };
        format!("Your reply has errors:\n{error}\n\nFix them and reply again with {blocks}.")
    }
}
