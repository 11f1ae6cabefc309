//! Form state of a widget's markup, carried across callback runs.

use serde::{Deserialize, Serialize};

use super::SyntheticEvent;
use crate::analysis::markup::{parse_fragment, Element, Fragment, MarkupError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomNode {
    pub tag: String,
    /// Attributes in source order; bare attributes have an empty value.
    pub attrs: Vec<(String, String)>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub text: String,
    pub value: String,
    pub checked: bool,
    pub selected: bool,
}

impl DomNode {
    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attrs.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }

    pub fn id(&self) -> Option<&str> {
        self.attr("id")
    }

    /// Lowercased `type` of an input; empty for other elements.
    pub fn input_type(&self) -> String {
        if self.tag != "input" {
            return String::new();
        }
        self.attr("type").unwrap_or("text").to_ascii_lowercase()
    }

    fn option_value(&self) -> String {
        self.attr("value").map_or_else(|| self.text.trim().to_string(), str::to_string)
    }
}

/// Element states of one mounted widget, in document order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidgetDom {
    pub elements: Vec<DomNode>,
}

impl WidgetDom {
    pub fn from_markup(markup: &str) -> Result<Self, MarkupError> {
        Ok(Self::from_fragment(&parse_fragment(markup)?))
    }

    /// Initial state the way a browser would mount it.
    pub fn from_fragment(fragment: &Fragment) -> Self {
        let mut elements: Vec<DomNode> = fragment.elements.iter().map(initial_node).collect();
        for (i, e) in fragment.elements.iter().enumerate() {
            if e.tag == "select" {
                let options: Vec<usize> =
                    fragment.descendants(i).into_iter().filter(|&j| fragment.elements[j].tag == "option").collect();
                let explicit = options.iter().position(|&j| elements[j].selected);
                let multiple = e.has_attr("multiple");
                for (k, &j) in options.iter().enumerate() {
                    elements[j].selected = match explicit {
                        Some(_) if multiple => elements[j].selected,
                        Some(first) => k == first,
                        None => !multiple && k == 0,
                    };
                }
            }
        }
        Self { elements }
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.elements.iter().position(|e| e.id() == Some(id))
    }

    fn options_of(&self, select: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack: Vec<usize> = self.elements[select].children.iter().rev().copied().collect();
        while let Some(i) = stack.pop() {
            if self.elements[i].tag == "option" {
                out.push(i);
            }
            stack.extend(self.elements[i].children.iter().rev());
        }
        out
    }

    /// Current value as a script would read it from `.value`.
    pub fn value_of(&self, index: usize) -> String {
        let node = &self.elements[index];
        if node.tag == "select" {
            return self
                .options_of(index)
                .into_iter()
                .find(|&j| self.elements[j].selected)
                .map(|j| self.elements[j].option_value())
                .unwrap_or_default();
        }
        node.value.clone()
    }

    /// Applies what the user did before `change` fires. Booleans set the
    /// checked state of checkboxes and radios; everything else sets the
    /// value (selecting the matching option of a select).
    pub fn apply_event(&mut self, ev: &SyntheticEvent) -> Result<usize, String> {
        let index = self
            .index_of(&ev.target_id)
            .ok_or_else(|| format!("event target #{} is not in the widget markup", ev.target_id))?;
        let kind = self.elements[index].input_type();
        match (&ev.value, kind.as_str()) {
            (EventValue::Bool(b), "checkbox" | "radio") => {
                self.elements[index].checked = *b;
                if *b && kind == "radio" {
                    let name = self.elements[index].attr("name").map(str::to_string);
                    if let Some(name) = name {
                        for (j, e) in self.elements.iter_mut().enumerate() {
                            if j != index && e.input_type() == "radio" && e.attr("name") == Some(name.as_str()) {
                                e.checked = false;
                            }
                        }
                    }
                }
            }
            (value, _) if self.elements[index].tag == "select" => {
                let wanted = value.as_dom_string();
                let options = self.options_of(index);
                if !options.iter().any(|&j| self.elements[j].option_value() == wanted) {
                    return Err(format!("select #{} has no option with value {wanted:?}", ev.target_id));
                }
                let mut found = false;
                for j in options {
                    let hit = !found && self.elements[j].option_value() == wanted;
                    self.elements[j].selected = hit;
                    found |= hit;
                }
            }
            (value, _) => self.elements[index].value = value.as_dom_string(),
        }
        Ok(index)
    }
}

fn initial_node(e: &Element) -> DomNode {
    let attrs: Vec<(String, String)> =
        e.attrs.iter().map(|a| (a.name.clone(), a.value.clone().unwrap_or_default())).collect();
    let kind = if e.tag == "input" {
        e.attr_value("type").unwrap_or("text").to_ascii_lowercase()
    } else {
        String::new()
    };
    let value = match e.tag.as_str() {
        "textarea" => e.text.clone(),
        "input" => match e.attr_value("value") {
            Some(v) => v.to_string(),
            None => default_input_value(e, &kind),
        },
        _ => String::new(),
    };
    DomNode {
        tag: e.tag.clone(),
        attrs,
        parent: e.parent,
        children: e.children.clone(),
        text: e.text.clone(),
        value,
        checked: e.tag == "input" && e.has_attr("checked"),
        selected: e.tag == "option" && e.has_attr("selected"),
    }
}

fn default_input_value(e: &Element, kind: &str) -> String {
    match kind {
        "checkbox" | "radio" => "on".into(),
        "range" => {
            let (min, max) = range_bounds(e);
            format_number(if max < min { min } else { min + (max - min) / 2.0 })
        }
        "color" => "#000000".into(),
        _ => String::new(),
    }
}

/// Range bounds with the browser defaults of 0 and 100.
pub(crate) fn range_bounds(e: &Element) -> (f64, f64) {
    let num = |name: &str, default: f64| {
        e.attr_value(name).and_then(|v| v.trim().parse::<f64>().ok()).filter(|v| v.is_finite()).unwrap_or(default)
    };
    (num("min", 0.0), num("max", 100.0))
}

/// Number formatting as a script's `String(n)` would produce for the
/// values probes use.
pub fn format_number(n: f64) -> String {
    if n.fract() == 0.0 && n.abs() < 1e15 {
        format!("{}", n as i64)
    } else {
        format!("{n}")
    }
}

/// Value carried by a synthetic `change` event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EventValue {
    Bool(bool),
    Number(f64),
    Text(String),
}

impl EventValue {
    fn as_dom_string(&self) -> String {
        match self {
            EventValue::Bool(b) => b.to_string(),
            EventValue::Number(n) => format_number(*n),
            EventValue::Text(s) => s.clone(),
        }
    }
}

impl From<bool> for EventValue {
    fn from(b: bool) -> Self {
        EventValue::Bool(b)
    }
}

impl From<f64> for EventValue {
    fn from(n: f64) -> Self {
        EventValue::Number(n)
    }
}

impl From<i64> for EventValue {
    fn from(n: i64) -> Self {
        EventValue::Number(n as f64)
    }
}

impl From<&str> for EventValue {
    fn from(s: &str) -> Self {
        EventValue::Text(s.to_string())
    }
}

impl From<String> for EventValue {
    fn from(s: String) -> Self {
        EventValue::Text(s)
    }
}
