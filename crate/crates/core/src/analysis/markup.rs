//! Span-preserving parser for widget markup fragments.
//!
//! Accepts the HTML subset synthesized widgets use: one root element,
//! nested elements, quoted or bare attributes, void elements, comments, raw
//! text inside `script`/`style`/`textarea`/`title`, and the common named and
//! numeric character references. Anything else is a parse error with a
//! 1-based line/column.

use std::ops::Range;

use serde::Serialize;
use thiserror::Error;

const VOID_ELEMENTS: [&str; 13] = [
    "area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "source", "track", "wbr",
];
const RAW_TEXT_ELEMENTS: [&str; 4] = ["script", "style", "textarea", "title"];

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("markup parse error at {line}:{column}: {message}")]
pub struct MarkupError {
    pub message: String,
    pub line: usize,
    pub column: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attribute {
    /// Lowercased name.
    pub name: String,
    /// Decoded value; `None` for bare attributes like `checked`.
    pub value: Option<String>,
    /// Byte range of the raw value inside the source, quotes excluded.
    pub value_span: Option<Range<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Element {
    /// Lowercased tag name.
    pub tag: String,
    pub attrs: Vec<Attribute>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Decoded text of direct text children, concatenated.
    pub text: String,
    /// Byte offset of the `<` that opens the element.
    pub offset: usize,
}

impl Element {
    /// First attribute with this (lowercase) name.
    pub fn attr(&self, name: &str) -> Option<&Attribute> {
        self.attrs.iter().find(|a| a.name == name)
    }

    pub fn attr_value(&self, name: &str) -> Option<&str> {
        self.attr(name).and_then(|a| a.value.as_deref())
    }

    pub fn has_attr(&self, name: &str) -> bool {
        self.attr(name).is_some()
    }

    pub fn id(&self) -> Option<&str> {
        self.attr_value("id")
    }
}

/// Parsed fragment. Elements are stored in document order; index 0 is the
/// root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fragment {
    pub elements: Vec<Element>,
}

impl Fragment {
    pub fn root(&self) -> &Element {
        &self.elements[0]
    }

    /// Element ids in document order, duplicates included.
    pub fn ids(&self) -> Vec<&str> {
        self.elements.iter().filter_map(Element::id).collect()
    }

    pub fn find_by_id(&self, id: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.id() == Some(id))
    }

    /// Form controls a user can change: input (except hidden/button-like),
    /// select and textarea.
    pub fn interactive_inputs(&self) -> Vec<&Element> {
        self.elements
            .iter()
            .filter(|e| match e.tag.as_str() {
                "select" | "textarea" => true,
                "input" => !matches!(
                    e.attr_value("type").map(str::to_ascii_lowercase).as_deref(),
                    Some("hidden" | "button" | "submit" | "reset" | "image" | "file")
                ),
                _ => false,
            })
            .collect()
    }

    /// Descendant elements of `index` in document order.
    pub fn descendants(&self, index: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack: Vec<usize> = self.elements[index].children.iter().rev().copied().collect();
        while let Some(i) = stack.pop() {
            out.push(i);
            stack.extend(self.elements[i].children.iter().rev());
        }
        out
    }
}

pub fn parse_fragment(src: &str) -> Result<Fragment, MarkupError> {
    Parser { src, pos: 0 }.run()
}

/// Ids of a fragment, or nothing if it does not parse.
pub fn markup_ids(src: &str) -> Vec<String> {
    parse_fragment(src)
        .map(|f| f.ids().into_iter().map(str::to_string).collect())
        .unwrap_or_default()
}

pub fn escape_attr(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for c in value.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            c => out.push(c),
        }
    }
    out
}

pub fn decode_entities(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        rest = &rest[amp..];
        match decode_one(rest) {
            Some((ch, used)) => {
                out.push(ch);
                rest = &rest[used..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn decode_one(s: &str) -> Option<(char, usize)> {
    let semi = s[..s.len().min(12)].find(';')?;
    let body = &s[1..semi];
    let ch = if let Some(num) = body.strip_prefix('#') {
        let code = match num.strip_prefix(['x', 'X']) {
            Some(hex) => u32::from_str_radix(hex, 16).ok()?,
            None => num.parse().ok()?,
        };
        char::from_u32(code)?
    } else {
        match body {
            "amp" => '&',
            "lt" => '<',
            "gt" => '>',
            "quot" => '"',
            "apos" => '\'',
            "nbsp" => '\u{a0}',
            _ => return None,
        }
    };
    Some((ch, semi + 1))
}

struct Parser<'s> {
    src: &'s str,
    pos: usize,
}

impl<'s> Parser<'s> {
    fn err<T>(&self, at: usize, message: impl Into<String>) -> Result<T, MarkupError> {
        let before = &self.src[..at.min(self.src.len())];
        let line = before.matches('\n').count() + 1;
        let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
        Err(MarkupError {
            message: message.into(),
            line,
            column,
            offset: at,
        })
    }

    fn rest(&self) -> &'s str {
        &self.src[self.pos..]
    }

    fn run(mut self) -> Result<Fragment, MarkupError> {
        let mut elements: Vec<Element> = Vec::new();
        let mut stack: Vec<usize> = Vec::new();
        let mut root_closed = false;

        while self.pos < self.src.len() {
            let rest = self.rest();
            if rest.starts_with("<!--") {
                let end = rest[4..]
                    .find("-->")
                    .map(|i| i + 7)
                    .map_or_else(|| self.err(self.pos, "unterminated comment"), Ok)?;
                self.pos += end;
            } else if rest.starts_with("</") {
                let start = self.pos;
                self.pos += 2;
                let name = self.name();
                if name.is_empty() {
                    return self.err(start, "malformed closing tag");
                }
                self.skip_ws();
                if !self.rest().starts_with('>') {
                    return self.err(self.pos, format!("expected '>' to close </{name}"));
                }
                self.pos += 1;
                match stack.pop() {
                    Some(open) if elements[open].tag == name => {
                        if stack.is_empty() {
                            root_closed = true;
                        }
                    }
                    Some(open) => {
                        return self.err(
                            start,
                            format!("closing tag </{name}> does not match <{}>", elements[open].tag),
                        )
                    }
                    None => return self.err(start, format!("unexpected closing tag </{name}>")),
                }
            } else if rest.starts_with("<!") || rest.starts_with("<?") {
                return self.err(self.pos, "declarations are not allowed in a widget fragment");
            } else if rest.starts_with('<') && rest[1..].starts_with(|c: char| c.is_ascii_alphabetic()) {
                let start = self.pos;
                if root_closed || (stack.is_empty() && !elements.is_empty()) {
                    return self.err(start, "fragment must have a single root element");
                }
                self.pos += 1;
                let tag = self.name();
                let (attrs, self_closing) = self.attributes(&tag)?;
                let index = elements.len();
                let parent = stack.last().copied();
                elements.push(Element {
                    tag: tag.clone(),
                    attrs,
                    parent,
                    children: Vec::new(),
                    text: String::new(),
                    offset: start,
                });
                if let Some(p) = parent {
                    elements[p].children.push(index);
                }
                let is_void = VOID_ELEMENTS.contains(&tag.as_str());
                if self_closing || is_void {
                    if parent.is_none() {
                        root_closed = true;
                    }
                } else if RAW_TEXT_ELEMENTS.contains(&tag.as_str()) {
                    let close = format!("</{tag}");
                    let lower = self.rest().to_ascii_lowercase();
                    let Some(end) = lower.find(&close) else {
                        return self.err(start, format!("unterminated <{tag}>"));
                    };
                    elements[index].text = decode_entities(&self.rest()[..end]);
                    self.pos += end;
                    stack.push(index);
                } else {
                    stack.push(index);
                }
            } else {
                let end = rest.find('<').unwrap_or(rest.len());
                let text = &rest[..end];
                match stack.last() {
                    Some(&open) => elements[open].text.push_str(&decode_entities(text)),
                    None if text.trim().is_empty() => {}
                    None => return self.err(self.pos, "text outside the root element"),
                }
                self.pos += end;
            }
        }
        if let Some(&open) = stack.last() {
            return self.err(elements[open].offset, format!("unclosed <{}>", elements[open].tag));
        }
        if elements.is_empty() {
            return self.err(0, "fragment has no root element");
        }
        Ok(Fragment { elements })
    }

    fn name(&mut self) -> String {
        let rest = self.rest();
        let len = rest
            .find(|c: char| c.is_whitespace() || matches!(c, '>' | '/' | '=' | '"' | '\'' | '<'))
            .unwrap_or(rest.len());
        self.pos += len;
        rest[..len].to_ascii_lowercase()
    }

    fn skip_ws(&mut self) {
        let rest = self.rest();
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn attributes(&mut self, tag: &str) -> Result<(Vec<Attribute>, bool), MarkupError> {
        let mut attrs: Vec<Attribute> = Vec::new();
        loop {
            self.skip_ws();
            let rest = self.rest();
            if rest.is_empty() {
                return self.err(self.pos, format!("unterminated <{tag}> tag"));
            }
            if rest.starts_with("/>") {
                self.pos += 2;
                return Ok((attrs, true));
            }
            if rest.starts_with('>') {
                self.pos += 1;
                return Ok((attrs, false));
            }
            let name_at = self.pos;
            let name = self.name();
            if name.is_empty() {
                return self.err(name_at, format!("unexpected character in <{tag}> tag"));
            }
            self.skip_ws();
            let (value, value_span) = if self.rest().starts_with('=') {
                self.pos += 1;
                self.skip_ws();
                let rest = self.rest();
                match rest.chars().next() {
                    Some(q @ ('"' | '\'')) => {
                        let Some(end) = rest[1..].find(q) else {
                            return self.err(self.pos, format!("unterminated value for attribute {name}"));
                        };
                        let span = self.pos + 1..self.pos + 1 + end;
                        self.pos = span.end + 1;
                        (Some(decode_entities(&self.src[span.clone()])), Some(span))
                    }
                    Some(_) => {
                        let end = rest
                            .find(|c: char| c.is_whitespace() || c == '>' || c == '<' || c == '"' || c == '\'' || c == '`' || c == '=')
                            .unwrap_or(rest.len());
                        let end = if rest[..end].ends_with('/') && rest[end..].starts_with('>') { end - 1 } else { end };
                        if end == 0 {
                            return self.err(self.pos, format!("missing value for attribute {name}"));
                        }
                        let span = self.pos..self.pos + end;
                        self.pos += end;
                        (Some(decode_entities(&self.src[span.clone()])), Some(span))
                    }
                    None => return self.err(self.pos, format!("missing value for attribute {name}")),
                }
            } else {
                (None, None)
            };
            if !attrs.iter().any(|a| a.name == name) {
                attrs.push(Attribute { name, value, value_span });
            }
        }
    }
}
