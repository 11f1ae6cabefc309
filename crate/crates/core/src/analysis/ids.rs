//! Element id deconfliction across markup and callback.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::ops::Range;

use oxc_ast::ast::{
    Argument, CallExpression, ComputedMemberExpression, Expression, ObjectProperty, PropertyKey, StringLiteral,
    TemplateLiteral,
};
use oxc_ast_visit::{walk, Visit};
use oxc_span::GetSpan;
use thiserror::Error;

use super::markup::{escape_attr, parse_fragment, MarkupError};
use super::script::{js_string_literal, strip_parens, with_program, ScriptError};
use super::{Finding, Location, RenameEntry, RenameMap, Rule, SourceKind};

/// DOM methods whose first argument names an element.
pub const LOOKUP_METHODS: [&str; 3] = ["getElementById", "querySelector", "querySelectorAll"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeconflictError {
    #[error(transparent)]
    Markup(#[from] MarkupError),
    #[error(transparent)]
    Script(#[from] ScriptError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Deconflicted {
    pub markup: String,
    pub callback_source: String,
    pub renames: RenameMap,
    pub findings: Vec<Finding>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum RefKind {
    /// `getElementById("x")`.
    ById,
    /// `querySelector("#x .y")`.
    Selector,
    /// Any other string literal.
    Literal,
    /// Lookup with a computed argument.
    Dynamic { method: String },
}

#[derive(Debug, Clone)]
struct IdRef {
    kind: RefKind,
    value: String,
    span: Range<usize>,
    quote: char,
}

/// Renames colliding element ids to `<old>_k` (smallest k >= 2 not in use)
/// and rewrites the callback's references to them.
///
/// An id collides when it is in `existing_ids` or already appeared earlier in
/// the same fragment. Callback references (lookup arguments, `#id` selectors
/// in lookup arguments, and other string literals equal to the id) follow the
/// rename of the id's first occurrence. String literals used as object keys
/// or computed member keys are left alone. References to ids duplicated in
/// the fragment, dynamic lookups, and lookups of ids absent from the output
/// markup are reported as `unresolved_id` warnings.
pub fn deconflict_ids(markup: &str, callback_source: &str, existing_ids: &BTreeSet<String>) -> Result<Deconflicted, DeconflictError> {
    let fragment = parse_fragment(markup)?;
    let refs = collect_refs(callback_source)?;

    let original_ids: Vec<&str> = fragment.ids();
    let mut taken: HashSet<String> = existing_ids.iter().cloned().collect();
    taken.extend(original_ids.iter().map(|s| s.to_string()));

    let mut seen: HashSet<&str> = HashSet::new();
    let mut occurrences: BTreeMap<&str, usize> = BTreeMap::new();
    let mut first_rename: BTreeMap<String, String> = BTreeMap::new();
    let mut renames = Vec::new();
    let mut markup_edits: Vec<(Range<usize>, String)> = Vec::new();
    let mut findings = Vec::new();

    for el in &fragment.elements {
        let Some(attr) = el.attr("id") else { continue };
        let Some(old) = attr.value.as_deref() else { continue };
        *occurrences.entry(old).or_default() += 1;
        let duplicate = !seen.insert(old);
        if !duplicate && !existing_ids.contains(old) {
            continue;
        }
        let new = (2..)
            .map(|k| format!("{old}_{k}"))
            .find(|candidate| !taken.contains(candidate))
            .expect("unbounded search");
        taken.insert(new.clone());
        if !duplicate {
            first_rename.insert(old.to_string(), new.clone());
        }
        let span = attr.value_span.clone().expect("valued attribute has a span");
        markup_edits.push((span, escape_attr(&new)));
        findings.push(Finding::warning(
            Rule::IdConflict,
            if duplicate {
                format!("id {old:?} is duplicated in the markup; renamed to {new:?}")
            } else {
                format!("id {old:?} is already used in the session; renamed to {new:?}")
            },
            Some(Location::at(SourceKind::Markup, markup, el.offset)),
        ));
        renames.push(RenameEntry {
            old_id: old.to_string(),
            new_id: new,
        });
    }

    // Label `for` and input `list` references follow first-occurrence renames.
    for el in &fragment.elements {
        for name in ["for", "list"] {
            if let Some(attr) = el.attr(name) {
                if let (Some(v), Some(span)) = (&attr.value, &attr.value_span) {
                    if let Some(new) = first_rename.get(v) {
                        markup_edits.push((span.clone(), escape_attr(new)));
                    }
                }
            }
        }
    }

    let duplicated: BTreeSet<&str> = occurrences.iter().filter(|(_, n)| **n > 1).map(|(k, _)| *k).collect();
    let mut script_edits: Vec<(Range<usize>, String)> = Vec::new();
    let mut looked_up: Vec<(String, usize)> = Vec::new();

    for r in &refs {
        let loc = Some(Location::at(SourceKind::Callback, callback_source, r.span.start));
        match &r.kind {
            RefKind::Dynamic { method } => findings.push(Finding::warning(
                Rule::UnresolvedId,
                format!("{method} is called with a computed argument; the element cannot be resolved statically"),
                loc,
            )),
            RefKind::ById | RefKind::Literal => {
                if duplicated.contains(r.value.as_str()) {
                    findings.push(Finding::warning(
                        Rule::UnresolvedId,
                        format!("reference to id {:?} is ambiguous: the id is duplicated in the markup", r.value),
                        loc,
                    ));
                }
                let current = match first_rename.get(&r.value) {
                    Some(new) => {
                        script_edits.push((r.span.clone(), js_string_literal(new, r.quote)));
                        new.clone()
                    }
                    None => r.value.clone(),
                };
                if r.kind == RefKind::ById {
                    looked_up.push((current, r.span.start));
                }
            }
            RefKind::Selector => {
                let ids = selector_ids(&r.value);
                for (_, id) in &ids {
                    if duplicated.contains(id.as_str()) {
                        findings.push(Finding::warning(
                            Rule::UnresolvedId,
                            format!("selector reference to id {id:?} is ambiguous: the id is duplicated in the markup"),
                            loc.clone(),
                        ));
                    }
                }
                let rewritten = rewrite_selector(&r.value, &first_rename);
                for (_, id) in selector_ids(&rewritten) {
                    looked_up.push((id, r.span.start));
                }
                if rewritten != r.value {
                    script_edits.push((r.span.clone(), js_string_literal(&rewritten, r.quote)));
                }
            }
        }
    }

    let new_markup = apply_edits(markup, markup_edits);
    let final_ids: HashSet<String> = parse_fragment(&new_markup)?
        .ids()
        .into_iter()
        .map(str::to_string)
        .collect();
    for (id, offset) in looked_up {
        if !final_ids.contains(&id) {
            findings.push(Finding::warning(
                Rule::UnresolvedId,
                format!("callback looks up id {id:?}, which is not in the widget markup"),
                Some(Location::at(SourceKind::Callback, callback_source, offset)),
            ));
        }
    }

    Ok(Deconflicted {
        markup: new_markup,
        callback_source: apply_edits(callback_source, script_edits),
        renames: RenameMap(renames),
        findings,
    })
}

fn apply_edits(src: &str, mut edits: Vec<(Range<usize>, String)>) -> String {
    edits.sort_by_key(|(r, _)| r.start);
    let mut out = String::with_capacity(src.len());
    let mut cursor = 0;
    for (range, text) in edits {
        if range.start < cursor {
            continue;
        }
        out.push_str(&src[cursor..range.start]);
        out.push_str(&text);
        cursor = range.end;
    }
    out.push_str(&src[cursor..]);
    out
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '-' || c == '_' || !c.is_ascii()
}

/// `#id` tokens of a CSS selector: (byte range of the token including `#`,
/// unescaped id).
fn selector_ids(selector: &str) -> Vec<(Range<usize>, String)> {
    let mut out = Vec::new();
    let mut chars = selector.char_indices().peekable();
    let mut in_brackets = false;
    let mut in_quote: Option<char> = None;
    while let Some((i, c)) = chars.next() {
        if let Some(q) = in_quote {
            if c == q {
                in_quote = None;
            }
            continue;
        }
        match c {
            '"' | '\'' if in_brackets => in_quote = Some(c),
            '[' => in_brackets = true,
            ']' => in_brackets = false,
            '\\' => {
                chars.next();
            }
            '#' if !in_brackets => {
                let mut id = String::new();
                let mut end = i + 1;
                while let Some(&(j, d)) = chars.peek() {
                    if d == '\\' {
                        chars.next();
                        if let Some((k, e)) = chars.next() {
                            id.push(e);
                            end = k + e.len_utf8();
                        } else {
                            end = j + 1;
                        }
                    } else if is_ident_char(d) {
                        id.push(d);
                        end = j + d.len_utf8();
                        chars.next();
                    } else {
                        break;
                    }
                }
                if !id.is_empty() {
                    out.push((i..end, id));
                }
            }
            _ => {}
        }
    }
    out
}

fn css_escape_ident(id: &str) -> String {
    let mut out = String::new();
    for (i, c) in id.chars().enumerate() {
        let needs = !is_ident_char(c) || (i == 0 && c.is_ascii_digit());
        if needs {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

fn rewrite_selector(selector: &str, renames: &BTreeMap<String, String>) -> String {
    let edits: Vec<(Range<usize>, String)> = selector_ids(selector)
        .into_iter()
        .filter_map(|(range, id)| renames.get(&id).map(|new| (range, format!("#{}", css_escape_ident(new)))))
        .collect();
    apply_edits(selector, edits)
}

fn collect_refs(src: &str) -> Result<Vec<IdRef>, ScriptError> {
    with_program(src, |program| {
        let mut c = RefCollector {
            src,
            refs: Vec::new(),
            skip: HashSet::new(),
        };
        c.visit_program(program);
        c.refs
    })
}

struct RefCollector<'s> {
    src: &'s str,
    refs: Vec<IdRef>,
    /// Spans of literals already classified or excluded.
    skip: HashSet<(u32, u32)>,
}

impl RefCollector<'_> {
    fn literal_of(&self, e: &Expression<'_>) -> Option<(String, Range<usize>, char)> {
        match strip_parens(e) {
            Expression::StringLiteral(s) => {
                let range = s.span.start as usize..s.span.end as usize;
                let quote = self.src[range.clone()].chars().next().unwrap_or('"');
                Some((s.value.to_string(), range, quote))
            }
            Expression::TemplateLiteral(t) if t.expressions.is_empty() && t.quasis.len() == 1 => {
                let cooked = t.quasis[0].value.cooked.as_ref()?.to_string();
                Some((cooked, t.span.start as usize..t.span.end as usize, '`'))
            }
            _ => None,
        }
    }
}

fn span_key(e: &impl GetSpan) -> (u32, u32) {
    let s = e.span();
    (s.start, s.end)
}

impl<'a> Visit<'a> for RefCollector<'_> {
    fn visit_call_expression(&mut self, it: &CallExpression<'a>) {
        let method = match strip_parens(&it.callee) {
            Expression::StaticMemberExpression(m) => Some(m.property.name.as_str()),
            _ => None,
        };
        if let Some(method) = method.filter(|m| LOOKUP_METHODS.contains(m)) {
            if let Some(arg) = it.arguments.first() {
                let lit = match arg {
                    Argument::SpreadElement(_) => None,
                    other => other.as_expression().and_then(|e| self.literal_of(e)),
                };
                match lit {
                    Some((value, span, quote)) => {
                        self.skip.insert((span.start as u32, span.end as u32));
                        let kind = if method == "getElementById" { RefKind::ById } else { RefKind::Selector };
                        self.refs.push(IdRef { kind, value, span, quote });
                    }
                    None => {
                        let span = arg.span();
                        self.refs.push(IdRef {
                            kind: RefKind::Dynamic { method: method.to_string() },
                            value: String::new(),
                            span: span.start as usize..span.end as usize,
                            quote: '"',
                        });
                    }
                }
            }
        }
        walk::walk_call_expression(self, it);
    }

    fn visit_computed_member_expression(&mut self, it: &ComputedMemberExpression<'a>) {
        if let Some((_, span, _)) = self.literal_of(&it.expression) {
            self.skip.insert((span.start as u32, span.end as u32));
        }
        walk::walk_computed_member_expression(self, it);
    }

    fn visit_object_property(&mut self, it: &ObjectProperty<'a>) {
        if let PropertyKey::StringLiteral(s) = &it.key {
            self.skip.insert(span_key(&**s));
        }
        walk::walk_object_property(self, it);
    }

    fn visit_string_literal(&mut self, it: &StringLiteral<'a>) {
        if self.skip.contains(&span_key(it)) {
            return;
        }
        let range = it.span.start as usize..it.span.end as usize;
        let quote = self.src[range.clone()].chars().next().unwrap_or('"');
        self.refs.push(IdRef {
            kind: RefKind::Literal,
            value: it.value.to_string(),
            span: range,
            quote,
        });
    }

    fn visit_template_literal(&mut self, it: &TemplateLiteral<'a>) {
        if it.expressions.is_empty() && it.quasis.len() == 1 && !self.skip.contains(&span_key(it)) {
            if let Some(cooked) = &it.quasis[0].value.cooked {
                self.refs.push(IdRef {
                    kind: RefKind::Literal,
                    value: cooked.to_string(),
                    span: it.span.start as usize..it.span.end as usize,
                    quote: '`',
                });
            }
        }
        walk::walk_template_literal(self, it);
    }
}
