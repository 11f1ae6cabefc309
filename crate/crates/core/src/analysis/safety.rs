//! Syntactic null-safety check for chart property accesses.
//!
//! Every member chain rooted at the callback's chart parameter (directly or
//! through a local alias) is resolved to a chart path. Accessing a property
//! of a path requires every proper prefix of it to be available, meaning
//! the prefix exists in the chart passed in, or an earlier assignment
//! created it (object literals count for their nested keys), or the access
//! sits under a guard whose condition references it: an `if`/ternary test,
//! the left side of `&&`, an `in` or `hasOwnProperty` test, or an earlier
//! `if (..) return` in the same block. Optional chains are skipped.

use std::collections::{BTreeSet, HashMap};

use oxc_ast::ast::{
    Argument, AssignmentTarget, BinaryExpression, BinaryOperator, BindingPattern, BlockStatement, CallExpression,
    ChainExpression, ConditionalExpression, Expression, FunctionBody, IfStatement, LogicalExpression,
    LogicalOperator, MemberExpression, ObjectExpression, ObjectPropertyKind, PropertyKey, SimpleAssignmentTarget,
    Statement, VariableDeclarator, AssignmentExpression,
};
use oxc_ast_visit::{walk, Visit};
use oxc_span::GetSpan;
use serde_json::Value;

use super::script::{find_callbacks, strip_parens, with_program, CallbackFn};
use super::{AnalysisReport, Finding, Location, Rule, SourceKind};
use crate::chart::ChartSpec;
use crate::pointer::JsonPointer;

type Path = Vec<String>;

pub fn check_property_safety(callback_source: &str, chart: &ChartSpec) -> AnalysisReport {
    let doc = chart.to_value();
    let result = with_program(callback_source, |program| {
        let callbacks = find_callbacks(program);
        let [cb] = callbacks.as_slice() else { return Vec::new() };
        let Some(param) = cb.param_name(1) else { return Vec::new() };
        let mut checker = Checker {
            src: callback_source,
            chart: &doc,
            scope: Scope {
                chart_param: param.to_string(),
                aliases: HashMap::new(),
            },
            created: Vec::new(),
            guards: Vec::new(),
            optional_depth: 0,
            reported: BTreeSet::new(),
            findings: Vec::new(),
        };
        match cb {
            CallbackFn::Function(f) => {
                if let Some(body) = &f.body {
                    checker.visit_function_body(body);
                }
            }
            CallbackFn::Arrow(a) => checker.visit_arrow_function_expression(a),
        }
        checker.findings
    });
    // Unparseable sources are reported by the signature and parse passes.
    AnalysisReport::from_findings(result.unwrap_or_default())
}

#[derive(Debug, Clone)]
struct Alias {
    path: Path,
    /// Prefixes of `path` up to this length are known to be non-null.
    safe_len: usize,
}

struct Scope {
    chart_param: String,
    aliases: HashMap<String, Alias>,
}

#[derive(Debug, Clone)]
struct Resolved {
    path: Path,
    safe_len: usize,
    optional: bool,
}

impl Scope {
    fn resolve(&self, e: &Expression<'_>) -> Option<Resolved> {
        match strip_parens(e) {
            Expression::Identifier(id) => {
                if let Some(a) = self.aliases.get(id.name.as_str()) {
                    Some(Resolved {
                        path: a.path.clone(),
                        safe_len: a.safe_len,
                        optional: false,
                    })
                } else if id.name == self.chart_param.as_str() {
                    Some(Resolved {
                        path: Vec::new(),
                        safe_len: 0,
                        optional: false,
                    })
                } else {
                    None
                }
            }
            other => self.resolve_member(other.as_member_expression()?),
        }
    }

    fn resolve_member(&self, m: &MemberExpression<'_>) -> Option<Resolved> {
        let (object, key, optional) = match m {
            MemberExpression::StaticMemberExpression(s) => (&s.object, s.property.name.to_string(), s.optional),
            MemberExpression::ComputedMemberExpression(c) => (&c.object, literal_key(&c.expression)?, c.optional),
            MemberExpression::PrivateFieldExpression(_) => return None,
        };
        let mut r = self.resolve(object)?;
        r.path.push(key);
        r.optional |= optional;
        Some(r)
    }

    /// Alias source: a chain, a deep or shallow copy of one, or a chain with
    /// a `||`/`??` fallback.
    fn resolve_alias(&self, e: &Expression<'_>) -> Option<Alias> {
        match strip_parens(e) {
            Expression::LogicalExpression(l) if matches!(l.operator, LogicalOperator::Or | LogicalOperator::Coalesce) => {
                let inner = self.resolve_alias(&l.left)?;
                Some(Alias {
                    safe_len: inner.path.len(),
                    path: inner.path,
                })
            }
            Expression::CallExpression(call) => {
                let arg = copied_argument(call)?;
                self.resolve_alias(arg)
            }
            Expression::ObjectExpression(obj) => {
                let [ObjectPropertyKind::SpreadProperty(spread)] = obj.properties.as_slice() else { return None };
                self.resolve_alias(&spread.argument)
            }
            other => self.resolve(other).filter(|r| !r.optional).map(|r| Alias {
                path: r.path,
                safe_len: r.safe_len,
            }),
        }
    }
}

/// `JSON.parse(JSON.stringify(x))`, `structuredClone(x)` and
/// `Object.assign({}, x)` all yield a copy of `x`.
fn copied_argument<'p, 'a>(call: &'p CallExpression<'a>) -> Option<&'p Expression<'a>> {
    let callee = callee_name(&call.callee)?;
    let first = call.arguments.first().and_then(Argument::as_expression);
    match callee.as_str() {
        "JSON.parse" => match strip_parens(first?) {
            Expression::CallExpression(inner) if callee_name(&inner.callee).as_deref() == Some("JSON.stringify") => {
                inner.arguments.first().and_then(Argument::as_expression)
            }
            _ => None,
        },
        "structuredClone" => first,
        "Object.assign" if call.arguments.len() == 2 => match strip_parens(first?) {
            Expression::ObjectExpression(o) if o.properties.is_empty() => call.arguments[1].as_expression(),
            _ => None,
        },
        _ => None,
    }
}

fn callee_name(e: &Expression<'_>) -> Option<String> {
    match strip_parens(e) {
        Expression::Identifier(id) => Some(id.name.to_string()),
        Expression::StaticMemberExpression(m) => match strip_parens(&m.object) {
            Expression::Identifier(o) => Some(format!("{}.{}", o.name, m.property.name)),
            _ => None,
        },
        _ => None,
    }
}

fn literal_key(e: &Expression<'_>) -> Option<String> {
    match strip_parens(e) {
        Expression::StringLiteral(s) => Some(s.value.to_string()),
        Expression::NumericLiteral(n) if n.value.fract() == 0.0 && n.value >= 0.0 => Some((n.value as u64).to_string()),
        Expression::TemplateLiteral(t) if t.expressions.is_empty() => t.quasis[0].value.cooked.map(|c| c.to_string()),
        _ => None,
    }
}

fn property_key_name(k: &PropertyKey<'_>) -> Option<String> {
    match k {
        PropertyKey::StaticIdentifier(id) => Some(id.name.to_string()),
        PropertyKey::StringLiteral(s) => Some(s.value.to_string()),
        PropertyKey::NumericLiteral(n) => Some(n.value.to_string()),
        _ => None,
    }
}

fn exists_in(doc: &Value, path: &[String]) -> bool {
    let mut cur = doc;
    for seg in path {
        cur = match cur {
            Value::Object(m) => match m.get(seg) {
                Some(v) => v,
                None => return false,
            },
            Value::Array(items) => match seg.parse::<usize>().ok().and_then(|i| items.get(i)) {
                Some(v) => v,
                None => return false,
            },
            _ => return false,
        };
    }
    !cur.is_null()
}

fn exits(stmt: &Statement<'_>) -> bool {
    match stmt {
        Statement::ReturnStatement(_) | Statement::ThrowStatement(_) => true,
        Statement::BlockStatement(b) => b.body.last().is_some_and(exits),
        _ => false,
    }
}

struct Checker<'s> {
    src: &'s str,
    chart: &'s Value,
    scope: Scope,
    /// Paths created by assignments, with the offset after which they exist.
    created: Vec<(Path, u32)>,
    guards: Vec<Path>,
    optional_depth: usize,
    reported: BTreeSet<String>,
    findings: Vec<Finding>,
}

impl Checker<'_> {
    fn available(&self, q: &[String], at: u32) -> bool {
        exists_in(self.chart, q)
            || self.created.iter().any(|(p, end)| *end <= at && p.starts_with(q))
            || self.guards.iter().any(|g| g.starts_with(q))
    }

    fn check_chain(&mut self, m: &MemberExpression<'_>) {
        if self.optional_depth > 0 {
            return;
        }
        let Some(r) = self.scope.resolve_member(m) else { return };
        if r.optional {
            return;
        }
        let at = m.span().start;
        let parent_len = r.path.len() - 1;
        for k in (r.safe_len + 1)..=parent_len {
            let q = &r.path[..k];
            if self.available(q, at) {
                continue;
            }
            let pointer = JsonPointer::from_segments(q.iter().cloned()).to_string();
            if self.reported.insert(pointer.clone()) {
                let text = &self.src[m.span().start as usize..m.span().end as usize];
                let mut loc = Location::at(SourceKind::Callback, self.src, at as usize);
                loc.pointer = Some(pointer.clone());
                self.findings.push(Finding::error(
                    Rule::NullSafety,
                    format!("`{text}` reads a property of {pointer}, which is not in the chart and is not created or checked first"),
                    Some(loc),
                ));
            }
            break;
        }
    }

    /// Paths referenced by a condition.
    fn guard_paths(&self, test: &Expression<'_>) -> Vec<Path> {
        let mut g = GuardCollector {
            scope: &self.scope,
            out: Vec::new(),
        };
        g.visit_expression(test);
        g.out
    }

    fn record_created(&mut self, path: Path, rhs: &Expression<'_>, end: u32) {
        if let Expression::ObjectExpression(obj) = strip_parens(rhs) {
            collect_literal_paths(obj, &path, end, &mut self.created);
        }
        self.created.push((path, end));
    }

    fn visit_statements<'a>(&mut self, stmts: &[Statement<'a>]) {
        let mark = self.guards.len();
        for stmt in stmts {
            self.visit_statement(stmt);
            if let Statement::IfStatement(i) = stmt {
                if i.alternate.is_none() && exits(&i.consequent) {
                    let paths = self.guard_paths(&i.test);
                    self.guards.extend(paths);
                }
            }
        }
        self.guards.truncate(mark);
    }
}

fn collect_literal_paths(obj: &ObjectExpression<'_>, base: &Path, end: u32, out: &mut Vec<(Path, u32)>) {
    for prop in &obj.properties {
        let ObjectPropertyKind::ObjectProperty(p) = prop else { continue };
        let Some(key) = property_key_name(&p.key) else { continue };
        let mut path = base.clone();
        path.push(key);
        if let Expression::ObjectExpression(inner) = strip_parens(&p.value) {
            collect_literal_paths(inner, &path, end, out);
        }
        out.push((path, end));
    }
}

impl<'a> Visit<'a> for Checker<'_> {
    fn visit_function_body(&mut self, it: &FunctionBody<'a>) {
        self.visit_statements(&it.statements);
    }

    fn visit_block_statement(&mut self, it: &BlockStatement<'a>) {
        self.visit_statements(&it.body);
    }

    fn visit_member_expression(&mut self, it: &MemberExpression<'a>) {
        self.check_chain(it);
        // Visit computed keys and the chain's base without re-checking the
        // inner member nodes as chains of their own.
        let mut cur = it;
        loop {
            let object = match cur {
                MemberExpression::ComputedMemberExpression(c) => {
                    self.visit_expression(&c.expression);
                    &c.object
                }
                MemberExpression::StaticMemberExpression(s) => &s.object,
                MemberExpression::PrivateFieldExpression(p) => &p.object,
            };
            match strip_parens(object).as_member_expression() {
                Some(inner) => cur = inner,
                None => {
                    self.visit_expression(object);
                    break;
                }
            }
        }
    }

    fn visit_chain_expression(&mut self, it: &ChainExpression<'a>) {
        self.optional_depth += 1;
        walk::walk_chain_expression(self, it);
        self.optional_depth -= 1;
    }

    fn visit_if_statement(&mut self, it: &IfStatement<'a>) {
        self.visit_expression(&it.test);
        let mark = self.guards.len();
        let paths = self.guard_paths(&it.test);
        self.guards.extend(paths);
        self.visit_statement(&it.consequent);
        if let Some(alt) = &it.alternate {
            self.visit_statement(alt);
        }
        self.guards.truncate(mark);
    }

    fn visit_conditional_expression(&mut self, it: &ConditionalExpression<'a>) {
        self.visit_expression(&it.test);
        let mark = self.guards.len();
        let paths = self.guard_paths(&it.test);
        self.guards.extend(paths);
        self.visit_expression(&it.consequent);
        self.visit_expression(&it.alternate);
        self.guards.truncate(mark);
    }

    fn visit_logical_expression(&mut self, it: &LogicalExpression<'a>) {
        self.visit_expression(&it.left);
        let mark = self.guards.len();
        if it.operator == LogicalOperator::And {
            let paths = self.guard_paths(&it.left);
            self.guards.extend(paths);
        }
        self.visit_expression(&it.right);
        self.guards.truncate(mark);
    }

    fn visit_assignment_expression(&mut self, it: &AssignmentExpression<'a>) {
        walk::walk_assignment_expression(self, it);
        match &it.left {
            AssignmentTarget::AssignmentTargetIdentifier(id) => {
                let name = id.name.to_string();
                match self.scope.resolve_alias(&it.right) {
                    Some(alias) if name != self.scope.chart_param => {
                        self.scope.aliases.insert(name, alias);
                    }
                    _ => {
                        self.scope.aliases.remove(&name);
                    }
                }
            }
            target => {
                if let Some(m) = target.as_simple_assignment_target().and_then(SimpleAssignmentTarget::as_member_expression) {
                    if let Some(r) = self.scope.resolve_member(m) {
                        self.record_created(r.path, &it.right, it.span.end);
                    }
                }
            }
        }
    }

    fn visit_variable_declarator(&mut self, it: &VariableDeclarator<'a>) {
        walk::walk_variable_declarator(self, it);
        let BindingPattern::BindingIdentifier(id) = &it.id else { return };
        let name = id.name.to_string();
        match it.init.as_ref().and_then(|init| self.scope.resolve_alias(init)) {
            Some(alias) => {
                self.scope.aliases.insert(name, alias);
            }
            None => {
                self.scope.aliases.remove(&name);
            }
        }
    }
}

struct GuardCollector<'c> {
    scope: &'c Scope,
    out: Vec<Path>,
}

impl<'a> Visit<'a> for GuardCollector<'_> {
    fn visit_member_expression(&mut self, it: &MemberExpression<'a>) {
        if let Some(r) = self.scope.resolve_member(it) {
            self.out.push(r.path);
        }
        walk::walk_member_expression(self, it);
    }

    fn visit_binary_expression(&mut self, it: &BinaryExpression<'a>) {
        if it.operator == BinaryOperator::In {
            if let (Some(key), Some(r)) = (literal_key(&it.left), self.scope.resolve(&it.right)) {
                let mut path = r.path;
                path.push(key);
                self.out.push(path);
            }
        }
        walk::walk_binary_expression(self, it);
    }

    fn visit_call_expression(&mut self, it: &CallExpression<'a>) {
        if let Expression::StaticMemberExpression(m) = strip_parens(&it.callee) {
            if m.property.name == "hasOwnProperty" {
                let key = it.arguments.first().and_then(Argument::as_expression).and_then(literal_key);
                if let (Some(key), Some(r)) = (key, self.scope.resolve(&m.object)) {
                    let mut path = r.path;
                    path.push(key);
                    self.out.push(path);
                }
            }
        }
        walk::walk_call_expression(self, it);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn chart() -> ChartSpec {
        ChartSpec::from_value(json!({
            "mark": "line",
            "encoding": {"x": {"field": "date", "type": "temporal"}, "color": {"field": "symbol", "type": "nominal", "legend": {"orient": "right"}}}
        }))
        .unwrap()
    }

    fn check(body: &str) -> AnalysisReport {
        check_property_safety(&format!("function callback(event, chart) {{\n{body}\nreturn [[], chart];\n}}"), &chart())
    }

    fn pointers(r: &AnalysisReport) -> Vec<String> {
        r.findings.iter().filter_map(|f| f.location.as_ref()?.pointer.clone()).collect()
    }

    #[test]
    fn unguarded_write_names_missing_parent() {
        let r = check("chart.encoding.x.axis.labelAngle = 45;");
        assert!(!r.ok);
        assert_eq!(pointers(&r), ["/encoding/x/axis"]);
    }

    #[test]
    fn creation_and_guards_satisfy() {
        for body in [
            "if (!chart.encoding.x.axis) { chart.encoding.x.axis = {}; }\nchart.encoding.x.axis.labelAngle = 45;",
            "chart.encoding.x.axis = chart.encoding.x.axis || {};\nchart.encoding.x.axis.labelAngle = 45;",
            "chart.encoding.x.axis ??= {};\nchart.encoding.x.axis.labelAngle = 45;",
            "if (chart.encoding.x.axis) chart.encoding.x.axis.labelAngle = 45;",
            "chart.encoding.x.axis && (chart.encoding.x.axis.labelAngle = 45);",
            "if ('axis' in chart.encoding.x) { chart.encoding.x.axis.labelAngle = 45; }",
            "if (!chart.encoding.x.axis) return [[], chart];\nchart.encoding.x.axis.labelAngle = 45;",
            "chart.encoding.x = {field: 'date', type: 'temporal', axis: {labelAngle: 0}};\nchart.encoding.x.axis.labelAngle = 45;",
            "const axis = chart.encoding.x.axis || {};\naxis.labelAngle = 45;",
            "chart.encoding.x.axis?.labelAngle;",
            "chart.encoding.color.legend.orient = 'left';",
        ] {
            let r = check(body);
            assert!(r.ok, "{body}\n{r:?}");
        }
    }

    #[test]
    fn aliases_and_copies_are_tracked() {
        let r = check("const spec = JSON.parse(JSON.stringify(chart));\nspec.encoding.y.axis = {};");
        assert_eq!(pointers(&r), ["/encoding/y"]);
        let r = check("const enc = chart.encoding;\nenc.size.value = 3;");
        assert_eq!(pointers(&r), ["/encoding/size"]);
        let r = check("const s = structuredClone(chart);\ns.config.axis.labelFontSize = 3;");
        assert_eq!(pointers(&r), ["/config"]);
    }

    #[test]
    fn creation_must_precede_use() {
        let r = check("chart.encoding.x.axis.labelAngle = 45;\nchart.encoding.x.axis = {};");
        assert!(!r.ok);
    }

    #[test]
    fn unrelated_objects_are_ignored() {
        let r = check("const o = {}; o.a.b.c = 1; event.target.value.trim();");
        assert!(r.ok);
    }
}
