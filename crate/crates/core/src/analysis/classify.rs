//! Decides whether a widget emits data transforms.
//!
//! The first element of every `[transforms, chart]` return site is reduced
//! to a shape. Identifiers are followed through their declarations,
//! reassignments and in-place mutations (`push`, `unshift`, `splice`,
//! index writes) anywhere in the script. A widget is a transform widget
//! when any site may yield a non-empty list. Shapes that cannot be decided
//! count as non-empty and produce a `classification` warning.

use std::collections::{BTreeSet, HashMap};

use oxc_ast::ast::{
    Argument, ArrayExpressionElement, AssignmentExpression, AssignmentOperator, AssignmentTarget, BindingPattern,
    CallExpression, Expression, VariableDeclarator,
};
use oxc_ast_visit::{walk, Visit};
use oxc_span::GetSpan;
use serde::{Deserialize, Serialize};

use super::script::{find_callbacks, strip_parens, with_program, ScriptError};
use super::signature::callback_return_sites;
use super::{Finding, Location, Rule, SourceKind};

const MAX_DEPTH: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub is_transform: bool,
    pub findings: Vec<Finding>,
}

#[derive(Debug, Clone)]
enum Shape {
    Empty,
    NonEmpty,
    Ident(String),
    Any(Vec<Shape>),
    Opaque(u32),
}

fn shape_of(e: &Expression<'_>) -> Shape {
    match strip_parens(e) {
        Expression::ArrayExpression(arr) => {
            let mut parts = Vec::new();
            for el in &arr.elements {
                match el {
                    ArrayExpressionElement::SpreadElement(s) => parts.push(shape_of(&s.argument)),
                    _ => return Shape::NonEmpty,
                }
            }
            if parts.is_empty() {
                Shape::Empty
            } else {
                Shape::Any(parts)
            }
        }
        Expression::NullLiteral(_) => Shape::Empty,
        Expression::UnaryExpression(u) if u.operator.as_str() == "void" => Shape::Empty,
        Expression::Identifier(id) if id.name == "undefined" => Shape::Empty,
        Expression::Identifier(id) => Shape::Ident(id.name.to_string()),
        Expression::ConditionalExpression(c) => Shape::Any(vec![shape_of(&c.consequent), shape_of(&c.alternate)]),
        Expression::LogicalExpression(l) => Shape::Any(vec![shape_of(&l.left), shape_of(&l.right)]),
        Expression::SequenceExpression(s) => s.expressions.last().map_or(Shape::Empty, shape_of),
        Expression::CallExpression(call) => call_shape(call),
        other => Shape::Opaque(other.span().start),
    }
}

/// `x.concat(..)`, `x.filter(..)`, `x.map(..)` and `x.slice(..)` are empty
/// exactly when their inputs are.
fn call_shape(call: &CallExpression<'_>) -> Shape {
    if let Expression::StaticMemberExpression(m) = strip_parens(&call.callee) {
        match m.property.name.as_str() {
            "concat" => {
                let mut parts = vec![shape_of(&m.object)];
                parts.extend(call.arguments.iter().map(|a| match a.as_expression() {
                    Some(e) => shape_of(e),
                    None => Shape::Opaque(a.span().start),
                }));
                return Shape::Any(parts);
            }
            "filter" | "map" | "slice" | "flat" => return shape_of(&m.object),
            _ => {}
        }
    }
    Shape::Opaque(call.span.start)
}

/// Every value that may flow into each identifier.
#[derive(Default)]
struct Bindings {
    values: HashMap<String, Vec<Shape>>,
}

impl Bindings {
    fn add(&mut self, name: &str, shape: Shape) {
        self.values.entry(name.to_string()).or_default().push(shape);
    }
}

impl<'a> Visit<'a> for Bindings {
    fn visit_variable_declarator(&mut self, it: &VariableDeclarator<'a>) {
        if let (BindingPattern::BindingIdentifier(id), Some(init)) = (&it.id, &it.init) {
            self.add(id.name.as_str(), shape_of(init));
        }
        walk::walk_variable_declarator(self, it);
    }

    fn visit_assignment_expression(&mut self, it: &AssignmentExpression<'a>) {
        match &it.left {
            AssignmentTarget::AssignmentTargetIdentifier(id) => {
                let shape = match it.operator {
                    AssignmentOperator::Assign
                    | AssignmentOperator::LogicalOr
                    | AssignmentOperator::LogicalNullish
                    | AssignmentOperator::LogicalAnd => shape_of(&it.right),
                    _ => Shape::Opaque(it.span.start),
                };
                self.add(id.name.as_str(), shape);
            }
            AssignmentTarget::ComputedMemberExpression(m) => {
                if let Expression::Identifier(id) = strip_parens(&m.object) {
                    self.add(id.name.as_str(), Shape::NonEmpty);
                }
            }
            _ => {}
        }
        walk::walk_assignment_expression(self, it);
    }

    fn visit_call_expression(&mut self, it: &CallExpression<'a>) {
        if let Expression::StaticMemberExpression(m) = strip_parens(&it.callee) {
            if let Expression::Identifier(id) = strip_parens(&m.object) {
                let adds = match m.property.name.as_str() {
                    "push" | "unshift" => !it.arguments.is_empty(),
                    "splice" => it.arguments.len() > 2,
                    _ => false,
                };
                if adds {
                    let shape = if it.arguments.iter().any(|a| matches!(a, Argument::SpreadElement(_))) {
                        Shape::Any(
                            it.arguments
                                .iter()
                                .map(|a| match a {
                                    Argument::SpreadElement(s) => shape_of(&s.argument),
                                    _ => Shape::NonEmpty,
                                })
                                .collect(),
                        )
                    } else {
                        Shape::NonEmpty
                    };
                    self.add(id.name.as_str(), shape);
                }
            }
        }
        walk::walk_call_expression(self, it);
    }
}

struct Resolver<'b> {
    bindings: &'b Bindings,
    src: &'b str,
    opaque: BTreeSet<u32>,
}

impl Resolver<'_> {
    fn non_empty(&mut self, shape: &Shape, visiting: &mut Vec<String>) -> bool {
        match shape {
            Shape::Empty => false,
            Shape::NonEmpty => true,
            Shape::Opaque(at) => {
                self.opaque.insert(*at);
                true
            }
            Shape::Any(parts) => {
                let mut any = false;
                for p in parts {
                    any |= self.non_empty(p, visiting);
                }
                any
            }
            Shape::Ident(name) => {
                if visiting.contains(name) {
                    return false;
                }
                if visiting.len() >= MAX_DEPTH {
                    return true;
                }
                let Some(values) = self.bindings.values.get(name) else {
                    // Parameters and globals.
                    return true;
                };
                visiting.push(name.clone());
                let mut any = false;
                for v in values {
                    any |= self.non_empty(v, visiting);
                }
                visiting.pop();
                any
            }
        }
    }

    fn warnings(&self) -> Vec<Finding> {
        self.opaque
            .iter()
            .map(|&at| {
                Finding::warning(
                    Rule::Classification,
                    "cannot tell statically whether this transform list is empty; treating the widget as a transform widget",
                    Some(Location::at(SourceKind::Callback, self.src, at as usize)),
                )
            })
            .collect()
    }
}

pub fn classify_transform_widget(callback_source: &str) -> Result<Classification, ScriptError> {
    with_program(callback_source, |program| {
        let callbacks = find_callbacks(program);
        let [cb] = callbacks.as_slice() else {
            return Classification {
                is_transform: false,
                findings: Vec::new(),
            };
        };
        let mut bindings = Bindings::default();
        bindings.visit_program(program);
        let mut resolver = Resolver {
            bindings: &bindings,
            src: callback_source,
            opaque: BTreeSet::new(),
        };
        let mut is_transform = false;
        for (_, arg) in callback_return_sites(*cb) {
            let Some(Expression::ArrayExpression(arr)) = arg.map(strip_parens) else { continue };
            let Some(first) = arr.elements.first().and_then(ArrayExpressionElement::as_expression) else { continue };
            is_transform |= resolver.non_empty(&shape_of(first), &mut Vec::new());
        }
        Classification {
            is_transform,
            findings: resolver.warnings(),
        }
    })
}
