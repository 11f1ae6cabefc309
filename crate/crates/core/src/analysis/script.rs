//! Shared helpers over the oxc JavaScript AST.

use oxc_allocator::Allocator;
use oxc_ast::ast::{
    ArrowFunctionExpression, BindingPattern, Expression, FormalParameters, Function, Program, Statement,
};
use oxc_parser::Parser;
use oxc_span::{GetSpan, SourceType, Span};
use serde::Serialize;
use thiserror::Error;

/// Name the callback contract requires.
pub const CALLBACK_NAME: &str = "callback";

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("script parse error at {line}:{column}: {message}")]
pub struct ScriptError {
    pub message: String,
    pub line: usize,
    pub column: usize,
}

/// 1-based line and column (in chars) of a byte offset.
pub fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(src.len());
    let before = &src[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Parses `src` as a classic script and hands the program to `f`.
pub fn with_program<R>(src: &str, f: impl for<'a> FnOnce(&Program<'a>) -> R) -> Result<R, ScriptError> {
    let alloc = Allocator::default();
    let ret = Parser::new(&alloc, src, SourceType::cjs()).parse();
    if let Some(d) = ret.diagnostics.first() {
        let offset = d
            .labels
            .first()
            .map(|l| l.offset())
            .unwrap_or(0);
        let (line, column) = line_col(src, offset as usize);
        return Err(ScriptError {
            message: d.message.to_string(),
            line,
            column,
        });
    }
    if ret.fatal_error {
        return Err(ScriptError {
            message: "unrecoverable syntax error".into(),
            line: 1,
            column: 1,
        });
    }
    Ok(f(&ret.program))
}

/// A top-level definition of `callback`.
#[derive(Clone, Copy)]
pub enum CallbackFn<'p, 'a> {
    Function(&'p Function<'a>),
    Arrow(&'p ArrowFunctionExpression<'a>),
}

impl<'p, 'a> CallbackFn<'p, 'a> {
    pub fn params(&self) -> &'p FormalParameters<'a> {
        match self {
            CallbackFn::Function(f) => &f.params,
            CallbackFn::Arrow(a) => &a.params,
        }
    }

    pub fn span(&self) -> Span {
        match self {
            CallbackFn::Function(f) => f.span,
            CallbackFn::Arrow(a) => a.span,
        }
    }

    pub fn is_async(&self) -> bool {
        match self {
            CallbackFn::Function(f) => f.r#async,
            CallbackFn::Arrow(a) => a.r#async,
        }
    }

    pub fn is_generator(&self) -> bool {
        matches!(self, CallbackFn::Function(f) if f.generator)
    }

    /// Name of the parameter at `index` when it is a plain identifier.
    pub fn param_name(&self, index: usize) -> Option<&'p str> {
        match &self.params().items.get(index)?.pattern {
            BindingPattern::BindingIdentifier(id) => Some(id.name.as_str()),
            _ => None,
        }
    }
}

/// Every top-level definition named `callback`: function declarations and
/// `const|let|var callback = function/arrow`.
pub fn find_callbacks<'p, 'a>(program: &'p Program<'a>) -> Vec<CallbackFn<'p, 'a>> {
    let mut out = Vec::new();
    for stmt in &program.body {
        match stmt {
            Statement::FunctionDeclaration(f) => {
                if f.id.as_ref().is_some_and(|id| id.name == CALLBACK_NAME) {
                    out.push(CallbackFn::Function(f));
                }
            }
            Statement::VariableDeclaration(decl) => {
                for d in &decl.declarations {
                    let BindingPattern::BindingIdentifier(id) = &d.id else { continue };
                    if id.name != CALLBACK_NAME {
                        continue;
                    }
                    match d.init.as_ref().map(strip_parens) {
                        Some(Expression::FunctionExpression(f)) => out.push(CallbackFn::Function(f)),
                        Some(Expression::ArrowFunctionExpression(a)) => out.push(CallbackFn::Arrow(a)),
                        _ => {}
                    }
                }
            }
            _ => {}
        }
    }
    out
}

/// Other top-level bindings named `callback` that are not functions.
pub fn non_function_callback_bindings(program: &Program<'_>) -> usize {
    let mut n = 0;
    for stmt in &program.body {
        if let Statement::VariableDeclaration(decl) = stmt {
            for d in &decl.declarations {
                if let BindingPattern::BindingIdentifier(id) = &d.id {
                    if id.name == CALLBACK_NAME
                        && !matches!(
                            d.init.as_ref().map(strip_parens),
                            Some(Expression::FunctionExpression(_) | Expression::ArrowFunctionExpression(_))
                        )
                    {
                        n += 1;
                    }
                }
            }
        }
    }
    n
}

pub fn strip_parens<'p, 'a>(mut e: &'p Expression<'a>) -> &'p Expression<'a> {
    while let Expression::ParenthesizedExpression(p) = e {
        e = &p.expression;
    }
    e
}

/// Source text of a node.
pub fn slice<'s>(src: &'s str, node: &impl GetSpan) -> &'s str {
    let span = node.span();
    &src[span.start as usize..span.end as usize]
}

/// JavaScript string literal for `value` using `quote` (`"`, `'` or `` ` ``).
pub fn js_string_literal(value: &str, quote: char) -> String {
    let mut out = String::with_capacity(value.len() + 2);
    out.push(quote);
    let mut chars = value.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\u{2028}' => out.push_str("\\u2028"),
            '\u{2029}' => out.push_str("\\u2029"),
            c if c == quote => {
                out.push('\\');
                out.push(c);
            }
            '$' if quote == '`' && chars.peek() == Some(&'{') => out.push_str("\\$"),
            c => out.push(c),
        }
    }
    out.push(quote);
    out
}
