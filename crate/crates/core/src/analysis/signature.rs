use oxc_ast::ast::{ArrayExpressionElement, ArrowFunctionBody, Expression, FunctionBody, Statement};

use super::script::{find_callbacks, non_function_callback_bindings, strip_parens, with_program, CallbackFn, CALLBACK_NAME};
use super::{AnalysisReport, Finding, Location, Rule, SourceKind};

/// Checks the callback contract: exactly one top-level `callback` taking two
/// plain parameters, neither async nor a generator, where every return site
/// is a two-element array literal `[transforms, chart]`.
pub fn check_callback_signature(callback_source: &str) -> AnalysisReport {
    let src = callback_source;
    let result = with_program(src, |program| {
        let mut findings = Vec::new();
        let err = |msg: String, offset: u32| Finding::error(Rule::Signature, msg, Some(Location::at(SourceKind::Callback, src, offset as usize)));
        let callbacks = find_callbacks(program);
        if non_function_callback_bindings(program) > 0 {
            findings.push(err(format!("`{CALLBACK_NAME}` is bound to something that is not a function"), 0));
        }
        match callbacks.as_slice() {
            [] => findings.push(err(format!("no top-level function named `{CALLBACK_NAME}`"), 0)),
            [cb] => check_one(*cb, &err, &mut findings),
            [_, second, ..] => findings.push(err(
                format!("`{CALLBACK_NAME}` is defined {} times", callbacks.len()),
                second.span().start,
            )),
        }
        findings
    });
    match result {
        Ok(findings) => AnalysisReport::from_findings(findings),
        Err(e) => AnalysisReport::from_findings(vec![Finding::error(
            Rule::Parse,
            format!("callback does not parse: {}", e.message),
            Some(Location::line_col(SourceKind::Callback, e.line, e.column)),
        )]),
    }
}

fn check_one(cb: CallbackFn<'_, '_>, err: &dyn Fn(String, u32) -> Finding, findings: &mut Vec<Finding>) {
    let start = cb.span().start;
    let params = cb.params();
    if params.rest.is_some() {
        findings.push(err("callback must not use a rest parameter".into(), start));
    }
    if params.items.len() != 2 {
        findings.push(err(
            format!("callback must take exactly two parameters (event, chart), found {}", params.items.len()),
            start,
        ));
    } else if cb.param_name(0).is_none() || cb.param_name(1).is_none() {
        findings.push(err("callback parameters must be plain identifiers".into(), start));
    }
    if cb.is_async() {
        findings.push(err("callback must not be async".into(), start));
    }
    if cb.is_generator() {
        findings.push(err("callback must not be a generator".into(), start));
    }

    let sites = callback_return_sites(cb);
    if sites.is_empty() {
        findings.push(err("callback never returns [transforms, chart]".into(), start));
    }
    for (offset, arg) in sites {
        if let Some(msg) = return_shape_problem(arg) {
            findings.push(err(msg, offset));
        }
    }
}

/// Return sites of the callback; an arrow with an expression body has that
/// expression as its single site.
pub(super) fn callback_return_sites<'p, 'a>(cb: CallbackFn<'p, 'a>) -> Vec<(u32, Option<&'p Expression<'a>>)> {
    match cb {
        CallbackFn::Function(f) => f.body.as_ref().map(|b| return_sites(b)).unwrap_or_default(),
        CallbackFn::Arrow(a) => match &a.body {
            ArrowFunctionBody::FunctionBody(body) => return_sites(body),
            expr => {
                let e = expr.as_expression().expect("non-block arrow body is an expression");
                vec![(oxc_span::GetSpan::span(e).start, Some(e))]
            }
        },
    }
}

fn return_shape_problem(arg: Option<&Expression<'_>>) -> Option<String> {
    let Some(arg) = arg else {
        return Some("return without a value; expected [transforms, chart]".into());
    };
    match strip_parens(arg) {
        Expression::ArrayExpression(arr) => {
            if arr.elements.len() != 2 {
                return Some(format!(
                    "callback must return a two-element array [transforms, chart], found {} elements",
                    arr.elements.len()
                ));
            }
            if arr
                .elements
                .iter()
                .any(|e| matches!(e, ArrayExpressionElement::SpreadElement(_) | ArrayExpressionElement::Elision(_)))
            {
                return Some("returned array must not contain spreads or holes".into());
            }
            None
        }
        _ => Some("callback must return an array literal [transforms, chart]".into()),
    }
}

/// Return sites reachable through statement nesting of a function body,
/// without entering nested functions: (offset, returned expression).
pub(super) fn return_sites<'p, 'a>(body: &'p FunctionBody<'a>) -> Vec<(u32, Option<&'p Expression<'a>>)> {
    let mut out = Vec::new();
    for stmt in &body.statements {
        collect_returns(stmt, &mut out);
    }
    out
}

fn collect_returns<'p, 'a>(stmt: &'p Statement<'a>, out: &mut Vec<(u32, Option<&'p Expression<'a>>)>) {
    let all = |stmts: &'p [Statement<'a>], out: &mut Vec<_>| stmts.iter().for_each(|s| collect_returns(s, out));
    match stmt {
        Statement::ReturnStatement(r) => out.push((r.span.start, r.argument.as_ref())),
        Statement::BlockStatement(b) => all(&b.body, out),
        Statement::IfStatement(i) => {
            collect_returns(&i.consequent, out);
            if let Some(alt) = &i.alternate {
                collect_returns(alt, out);
            }
        }
        Statement::ForStatement(f) => collect_returns(&f.body, out),
        Statement::ForInStatement(f) => collect_returns(&f.body, out),
        Statement::ForOfStatement(f) => collect_returns(&f.body, out),
        Statement::WhileStatement(w) => collect_returns(&w.body, out),
        Statement::DoWhileStatement(w) => collect_returns(&w.body, out),
        Statement::LabeledStatement(l) => collect_returns(&l.body, out),
        Statement::WithStatement(w) => collect_returns(&w.body, out),
        Statement::SwitchStatement(s) => s.cases.iter().for_each(|c| all(&c.consequent, out)),
        Statement::TryStatement(t) => {
            all(&t.block.body, out);
            if let Some(h) = &t.handler {
                all(&h.body.body, out);
            }
            if let Some(f) = &t.finalizer {
                all(&f.body, out);
            }
        }
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rules(src: &str) -> Vec<String> {
        check_callback_signature(src).findings.iter().map(|f| f.message.clone()).collect()
    }

    #[test]
    fn template_conforming_is_ok() {
        let r = check_callback_signature("function callback(event, chart) {\n  return [[], chart];\n}");
        assert!(r.ok, "{r:?}");
        let r = check_callback_signature("const callback = (event, chart) => [[], chart];");
        assert!(r.ok, "{r:?}");
        let r = check_callback_signature(
            "function helper(x) { return x; }\nfunction callback(event, chart) {\n  if (event.target.checked) { return [[{filter: 'true'}], chart]; }\n  const f = () => 5;\n  return [[], chart];\n}",
        );
        assert!(r.ok, "{r:?}");
    }

    #[test]
    fn wrong_name_or_arity() {
        let r = check_callback_signature("function onChange(event, chart) { return [[], chart]; }");
        assert!(!r.ok && r.findings[0].rule == Rule::Signature);
        let r = check_callback_signature("function callback(event, chart, extra) { return [[], chart]; }");
        assert!(!r.ok && r.findings[0].rule == Rule::Signature);
        assert!(!check_callback_signature("function callback(...a) { return [[], a]; }").ok);
        assert!(!check_callback_signature("async function callback(e, c) { return [[], c]; }").ok);
    }

    #[test]
    fn return_shapes() {
        assert!(rules("function callback(e, c) { return c; }")[0].contains("array literal"));
        assert!(rules("function callback(e, c) { return [c]; }")[0].contains("two-element"));
        assert!(rules("function callback(e, c) { if (e) return; return [[], c]; }")[0].contains("without a value"));
        assert!(rules("function callback(e, c) { c.x = 1; }")[0].contains("never returns"));
        assert!(!check_callback_signature("function callback(e, c) { return [[], c]; }\nfunction callback(e, c) { return [[], c]; }").ok);
    }
}
