//! The rule language: parsing, validation and printing of rule files.
//!
//! ```text
//! rule Name {
//!     pattern:   { <template> }
//!     condition: { pred(args); ... }
//!     generate:  { <template> }
//!     assert:    { #pragma stml <property> ... }   // optional
//! }
//! ```
//!
//! A template is a single expression (no trailing `;`) or a statement
//! sequence. Condition arguments are template expressions, `{a, b}` unions,
//! `(s1; s2)` sequences and nested `writes(x)` calls.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::annotations::{parse_pragma, Ann, StmlProperty};
use crate::ast::{Expr, MetaKind, OpRef, Stmt, StmtKind};
use crate::error::AstError;
use crate::lexer::Tok;
use crate::parser::{Mode, Parser};
use crate::printer::{print_template_expr, print_template_stmts, MetaDecls};
use crate::properties::PREDICATES;

const BUILTIN_SOURCE: &str = include_str!("../rules/builtin.stml");

#[derive(Debug, Clone, PartialEq)]
pub enum Template {
    Expr(Expr),
    Stmts(Vec<Stmt>),
}

impl Template {
    pub fn category(&self) -> &'static str {
        match self {
            Template::Expr(_) => "expression",
            Template::Stmts(_) => "statement sequence",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Arg {
    Expr(Expr),
    /// `{a, b, ...}`
    Set(Vec<Arg>),
    /// `(s1; s2; ...)`
    Seq(Vec<Arg>),
    /// A nested set-valued function, `writes(x)`.
    Call(String, Vec<Arg>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub name: String,
    pub args: Vec<Arg>,
}

/// Predicates whose first argument may introduce a metavariable.
pub const BINDERS: &[&str] = &["fresh_var", "occurs_in"];

/// Set-valued functions usable as arguments.
const SET_FUNCTIONS: &[&str] = &["writes"];

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub name: String,
    pub metas: BTreeMap<String, MetaKind>,
    pub pattern: Template,
    pub condition: Vec<Term>,
    pub generate: Template,
    pub asserts: Vec<StmlProperty>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleError {
    #[error(transparent)]
    Syntax(#[from] AstError),
    #[error("rule {rule}: metavariable `{name}` is not bound by the pattern")]
    Unbound { rule: String, name: String },
    #[error("rule {rule}: unknown predicate `{name}`")]
    UnknownPredicate { rule: String, name: String },
    #[error("rule {rule}: {message}")]
    Invalid { rule: String, message: String },
    #[error("duplicate rule name `{0}`")]
    Duplicate(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl Rule {
    /// The metavariables bound by condition binders rather than the pattern.
    pub fn condition_binders(&self) -> Vec<&str> {
        let pattern = pattern_metas(&self.pattern);
        self.condition
            .iter()
            .filter(|t| BINDERS.contains(&t.name.as_str()))
            .filter_map(|t| match t.args.first() {
                Some(Arg::Expr(Expr::Meta(n))) if !pattern.contains(n) => Some(n.as_str()),
                _ => None,
            })
            .collect()
    }

    pub fn fresh_vars(&self) -> Vec<&str> {
        self.condition
            .iter()
            .filter(|t| t.name == "fresh_var")
            .filter_map(|t| match t.args.first() {
                Some(Arg::Expr(Expr::Meta(n))) => Some(n.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Number of consequents (alternatives of a top-level `gen_list`).
    pub fn alternatives(&self) -> usize {
        match &self.generate {
            Template::Stmts(ss) => ss
                .iter()
                .find_map(|s| match &s.kind {
                    StmtKind::GenList(alts) => Some(alts.len()),
                    _ => None,
                })
                .unwrap_or(1),
            Template::Expr(_) => 1,
        }
    }
}

// ---- metavariable collection ------------------------------------------------

fn expr_metas(e: &Expr, out: &mut BTreeSet<String>) {
    match e {
        Expr::Meta(n) => {
            out.insert(n.clone());
        }
        Expr::BinOper { op, lhs, rhs } => {
            if let OpRef::Meta(n) = op {
                out.insert(n.clone());
            }
            expr_metas(lhs, out);
            expr_metas(rhs, out);
        }
        other => {
            for c in other.children() {
                expr_metas(c, out);
            }
        }
    }
}

fn stmt_metas(s: &Stmt, out: &mut BTreeSet<String>) {
    match &s.kind {
        StmtKind::Meta(n) => {
            out.insert(n.clone());
        }
        StmtKind::Subs { target, .. } => {
            out.insert(target.clone());
        }
        _ => {}
    }
    for e in s.own_exprs() {
        expr_metas(e, out);
    }
    for b in s.child_blocks() {
        for c in b {
            stmt_metas(c, out);
        }
    }
}

pub fn template_metas(t: &Template) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    match t {
        Template::Expr(e) => expr_metas(e, &mut out),
        Template::Stmts(ss) => {
            for s in ss {
                stmt_metas(s, &mut out);
            }
        }
    }
    out
}

fn pattern_metas(t: &Template) -> BTreeSet<String> {
    template_metas(t)
}

fn arg_metas(a: &Arg, out: &mut BTreeSet<String>) {
    match a {
        Arg::Expr(e) => expr_metas(e, out),
        Arg::Set(xs) | Arg::Seq(xs) | Arg::Call(_, xs) => {
            for x in xs {
                arg_metas(x, out);
            }
        }
    }
}

fn has_generator(e: &Expr) -> bool {
    matches!(e, Expr::Subs { .. }) || e.children().into_iter().any(has_generator)
}

fn stmt_has_generator(s: &Stmt) -> bool {
    matches!(
        s.kind,
        StmtKind::Subs { .. } | StmtKind::IfThen { .. } | StmtKind::GenList(_)
    ) || s.own_exprs().into_iter().any(has_generator)
        || s.child_blocks().into_iter().flatten().any(stmt_has_generator)
}

fn nested_gen_list(s: &Stmt) -> bool {
    s.child_blocks()
        .into_iter()
        .flatten()
        .any(|c| matches!(c.kind, StmtKind::GenList(_)) || nested_gen_list(c))
}

// ---- parsing ------------------------------------------------------------------

struct RuleParser {
    p: Parser,
}

impl RuleParser {
    fn keyword(&mut self, kw: &str) -> Result<(), AstError> {
        if self.p.is_ident(kw) {
            self.p.bump();
            Ok(())
        } else {
            Err(self.p.error(format!("expected `{kw}`")))
        }
    }

    fn section_open(&mut self, kw: &str) -> Result<(), AstError> {
        self.keyword(kw)?;
        self.p.expect_punct(":")?;
        self.p.expect_punct("{")
    }

    fn template(&mut self) -> Result<Template, AstError> {
        let mark = self.p.mark();
        let metas = self.p.metas.clone();
        if let Ok(e) = self.p.expr() {
            if self.p.eat_punct("}") {
                return Ok(Template::Expr(e));
            }
        }
        self.p.reset(mark);
        self.p.metas = metas;
        let stmts = self.p.stmts_until_brace()?;
        self.p.expect_punct("}")?;
        Ok(Template::Stmts(stmts))
    }

    fn arg(&mut self) -> Result<Arg, AstError> {
        if self.p.eat_punct("{") {
            let mut items = Vec::new();
            if !self.p.is_punct("}") {
                loop {
                    items.push(self.arg()?);
                    if !self.p.eat_punct(",") {
                        break;
                    }
                }
            }
            self.p.expect_punct("}")?;
            return Ok(Arg::Set(items));
        }
        if self.p.is_punct("(") {
            let mark = self.p.mark();
            self.p.bump();
            let first = self.arg()?;
            if self.p.eat_punct(";") {
                let mut items = vec![first];
                loop {
                    items.push(self.arg()?);
                    if !self.p.eat_punct(";") {
                        break;
                    }
                }
                self.p.expect_punct(")")?;
                return Ok(Arg::Seq(items));
            }
            self.p.reset(mark);
        }
        if let Tok::Ident(name) = self.p.peek().clone() {
            if SET_FUNCTIONS.contains(&name.as_str()) && matches!(self.p.peek_at(1), Tok::Punct("(")) {
                self.p.bump();
                self.p.bump();
                let args = self.args_until_paren()?;
                return Ok(Arg::Call(name, args));
            }
        }
        Ok(Arg::Expr(self.p.expr()?))
    }

    fn args_until_paren(&mut self) -> Result<Vec<Arg>, AstError> {
        let mut args = Vec::new();
        if !self.p.eat_punct(")") {
            loop {
                args.push(self.arg()?);
                if !self.p.eat_punct(",") {
                    break;
                }
            }
            self.p.expect_punct(")")?;
        }
        Ok(args)
    }

    fn condition(&mut self) -> Result<Vec<Term>, AstError> {
        let mut terms = Vec::new();
        while !self.p.eat_punct("}") {
            let name = self.p.expect_ident()?;
            self.p.expect_punct("(")?;
            let args = self.args_until_paren()?;
            self.p.expect_punct(";")?;
            terms.push(Term { name, args });
        }
        Ok(terms)
    }

    fn asserts(&mut self) -> Result<Vec<StmlProperty>, AstError> {
        let mut out = Vec::new();
        loop {
            let (line, col) = self.p.loc();
            match self.p.peek().clone() {
                Tok::Pragma(text) => {
                    self.p.bump();
                    let anns = parse_pragma(&text, line).map_err(|e| AstError::syntax(line, col, e.to_string()))?;
                    for a in anns {
                        match a {
                            Ann::Stml(prop) => out.push(prop),
                            other => {
                                return Err(AstError::syntax(
                                    line,
                                    col,
                                    format!("only stml properties can be asserted, found `{}`", other.pragma_text()),
                                ))
                            }
                        }
                    }
                }
                Tok::Punct("}") => {
                    self.p.bump();
                    return Ok(out);
                }
                _ => return Err(self.p.error("expected `#pragma stml ...` or `}`")),
            }
        }
    }

    fn rule(&mut self) -> Result<Rule, RuleError> {
        self.keyword("rule")?;
        let name = self.p.expect_ident()?;
        self.p.expect_punct("{")?;
        self.p.metas.clear();
        self.p.take_declared();

        self.section_open("pattern")?;
        let pattern = self.template()?;
        let pattern_declared: BTreeSet<String> = self.p.take_declared().into_iter().map(|d| d.name).collect();

        self.section_open("condition")?;
        let condition = self.condition()?;
        self.p.take_declared();

        self.section_open("generate")?;
        let generate = self.template()?;
        let generate_declared = self.p.take_declared();

        let asserts = if self.p.is_ident("assert") {
            self.section_open("assert")?;
            self.asserts()?
        } else {
            Vec::new()
        };
        self.p.expect_punct("}")?;

        let rule = Rule {
            name,
            metas: self.p.metas.clone(),
            pattern,
            condition,
            generate,
            asserts,
        };
        validate(
            &rule,
            &pattern_declared,
            &generate_declared.into_iter().map(|d| d.name).collect(),
        )?;
        Ok(rule)
    }
}

fn invalid(rule: &Rule, message: impl Into<String>) -> RuleError {
    RuleError::Invalid {
        rule: rule.name.clone(),
        message: message.into(),
    }
}

fn validate(
    rule: &Rule,
    pattern_declared: &BTreeSet<String>,
    generate_declared: &BTreeSet<String>,
) -> Result<(), RuleError> {
    let unbound = |name: &str| RuleError::Unbound {
        rule: rule.name.clone(),
        name: name.to_string(),
    };
    if let Template::Stmts(ss) = &rule.pattern {
        if ss.is_empty() {
            return Err(invalid(rule, "empty pattern"));
        }
        if ss.iter().any(stmt_has_generator) {
            return Err(invalid(rule, "generator constructs are not allowed in a pattern"));
        }
    } else if let Template::Expr(e) = &rule.pattern {
        if has_generator(e) {
            return Err(invalid(rule, "generator constructs are not allowed in a pattern"));
        }
        if let Expr::Meta(_) = e {
            return Err(invalid(rule, "a pattern cannot be a lone metavariable"));
        }
    }
    if rule.pattern.category() != rule.generate.category() {
        return Err(invalid(
            rule,
            format!(
                "pattern is a {} but generate is a {}",
                rule.pattern.category(),
                rule.generate.category()
            ),
        ));
    }
    let mut bound = pattern_metas(&rule.pattern);
    // Metavariables that appear in the pattern were declared there; the
    // pattern must mention every one of its own declarations.
    debug_assert!(pattern_declared.iter().all(|n| bound.contains(n)));

    for t in &rule.condition {
        if !PREDICATES.contains(&t.name.as_str()) {
            return Err(RuleError::UnknownPredicate {
                rule: rule.name.clone(),
                name: t.name.clone(),
            });
        }
        let mut used = BTreeSet::new();
        for (i, a) in t.args.iter().enumerate() {
            if i == 0 && BINDERS.contains(&t.name.as_str()) {
                if let Arg::Expr(Expr::Meta(n)) = a {
                    if rule.metas.get(n) != Some(&MetaKind::Expr) {
                        return Err(invalid(rule, format!("`{n}` must be an expression metavariable")));
                    }
                    if t.name == "fresh_var" && bound.contains(n) {
                        return Err(invalid(rule, format!("fresh variable `{n}` is already bound")));
                    }
                    bound.insert(n.clone());
                    continue;
                }
            }
            arg_metas(a, &mut used);
        }
        for a in &t.args {
            check_set_functions(rule, a)?;
        }
        if let Some(n) = used.iter().find(|n| !bound.contains(*n)) {
            return Err(unbound(n));
        }
    }
    let generated = template_metas(&rule.generate);
    if let Some(n) = generated.iter().chain(generate_declared).find(|n| !bound.contains(*n)) {
        return Err(unbound(n));
    }
    if let Template::Stmts(ss) = &rule.generate {
        if ss.iter().filter(|s| matches!(s.kind, StmtKind::GenList(_))).count() > 1 || ss.iter().any(nested_gen_list) {
            return Err(invalid(
                rule,
                "gen_list is only allowed once, at the top level of generate",
            ));
        }
    }
    Ok(())
}

fn check_set_functions(rule: &Rule, a: &Arg) -> Result<(), RuleError> {
    match a {
        Arg::Call(name, args) => {
            if !SET_FUNCTIONS.contains(&name.as_str()) {
                return Err(invalid(rule, format!("`{name}` is not a set-valued function")));
            }
            if args.len() != 1 {
                return Err(invalid(rule, format!("`{name}` takes one argument")));
            }
            check_set_functions(rule, &args[0])
        }
        Arg::Set(xs) | Arg::Seq(xs) => xs.iter().try_for_each(|x| check_set_functions(rule, x)),
        Arg::Expr(_) => Ok(()),
    }
}

/// Parses a rule file.
pub fn parse_rules(source: &str) -> Result<Vec<Rule>, RuleError> {
    let mut rp = RuleParser {
        p: Parser::for_source(source, Mode::Template)?,
    };
    let mut rules: Vec<Rule> = Vec::new();
    while !rp.p.at_eof() {
        let rule = rp.rule()?;
        if rules.iter().any(|r| r.name == rule.name) {
            return Err(RuleError::Duplicate(rule.name));
        }
        rules.push(rule);
    }
    Ok(rules)
}

/// The shipped rule library.
pub fn builtin_rules() -> Vec<Rule> {
    parse_rules(BUILTIN_SOURCE).expect("shipped rules are valid")
}

pub fn builtin_source() -> &'static str {
    BUILTIN_SOURCE
}

/// Loads every `*.stml` file of a directory, in file-name order.
pub fn load_rules_dir(dir: &Path) -> Result<Vec<Rule>, RuleError> {
    let io = |e: std::io::Error| RuleError::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    };
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "stml"))
        .collect();
    files.sort();
    let mut rules: Vec<Rule> = Vec::new();
    for f in files {
        let text = std::fs::read_to_string(&f).map_err(|e| RuleError::Io {
            path: f.display().to_string(),
            message: e.to_string(),
        })?;
        for r in parse_rules(&text)? {
            if rules.iter().any(|x| x.name == r.name) {
                return Err(RuleError::Duplicate(r.name));
            }
            rules.push(r);
        }
    }
    Ok(rules)
}

// ---- printing -------------------------------------------------------------------

fn print_arg(a: &Arg, decls: &mut MetaDecls) -> String {
    match a {
        Arg::Expr(e) => print_template_expr(e, decls),
        Arg::Set(xs) => {
            let parts: Vec<String> = xs.iter().map(|x| print_arg(x, decls)).collect();
            format!("{{{}}}", parts.join(", "))
        }
        Arg::Seq(xs) => {
            let parts: Vec<String> = xs.iter().map(|x| print_arg(x, decls)).collect();
            format!("({})", parts.join("; "))
        }
        Arg::Call(name, xs) => {
            let parts: Vec<String> = xs.iter().map(|x| print_arg(x, decls)).collect();
            format!("{name}({})", parts.join(", "))
        }
    }
}

pub fn print_term(t: &Term, decls: &mut MetaDecls) -> String {
    let parts: Vec<String> = t.args.iter().map(|a| print_arg(a, decls)).collect();
    format!("{}({})", t.name, parts.join(", "))
}

fn print_template(t: &Template, out: &mut String, decls: &mut MetaDecls) {
    match t {
        Template::Expr(e) => {
            let _ = writeln!(out, "        {}", print_template_expr(e, decls));
        }
        Template::Stmts(ss) => out.push_str(&print_template_stmts(ss, 2, decls)),
    }
}

pub fn print_rule(rule: &Rule) -> String {
    let mut decls = MetaDecls::new(rule.metas.clone());
    let mut out = format!("rule {} {{\n    pattern: {{\n", rule.name);
    print_template(&rule.pattern, &mut out, &mut decls);
    out.push_str("    }\n    condition: {\n");
    for t in &rule.condition {
        let _ = writeln!(out, "        {};", print_term(t, &mut decls));
    }
    out.push_str("    }\n    generate: {\n");
    print_template(&rule.generate, &mut out, &mut decls);
    out.push_str("    }\n");
    if !rule.asserts.is_empty() {
        out.push_str("    assert: {\n");
        for a in &rule.asserts {
            let _ = writeln!(out, "        #pragma stml {a}");
        }
        out.push_str("    }\n");
    }
    out.push_str("}\n");
    out
}

pub fn print_rules(rules: &[Rule]) -> String {
    rules.iter().map(print_rule).collect::<Vec<_>>().join("\n")
}
