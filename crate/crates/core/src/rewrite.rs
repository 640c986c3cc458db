//! Rule matching and application.
//!
//! Statement patterns match a run of consecutive statements that starts at
//! the candidate position. Leading and trailing `cstmts` metavariables of a
//! statement pattern always bind the empty sequence there: any longer
//! binding is the same rewrite found from a neighbouring position.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{parse_pragma, Ann, AnnotationStore, CLocation, Parameter, Provenance, StmlProperty, Warning};
use crate::ast::{BinOp, Block, Declarator, Expr, MetaKind, NodeId, OpRef, Program, Stmt, StmtKind, Type};
use crate::error::AstError;
use crate::nodes::{replace_run, NodeRef, NodeTable};
use crate::printer::{print_expr, print_stmts};
use crate::properties::{eval_predicate, Operand, PredicateCtx, PredicateError, Tri};
use crate::rules::{Arg, Rule, Template, Term};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Binding {
    Expr(Expr),
    Stmts(Vec<Stmt>),
}

pub type Bindings = BTreeMap<String, Binding>;

/// Where a match sits in the program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Span {
    Expr(NodeId),
    Run { container: NodeId, slot: usize, len: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Match {
    pub rule: String,
    pub pos: NodeId,
    pub alt: usize,
    pub span: Span,
    pub bindings: Bindings,
    pub verdict: Tri,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Candidate {
    pub rule: String,
    pub pos: NodeId,
    /// Consequent index for rules whose generate section is a `gen_list`.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub alt: usize,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

/// The (rule, old code, new code) record of one application.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub rule: String,
    pub pos: NodeId,
    pub old_fragment: String,
    pub new_fragment: String,
}

#[derive(Debug, Clone)]
pub struct Transformed {
    pub program: Program,
    pub store: AnnotationStore,
    pub warnings: Vec<Warning>,
    pub triplet: Triplet,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RewriteError {
    #[error("rule {rule} is not applicable at node {pos}")]
    NotApplicable { rule: String, pos: NodeId },
    #[error("rule {rule} at node {pos} is only possibly applicable; it must be forced")]
    Unconfirmed { rule: String, pos: NodeId },
    #[error("unknown rule `{0}`")]
    UnknownRule(String),
    #[error("rule {rule}: {message}")]
    Instantiate { rule: String, message: String },
    #[error("rule {rule}: {source}")]
    Predicate {
        rule: String,
        #[source]
        source: PredicateError,
    },
    #[error(transparent)]
    Ast(#[from] AstError),
}

// ---- substitution and fresh names ------------------------------------------

/// Replaces every structural occurrence of `from` in `e` by `to`.
pub fn substitute(e: &Expr, from: &Expr, to: &Expr) -> Expr {
    if e == from {
        return to.clone();
    }
    let mut out = e.clone();
    for c in out.children_mut() {
        *c = substitute(c, from, to);
    }
    out
}

pub fn substitute_stmts(stmts: &[Stmt], from: &Expr, to: &Expr) -> Vec<Stmt> {
    stmts
        .iter()
        .map(|s| map_stmt(s, &mut |e| Ok::<_, ()>(substitute(e, from, to))).expect("infallible"))
        .collect()
}

/// Rebuilds a statement with every top-level expression mapped by `f`,
/// recursing into nested statements.
fn map_stmt<E>(s: &Stmt, f: &mut dyn FnMut(&Expr) -> Result<Expr, E>) -> Result<Stmt, E> {
    let block = |b: &Block, f: &mut dyn FnMut(&Expr) -> Result<Expr, E>| -> Result<Block, E> {
        Ok(Block::new(
            b.stmts.iter().map(|s| map_stmt(s, f)).collect::<Result<_, _>>()?,
        ))
    };
    let opt = |e: &Option<Expr>, f: &mut dyn FnMut(&Expr) -> Result<Expr, E>| -> Result<Option<Expr>, E> {
        e.as_ref().map(f).transpose()
    };
    let kind = match &s.kind {
        StmtKind::Decl { ty, declarators } => StmtKind::Decl {
            ty: *ty,
            declarators: declarators
                .iter()
                .map(|d| {
                    Ok(Declarator {
                        name: d.name.clone(),
                        extent: opt(&d.extent, f)?,
                        init: opt(&d.init, f)?,
                    })
                })
                .collect::<Result<_, E>>()?,
        },
        StmtKind::Assign { op, target, value } => StmtKind::Assign {
            op: *op,
            target: f(target)?,
            value: f(value)?,
        },
        StmtKind::Expr(e) => StmtKind::Expr(f(e)?),
        StmtKind::Compound(ss) => StmtKind::Compound(ss.iter().map(|s| map_stmt(s, f)).collect::<Result<_, _>>()?),
        StmtKind::For { init, cond, step, body } => StmtKind::For {
            init: opt(init, f)?,
            cond: opt(cond, f)?,
            step: opt(step, f)?,
            body: block(body, f)?,
        },
        StmtKind::If { cond, then, els } => StmtKind::If {
            cond: f(cond)?,
            then: block(then, f)?,
            els: els.as_ref().map(|b| block(b, f)).transpose()?,
        },
        StmtKind::Return(e) => StmtKind::Return(opt(e, f)?),
        StmtKind::Function {
            ret,
            name,
            params,
            body,
        } => StmtKind::Function {
            ret: *ret,
            name: name.clone(),
            params: params.clone(),
            body: block(body, f)?,
        },
        other => other.clone(),
    };
    Ok(Stmt {
        pragmas: s.pragmas.clone(),
        kind,
    })
}

fn annotation_words(store: &AnnotationStore) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for (_, entry) in store.iter() {
        let text = entry.ann.pragma_text();
        for w in text.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_')) {
            if !w.is_empty() && !w.starts_with(|c: char| c.is_ascii_digit()) {
                out.insert(w.to_string());
            }
        }
    }
    out
}

/// Every identifier the program or its annotations mention.
pub fn used_names(p: &Program, store: &AnnotationStore) -> BTreeSet<String> {
    let mut names: BTreeSet<String> = p.names().into_iter().collect();
    names.extend(annotation_words(store));
    names
}

/// `hint`, `hint_1`, `hint_2`, ...: the first one not in `taken`.
pub fn fresh_name_among(taken: &BTreeSet<String>, hint: &str) -> String {
    if !taken.contains(hint) {
        return hint.to_string();
    }
    (1..)
        .map(|i| format!("{hint}_{i}"))
        .find(|n| !taken.contains(n))
        .expect("unbounded")
}

pub fn fresh_name(p: &Program, store: &AnnotationStore, hint: &str) -> String {
    fresh_name_among(&used_names(p, store), hint)
}

// ---- matching -------------------------------------------------------------

fn op_binding(op: &OpRef, name: &str, b: &mut Bindings) -> bool {
    match op {
        OpRef::Builtin(x) => x.symbol() == name,
        OpRef::Named(n) => n == name,
        OpRef::Meta(m) => bind_expr(m, Expr::ident(name), b),
    }
}

fn bind_expr(m: &str, e: Expr, b: &mut Bindings) -> bool {
    match b.get(m) {
        Some(Binding::Expr(x)) => *x == e,
        Some(Binding::Stmts(_)) => false,
        None => {
            b.insert(m.to_string(), Binding::Expr(e));
            true
        }
    }
}

fn match_expr(pat: &Expr, e: &Expr, b: &mut Bindings) -> bool {
    match (pat, e) {
        (Expr::Meta(m), _) => bind_expr(m, e.clone(), b),
        (Expr::BinOper { op, lhs, rhs }, Expr::Binary { op: o, lhs: l, rhs: r }) => {
            !matches!(op, OpRef::Named(_))
                && op_binding(op, o.symbol(), b)
                && match_expr(lhs, l, b)
                && match_expr(rhs, r, b)
        }
        (Expr::BinOper { op, lhs, rhs }, Expr::Call { name, args }) if args.len() == 2 => {
            !matches!(op, OpRef::Builtin(_))
                && op_binding(op, name, b)
                && match_expr(lhs, &args[0], b)
                && match_expr(rhs, &args[1], b)
        }
        (Expr::Index { base, index }, Expr::Index { base: b2, index: i2 }) => base == b2 && match_expr(index, i2, b),
        (Expr::Unary { op, operand }, Expr::Unary { op: o, operand: x }) => op == o && match_expr(operand, x, b),
        (Expr::Binary { op, lhs, rhs }, Expr::Binary { op: o, lhs: l, rhs: r }) => {
            op == o && match_expr(lhs, l, b) && match_expr(rhs, r, b)
        }
        (Expr::Call { name, args }, Expr::Call { name: n, args: a }) => {
            name == n && args.len() == a.len() && args.iter().zip(a).all(|(p, x)| match_expr(p, x, b))
        }
        (
            Expr::Assign { op, target, value },
            Expr::Assign {
                op: o,
                target: t,
                value: v,
            },
        ) => op == o && match_expr(target, t, b) && match_expr(value, v, b),
        (
            Expr::DeclInit { ty, name, value },
            Expr::DeclInit {
                ty: t,
                name: n,
                value: v,
            },
        ) => ty == t && name == n && match_expr(value, v, b),
        (Expr::Zip(ps), Expr::Zip(xs)) | (Expr::Tuple(ps), Expr::Tuple(xs)) => {
            ps.len() == xs.len() && ps.iter().zip(xs).all(|(p, x)| match_expr(p, x, b))
        }
        (Expr::Int(_) | Expr::Float(_) | Expr::Ident(_), _) => pat == e,
        _ => false,
    }
}

fn match_opt(pat: &Option<Expr>, e: &Option<Expr>, b: &mut Bindings) -> bool {
    match (pat, e) {
        (None, None) => true,
        (Some(p), Some(x)) => match_expr(p, x, b),
        _ => false,
    }
}

fn same_stmts(a: &[Stmt], b: &[Stmt]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.without_pragmas() == y.without_pragmas())
}

struct Matcher<'r> {
    metas: &'r BTreeMap<String, MetaKind>,
}

impl Matcher<'_> {
    fn kind(&self, name: &str) -> Option<MetaKind> {
        self.metas.get(name).copied()
    }

    /// All ways `pats` matches a prefix of `stmts` (the whole of it when
    /// `exact`), with the number of statements consumed.
    fn seq(&self, pats: &[Stmt], stmts: &[Stmt], b: &Bindings, exact: bool) -> Vec<(Bindings, usize)> {
        let Some((first, rest)) = pats.split_first() else {
            return if !exact || stmts.is_empty() {
                vec![(b.clone(), 0)]
            } else {
                vec![]
            };
        };
        let mut out = Vec::new();
        let extend = |b2: Bindings, used: usize, out: &mut Vec<(Bindings, usize)>| {
            for (b3, n) in self.seq(rest, &stmts[used..], &b2, exact) {
                out.push((b3, used + n));
            }
        };
        if let StmtKind::Meta(m) = &first.kind {
            match (self.kind(m), b.get(m)) {
                (_, Some(Binding::Stmts(bound))) => {
                    if stmts.len() >= bound.len() && same_stmts(bound, &stmts[..bound.len()]) {
                        extend(b.clone(), bound.len(), &mut out);
                    }
                }
                (_, Some(Binding::Expr(_))) => {}
                (Some(MetaKind::Stmts), None) => {
                    for n in 0..=stmts.len() {
                        let mut b2 = b.clone();
                        b2.insert(
                            m.clone(),
                            Binding::Stmts(stmts[..n].iter().map(Stmt::without_pragmas).collect()),
                        );
                        extend(b2, n, &mut out);
                    }
                }
                (_, None) => {
                    if let Some(s) = stmts.first() {
                        let mut b2 = b.clone();
                        b2.insert(m.clone(), Binding::Stmts(vec![s.without_pragmas()]));
                        extend(b2, 1, &mut out);
                    }
                }
            }
            return out;
        }
        if let Some(s) = stmts.first() {
            for b2 in self.stmt(first, s, b) {
                extend(b2, 1, &mut out);
            }
        }
        out
    }

    fn block(&self, pats: &[Stmt], stmts: &[Stmt], b: &Bindings) -> Vec<Bindings> {
        self.seq(pats, stmts, b, true).into_iter().map(|(b, _)| b).collect()
    }

    fn exprs(&self, pairs: &[(&Expr, &Expr)], b: &Bindings) -> Option<Bindings> {
        let mut b = b.clone();
        pairs.iter().all(|(p, e)| match_expr(p, e, &mut b)).then_some(b)
    }

    fn stmt(&self, pat: &Stmt, s: &Stmt, b: &Bindings) -> Vec<Bindings> {
        use StmtKind as K;
        match (&pat.kind, &s.kind) {
            (
                K::Assign { op, target, value },
                K::Assign {
                    op: o,
                    target: t,
                    value: v,
                },
            ) if op == o => self.exprs(&[(target, t), (value, v)], b).into_iter().collect(),
            (K::Expr(p), K::Expr(e)) => self.exprs(&[(p, e)], b).into_iter().collect(),
            (K::Return(p), K::Return(e)) => {
                let mut b = b.clone();
                if match_opt(p, e, &mut b) {
                    vec![b]
                } else {
                    vec![]
                }
            }
            (K::Decl { ty, declarators: ps }, K::Decl { ty: t, declarators: ds })
                if ty == t && ps.len() == ds.len() =>
            {
                let mut b = b.clone();
                let ok = ps.iter().zip(ds).all(|(p, d)| {
                    p.name == d.name && match_opt(&p.extent, &d.extent, &mut b) && match_opt(&p.init, &d.init, &mut b)
                });
                if ok {
                    vec![b]
                } else {
                    vec![]
                }
            }
            (
                K::For { init, cond, step, body },
                K::For {
                    init: i,
                    cond: c,
                    step: st,
                    body: bd,
                },
            ) => {
                let mut b = b.clone();
                if match_opt(init, i, &mut b) && match_opt(cond, c, &mut b) && match_opt(step, st, &mut b) {
                    self.block(&body.stmts, &bd.stmts, &b)
                } else {
                    vec![]
                }
            }
            (
                K::If { cond, then, els },
                K::If {
                    cond: c,
                    then: t,
                    els: e,
                },
            ) => {
                let Some(b) = self.exprs(&[(cond, c)], b) else {
                    return vec![];
                };
                let mut out = Vec::new();
                for b1 in self.block(&then.stmts, &t.stmts, &b) {
                    match (els, e) {
                        (None, None) => out.push(b1),
                        (Some(pe), Some(se)) => out.extend(self.block(&pe.stmts, &se.stmts, &b1)),
                        _ => {}
                    }
                }
                out
            }
            (K::Compound(ps), K::Compound(ss)) => self.block(ps, ss, b),
            (
                K::Function {
                    ret,
                    name,
                    params,
                    body,
                },
                K::Function {
                    ret: r,
                    name: n,
                    params: ps,
                    body: bd,
                },
            ) if ret == r && name == n && params == ps => self.block(&body.stmts, &bd.stmts, b),
            _ => vec![],
        }
    }
}

/// The part of a statement pattern that must match at the candidate
/// position: leading and trailing `cstmts` metavariables are bound to the
/// empty sequence.
fn run_core<'p>(rule: &Rule, pats: &'p [Stmt], b: &mut Bindings) -> &'p [Stmt] {
    let is_stmts_meta = |s: &Stmt| matches!(&s.kind, StmtKind::Meta(m) if rule.metas.get(m) == Some(&MetaKind::Stmts));
    let mut lo = 0;
    while lo < pats.len() && is_stmts_meta(&pats[lo]) {
        if let StmtKind::Meta(m) = &pats[lo].kind {
            b.insert(m.clone(), Binding::Stmts(vec![]));
        }
        lo += 1;
    }
    let mut hi = pats.len();
    while hi > lo && is_stmts_meta(&pats[hi - 1]) {
        if let StmtKind::Meta(m) = &pats[hi - 1].kind {
            if b.contains_key(m) {
                break;
            }
            b.insert(m.clone(), Binding::Stmts(vec![]));
        }
        hi -= 1;
    }
    &pats[lo..hi]
}

/// Every way the rule's pattern matches at `pos`, in split order.
fn pattern_matches(rule: &Rule, table: &NodeTable<'_>, pos: NodeId) -> Vec<(Bindings, Span)> {
    let Some(entry) = table.get(pos) else {
        return vec![];
    };
    match (&rule.pattern, entry.node) {
        (Template::Expr(pat), NodeRef::Expr(e)) => {
            let mut b = Bindings::new();
            if match_expr(pat, e, &mut b) {
                vec![(b, Span::Expr(pos))]
            } else {
                vec![]
            }
        }
        (Template::Stmts(pats), NodeRef::Stmt(_)) => {
            let (Some(container), Some(slot)) = (entry.parent, entry.slot) else {
                return vec![];
            };
            let Some(seq) = table.get(container).and_then(|c| c.node.sequence()) else {
                return vec![];
            };
            let mut b = Bindings::new();
            let core = run_core(rule, pats, &mut b);
            if core.is_empty() {
                return vec![];
            }
            let m = Matcher { metas: &rule.metas };
            m.seq(core, &seq[slot..], &b, false)
                .into_iter()
                .filter(|(_, n)| *n > 0)
                .map(|(b, len)| (b, Span::Run { container, slot, len }))
                .collect()
        }
        _ => vec![],
    }
}

// ---- conditions ----------------------------------------------------------------

struct Env<'a> {
    rule: &'a Rule,
    store: &'a AnnotationStore,
    names: BTreeSet<String>,
}

impl Env<'_> {
    fn ctx(&self) -> PredicateCtx<'_> {
        PredicateCtx {
            store: self.store,
            names: &self.names,
        }
    }

    fn err(&self, message: impl Into<String>) -> RewriteError {
        RewriteError::Instantiate {
            rule: self.rule.name.clone(),
            message: message.into(),
        }
    }

    fn operand(&self, a: &Arg, b: &Bindings) -> Result<Operand, RewriteError> {
        Ok(match a {
            Arg::Expr(Expr::Meta(m)) => match b.get(m) {
                Some(Binding::Expr(e)) => Operand::Expr(e.clone()),
                Some(Binding::Stmts(ss)) => Operand::Stmts(ss.clone()),
                None => return Err(self.err(format!("metavariable `{m}` is unbound"))),
            },
            Arg::Expr(e) => Operand::Expr(self.expr(e, b)?),
            Arg::Set(xs) | Arg::Seq(xs) => {
                Operand::Set(xs.iter().map(|x| self.operand(x, b)).collect::<Result<_, _>>()?)
            }
            Arg::Call(_, xs) => {
                let inner = self.operand(&xs[0], b)?;
                Operand::Locs(self.ctx().effects(&inner))
            }
        })
    }

    /// All complete extensions of `b` satisfying `terms[i..]` not
    /// definitely false, with their verdicts, in enumeration order.
    fn conditions(
        &self,
        terms: &[Term],
        b: Bindings,
        verdict: Tri,
        out: &mut Vec<(Bindings, Tri)>,
    ) -> Result<(), RewriteError> {
        let Some((t, rest)) = terms.split_first() else {
            out.push((b, verdict));
            return Ok(());
        };
        if let Some(Arg::Expr(Expr::Meta(m))) = t.args.first() {
            if !b.contains_key(m) {
                match t.name.as_str() {
                    "fresh_var" => {
                        let mut taken = self.names.clone();
                        for v in b.values() {
                            if let Binding::Expr(Expr::Ident(n)) = v {
                                taken.insert(n.clone());
                            }
                        }
                        let mut b2 = b;
                        b2.insert(m.clone(), Binding::Expr(Expr::ident(fresh_name_among(&taken, m))));
                        return self.conditions(rest, b2, verdict, out);
                    }
                    "occurs_in" => {
                        let hay = self.operand(&t.args[1], &b)?;
                        for e in subexpressions(&hay) {
                            let mut b2 = b.clone();
                            b2.insert(m.clone(), Binding::Expr(e));
                            self.conditions(rest, b2, verdict, out)?;
                        }
                        return Ok(());
                    }
                    _ => {}
                }
            }
        }
        let args = t
            .args
            .iter()
            .map(|a| self.operand(a, &b))
            .collect::<Result<Vec<_>, _>>()?;
        let v = eval_predicate(&t.name, &args, &self.ctx()).map_err(|source| RewriteError::Predicate {
            rule: self.rule.name.clone(),
            source,
        })?;
        let verdict = verdict.and(v);
        if verdict == Tri::False {
            return Ok(());
        }
        self.conditions(rest, b, verdict, out)
    }

    fn term_verdict(&self, t: &Term, b: &Bindings) -> Result<Tri, RewriteError> {
        let mut out = Vec::new();
        self.conditions(std::slice::from_ref(t), b.clone(), Tri::True, &mut out)?;
        Ok(out.first().map_or(Tri::False, |(_, v)| *v))
    }

    // ---- instantiation ----

    fn expr(&self, e: &Expr, b: &Bindings) -> Result<Expr, RewriteError> {
        match e {
            Expr::Meta(m) => match b.get(m) {
                Some(Binding::Expr(x)) => Ok(x.clone()),
                Some(Binding::Stmts(_)) => Err(self.err(format!("`{m}` is a statement binding used as an expression"))),
                None => Err(self.err(format!("metavariable `{m}` is unbound"))),
            },
            Expr::BinOper { op, lhs, rhs } => {
                let l = self.expr(lhs, b)?;
                let r = self.expr(rhs, b)?;
                let name = match op {
                    OpRef::Builtin(o) => return Ok(Expr::binary(*o, l, r)),
                    OpRef::Named(n) => n.clone(),
                    OpRef::Meta(m) => match b.get(m) {
                        Some(Binding::Expr(Expr::Ident(n))) => n.clone(),
                        _ => return Err(self.err(format!("`{m}` is not bound to an operator"))),
                    },
                };
                Ok(match BinOp::from_symbol(&name) {
                    Some(o) => Expr::binary(o, l, r),
                    None => Expr::Call { name, args: vec![l, r] },
                })
            }
            Expr::Subs { target, from, to } => Ok(substitute(
                &self.expr(target, b)?,
                &self.expr(from, b)?,
                &self.expr(to, b)?,
            )),
            other => {
                let mut out = other.clone();
                for c in out.children_mut() {
                    *c = self.expr(c, b)?;
                }
                Ok(out)
            }
        }
    }

    fn stmts(&self, ss: &[Stmt], b: &Bindings, alt: usize) -> Result<Vec<Stmt>, RewriteError> {
        let mut out = Vec::new();
        for s in ss {
            match &s.kind {
                StmtKind::Meta(m) => match b.get(m) {
                    Some(Binding::Stmts(x)) => out.extend(x.iter().cloned()),
                    Some(Binding::Expr(e)) => out.push(Stmt::new(StmtKind::Expr(e.clone()))),
                    None => return Err(self.err(format!("metavariable `{m}` is unbound"))),
                },
                StmtKind::Subs { target, from, to } => {
                    let Some(Binding::Stmts(x)) = b.get(target) else {
                        return Err(self.err(format!("`{target}` is not a statement binding")));
                    };
                    out.extend(substitute_stmts(x, &self.expr(from, b)?, &self.expr(to, b)?));
                }
                StmtKind::IfThen { cond, then, els } => {
                    let term = expr_term(cond).ok_or_else(|| self.err("if_then condition must be a predicate call"))?;
                    if self.term_verdict(&term, b)? == Tri::True {
                        out.extend(self.stmts(then, b, alt)?);
                    } else if let Some(e) = els {
                        out.extend(self.stmts(e, b, alt)?);
                    }
                }
                StmtKind::GenList(alts) => {
                    let chosen = alts.get(alt).ok_or_else(|| self.err(format!("no consequent {alt}")))?;
                    out.extend(self.stmts(chosen, b, alt)?);
                }
                _ => out.push(self.stmt(s, b, alt)?),
            }
        }
        Ok(out)
    }

    fn stmt(&self, s: &Stmt, b: &Bindings, alt: usize) -> Result<Stmt, RewriteError> {
        let mapped = map_stmt(s, &mut |e| self.expr(e, b))?;
        // Nested bodies may contain splices; rebuild them from the template.
        let block = |t: &Block| -> Result<Block, RewriteError> { Ok(Block::new(self.stmts(&t.stmts, b, alt)?)) };
        let kind = match (&s.kind, mapped.kind) {
            (StmtKind::For { body, .. }, StmtKind::For { init, cond, step, .. }) => StmtKind::For {
                init,
                cond,
                step,
                body: block(body)?,
            },
            (StmtKind::If { then, els, .. }, StmtKind::If { cond, .. }) => StmtKind::If {
                cond,
                then: block(then)?,
                els: els.as_ref().map(block).transpose()?,
            },
            (StmtKind::Compound(ss), StmtKind::Compound(_)) => StmtKind::Compound(self.stmts(ss, b, alt)?),
            (StmtKind::Function { body, .. }, StmtKind::Function { ret, name, params, .. }) => StmtKind::Function {
                ret,
                name,
                params,
                body: block(body)?,
            },
            (_, k) => k,
        };
        Ok(Stmt {
            pragmas: s.pragmas.clone(),
            kind,
        })
    }
}

fn expr_term(e: &Expr) -> Option<Term> {
    match e {
        Expr::Call { name, args } => Some(Term {
            name: name.clone(),
            args: args.iter().map(|a| crate::rules::Arg::Expr(a.clone())).collect(),
        }),
        _ => None,
    }
}

/// Distinct non-leaf subexpressions in pre-order.
fn subexpressions(o: &Operand) -> Vec<Expr> {
    let mut roots: Vec<&Expr> = Vec::new();
    match o {
        Operand::Expr(e) => roots.push(e),
        Operand::Stmts(ss) => {
            for s in ss {
                for st in s.preorder() {
                    roots.extend(st.own_exprs());
                }
            }
        }
        _ => {}
    }
    let mut out: Vec<Expr> = Vec::new();
    for r in roots {
        for e in r.preorder() {
            let eligible = !e.is_leaf() && !matches!(e, Expr::Assign { .. } | Expr::DeclInit { .. });
            if eligible && !out.contains(e) {
                out.push(e.clone());
            }
        }
    }
    out
}

// ---- public entry points ---------------------------------------------------------

fn env<'a>(rule: &'a Rule, program: &'a Program, store: &'a AnnotationStore) -> Env<'a> {
    Env {
        rule,
        store,
        names: used_names(program, store),
    }
}

/// The selected match of `rule` at `pos`: the first (split, binder choice)
/// whose verdict is true, else the first that is unknown.
pub fn match_at(
    p: &Program,
    store: &AnnotationStore,
    rule: &Rule,
    pos: NodeId,
    alt: usize,
) -> Result<Option<Match>, RewriteError> {
    let table = NodeTable::build(p);
    match_in(&table, p, store, rule, pos, alt)
}

fn match_in(
    table: &NodeTable<'_>,
    p: &Program,
    store: &AnnotationStore,
    rule: &Rule,
    pos: NodeId,
    alt: usize,
) -> Result<Option<Match>, RewriteError> {
    let matches = pattern_matches(rule, table, pos);
    if matches.is_empty() {
        return Ok(None);
    }
    let env = env(rule, p, store);
    let mut unknown = None;
    for (b, span) in matches {
        let mut sols = Vec::new();
        env.conditions(&rule.condition, b, Tri::True, &mut sols)?;
        for (b, v) in sols {
            let m = Match {
                rule: rule.name.clone(),
                pos,
                alt,
                span,
                bindings: b,
                verdict: v,
            };
            if v == Tri::True {
                return Ok(Some(m));
            }
            if unknown.is_none() {
                unknown = Some(m);
            }
        }
    }
    Ok(unknown)
}

/// Candidates with verdict true or unknown, ordered by position, rule
/// order and consequent.
pub fn app_rules(p: &Program, store: &AnnotationStore, rules: &[Rule]) -> Result<Vec<(Candidate, Tri)>, RewriteError> {
    Ok(app_matches(p, store, rules)?
        .into_iter()
        .map(|m| {
            (
                Candidate {
                    rule: m.rule,
                    pos: m.pos,
                    alt: m.alt,
                },
                m.verdict,
            )
        })
        .collect())
}

pub fn app_matches(p: &Program, store: &AnnotationStore, rules: &[Rule]) -> Result<Vec<Match>, RewriteError> {
    let table = NodeTable::build(p);
    let mut out = Vec::new();
    for (pos, _) in table.iter() {
        for rule in rules {
            for alt in 0..rule.alternatives() {
                if let Some(m) = match_in(&table, p, store, rule, pos, alt)? {
                    out.push(m);
                }
            }
        }
    }
    Ok(out)
}

fn expr_type(e: &Expr, types: &BTreeMap<String, Type>) -> Type {
    let mut best = Type::Int;
    for x in e.preorder() {
        let t = match x {
            Expr::Float(_) => Type::Float,
            Expr::Ident(n) | Expr::Index { base: n, .. } | Expr::Call { name: n, .. } => {
                types.get(n).copied().unwrap_or(Type::Int)
            }
            _ => Type::Int,
        };
        best = match (best, t) {
            (Type::Double, _) | (_, Type::Double) => Type::Double,
            (Type::Float, _) | (_, Type::Float) => Type::Float,
            _ => Type::Int,
        };
    }
    best
}

fn declared_types(p: &Program) -> BTreeMap<String, Type> {
    let mut out = BTreeMap::new();
    for item in &p.items {
        for s in item.preorder() {
            match &s.kind {
                StmtKind::Decl { ty, declarators } => {
                    for d in declarators {
                        out.entry(d.name.clone()).or_insert(*ty);
                    }
                }
                StmtKind::Function { ret, name, params, .. } => {
                    out.entry(name.clone()).or_insert(*ret);
                    for prm in params {
                        out.entry(prm.name.clone()).or_insert(prm.ty);
                    }
                }
                _ => {}
            }
            for e in s.own_exprs() {
                for x in e.preorder() {
                    if let Expr::DeclInit { ty, name, .. } = x {
                        out.entry(name.clone()).or_insert(*ty);
                    }
                }
            }
        }
    }
    out
}

/// A fresh variable first assigned at the top level of generated code is
/// declared there, with the type of its initializer.
fn declare_fresh(stmts: &mut [Stmt], fresh: &[String], types: &BTreeMap<String, Type>) {
    for name in fresh {
        for s in stmts.iter_mut() {
            if let StmtKind::Assign {
                op: crate::ast::AssignOp::Set,
                target: Expr::Ident(n),
                value,
            } = &s.kind
            {
                if n == name {
                    let ty = expr_type(value, types);
                    s.kind = StmtKind::Decl {
                        ty,
                        declarators: vec![Declarator {
                            name: n.clone(),
                            extent: None,
                            init: Some(value.clone()),
                        }],
                    };
                    break;
                }
            }
        }
    }
}

fn subst_idents(e: &Expr, b: &Bindings) -> Expr {
    if let Expr::Ident(n) = e {
        if let Some(Binding::Expr(x)) = b.get(n) {
            return x.clone();
        }
    }
    let mut out = e.clone();
    for c in out.children_mut() {
        *c = subst_idents(c, b);
    }
    out
}

fn subst_name(n: &str, b: &Bindings) -> String {
    match b.get(n) {
        Some(Binding::Expr(Expr::Ident(x))) => x.clone(),
        _ => n.to_string(),
    }
}

fn subst_property(p: &StmlProperty, b: &Bindings) -> StmlProperty {
    let e = |x: &Expr| subst_idents(x, b);
    let loc = |l: &CLocation| match l {
        CLocation::Scalar(n) => CLocation::Scalar(subst_name(n, b)),
        CLocation::Elem(n, i) => CLocation::Elem(subst_name(n, b), e(i)),
    };
    let param = |q: &Parameter| Parameter::from_expr(e(&q.to_expr()));
    match p {
        StmlProperty::Appears(x) => StmlProperty::Appears(e(x)),
        StmlProperty::Pure(x) => StmlProperty::Pure(e(x)),
        StmlProperty::IsIdentity(x) => StmlProperty::IsIdentity(e(x)),
        StmlProperty::Commutative(n) => StmlProperty::Commutative(subst_name(n, b)),
        StmlProperty::Associative(n) => StmlProperty::Associative(subst_name(n, b)),
        StmlProperty::DistributesOver(g, f) => StmlProperty::DistributesOver(subst_name(g, b), subst_name(f, b)),
        StmlProperty::WriteSetEq(x, locs) => StmlProperty::WriteSetEq(e(x), locs.iter().map(loc).collect()),
        StmlProperty::Access(k, x, o) => StmlProperty::Access(*k, e(x), o.clone()),
        StmlProperty::SameLength(x, y) => StmlProperty::SameLength(e(x), e(y)),
        StmlProperty::OutputOf(x) => StmlProperty::OutputOf(e(x)),
        StmlProperty::IterationSpace(x, y) => StmlProperty::IterationSpace(param(x), param(y)),
        StmlProperty::IterationIndependent => StmlProperty::IterationIndependent,
    }
}

/// Applies `rule` at `pos`. Unknown verdicts require `force`.
pub fn trans(
    p: &Program,
    store: &AnnotationStore,
    rule: &Rule,
    pos: NodeId,
    alt: usize,
    force: bool,
) -> Result<Transformed, RewriteError> {
    let m = match_at(p, store, rule, pos, alt)?.ok_or_else(|| RewriteError::NotApplicable {
        rule: rule.name.clone(),
        pos,
    })?;
    if m.verdict == Tri::Unknown && !force {
        return Err(RewriteError::Unconfirmed {
            rule: rule.name.clone(),
            pos,
        });
    }
    apply_match(p, store, rule, &m)
}

/// Applies an already computed match.
pub fn apply_match(p: &Program, store: &AnnotationStore, rule: &Rule, m: &Match) -> Result<Transformed, RewriteError> {
    let env = env(rule, p, store);
    let table = NodeTable::build(p);
    let (program, region_start, old_end, new_len, old_text, new_text, generated) = match (&rule.generate, m.span) {
        (Template::Expr(g), Span::Expr(pos)) => {
            let new = env.expr(g, &m.bindings)?;
            let old = table.node(pos)?.as_expr().expect("expression span").clone();
            let program = crate::nodes::replace_at(p, pos, crate::nodes::Fragment::Expr(new.clone()))?;
            (
                program,
                pos.0,
                pos.0 + old.size(),
                new.size(),
                print_expr(&old),
                print_expr(&new),
                Vec::new(),
            )
        }
        (Template::Stmts(g), Span::Run { container, slot, len }) => {
            let mut new = env.stmts(g, &m.bindings, m.alt)?;
            let fresh: Vec<String> = rule
                .fresh_vars()
                .iter()
                .filter_map(|v| match m.bindings.get(*v) {
                    Some(Binding::Expr(Expr::Ident(n))) => Some(n.clone()),
                    _ => None,
                })
                .collect();
            declare_fresh(&mut new, &fresh, &declared_types(p));
            let seq = table
                .get(container)
                .and_then(|e| e.node.sequence())
                .ok_or(AstError::UnknownPosition(container))?;
            let old = &seq[slot..slot + len];
            let start = table
                .child_stmt_id(container, slot)
                .ok_or(AstError::UnknownPosition(container))?;
            let old_size: u32 = old.iter().map(Stmt::size).sum();
            let new_size: u32 = new.iter().map(Stmt::size).sum();
            let stripped: Vec<Stmt> = new.iter().map(Stmt::without_pragmas).collect();
            let program = replace_run(p, container, slot, len, stripped.clone())?;
            (
                program,
                start.0,
                start.0 + old_size,
                new_size,
                print_stmts(&old.iter().map(Stmt::without_pragmas).collect::<Vec<_>>()),
                print_stmts(&stripped),
                new,
            )
        }
        _ => {
            return Err(env.err("pattern and generate categories differ"));
        }
    };
    let delta = i64::from(new_len) - i64::from(old_end - region_start);
    let new_table = NodeTable::build(&program);

    // Statements of the generated region, in pre-order, with their new ids.
    let region: Vec<(NodeId, &Stmt)> = new_table
        .iter()
        .filter(|(id, _)| id.0 >= region_start && id.0 < region_start + new_len)
        .filter_map(|(id, e)| e.node.as_stmt().map(|s| (id, s)))
        .collect();
    let old_region: Vec<(NodeId, &Stmt)> = table
        .iter()
        .filter(|(id, _)| id.0 >= region_start && id.0 < old_end)
        .filter_map(|(id, e)| e.node.as_stmt().map(|s| (id, s)))
        .collect();
    let mut survivors: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let mut taken: BTreeSet<NodeId> = BTreeSet::new();
    for (old_id, s) in &old_region {
        let text = s.without_pragmas();
        if let Some((new_id, _)) = region.iter().find(|(id, n)| !taken.contains(id) && **n == text) {
            survivors.insert(*old_id, *new_id);
            taken.insert(*new_id);
        }
    }
    let map = |id: NodeId| -> Option<NodeId> {
        if id.0 < region_start {
            Some(id)
        } else if id.0 >= old_end {
            Some(NodeId((i64::from(id.0) + delta) as u32))
        } else {
            survivors.get(&id).copied()
        }
    };
    let (mut new_store, warnings) = store.remap(&map);

    // Asserted properties: inline pragmas of generated statements, and the
    // assert section on the first generated statement (or the statement
    // enclosing a rewritten expression).
    let mut gen_pre: Vec<&Stmt> = Vec::new();
    for s in &generated {
        gen_pre.extend(s.preorder());
    }
    for ((id, _), s) in region.iter().zip(gen_pre.iter()) {
        for text in &s.pragmas {
            let anns = parse_pragma(text, 0).map_err(|e| env.err(e.to_string()))?;
            for a in anns {
                let a = match a {
                    Ann::Stml(prop) => Ann::Stml(subst_property(&prop, &m.bindings)),
                    other => other,
                };
                new_store.add(*id, a, Provenance::RuleAsserted);
            }
        }
    }
    if !rule.asserts.is_empty() {
        let anchor = match m.span {
            Span::Run { .. } => region.first().map(|(id, _)| *id),
            Span::Expr(pos) => enclosing_stmt(&new_table, pos),
        };
        if let Some(anchor) = anchor {
            for prop in &rule.asserts {
                new_store.add(
                    anchor,
                    Ann::Stml(subst_property(prop, &m.bindings)),
                    Provenance::RuleAsserted,
                );
            }
        }
    }
    Ok(Transformed {
        program,
        store: new_store,
        warnings,
        triplet: Triplet {
            rule: rule.name.clone(),
            pos: m.pos,
            old_fragment: old_text,
            new_fragment: new_text,
        },
    })
}

fn enclosing_stmt(table: &NodeTable<'_>, mut id: NodeId) -> Option<NodeId> {
    loop {
        let e = table.get(id)?;
        if matches!(e.node, NodeRef::Stmt(_)) {
            return Some(id);
        }
        id = e.parent?;
    }
}

/// Instantiates the rule's pattern with a match's bindings (used to check
/// that a match reproduces the matched fragment).
pub fn instantiate_pattern(
    rule: &Rule,
    program: &Program,
    store: &AnnotationStore,
    b: &Bindings,
) -> Result<crate::nodes::Fragment, RewriteError> {
    let env = env(rule, program, store);
    Ok(match &rule.pattern {
        Template::Expr(e) => crate::nodes::Fragment::Expr(env.expr(e, b)?),
        Template::Stmts(ss) => crate::nodes::Fragment::Stmts(env.stmts(ss, b, 0)?),
    })
}
