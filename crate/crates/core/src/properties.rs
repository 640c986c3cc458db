//! Syntactic read/write sets, loop offsets and the condition predicates,
//! evaluated in three-valued logic.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{Access, AnnotationStore, CLocation, StmlProperty};
use crate::ast::{AssignOp, BinOp, Expr, Stmt, StmtKind, UnOp};
use crate::printer::print_expr;

/// Kleene three-valued truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tri {
    True,
    False,
    Unknown,
}

impl Tri {
    pub fn from_bool(b: bool) -> Tri {
        if b {
            Tri::True
        } else {
            Tri::False
        }
    }

    pub fn and(self, other: Tri) -> Tri {
        match (self, other) {
            (Tri::False, _) | (_, Tri::False) => Tri::False,
            (Tri::True, Tri::True) => Tri::True,
            _ => Tri::Unknown,
        }
    }

    pub fn or(self, other: Tri) -> Tri {
        match (self, other) {
            (Tri::True, _) | (_, Tri::True) => Tri::True,
            (Tri::False, Tri::False) => Tri::False,
            _ => Tri::Unknown,
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(self) -> Tri {
        match self {
            Tri::True => Tri::False,
            Tri::False => Tri::True,
            Tri::Unknown => Tri::Unknown,
        }
    }

    pub fn all(items: impl IntoIterator<Item = Tri>) -> Tri {
        items.into_iter().fold(Tri::True, Tri::and)
    }
}

impl fmt::Display for Tri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tri::True => "true",
            Tri::False => "false",
            Tri::Unknown => "unknown",
        })
    }
}

/// A symbolic memory location. A `Var` naming an array stands for the whole
/// array.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Loc {
    Var(String),
    Elem(String, Expr),
}

impl Loc {
    pub fn name(&self) -> &str {
        match self {
            Loc::Var(n) | Loc::Elem(n, _) => n,
        }
    }

    pub fn to_expr(&self) -> Expr {
        match self {
            Loc::Var(n) => Expr::ident(n.clone()),
            Loc::Elem(n, i) => Expr::index(n.clone(), i.clone()),
        }
    }
}

impl fmt::Display for Loc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_expr(&self.to_expr()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LocationSet {
    pub locs: BTreeSet<Loc>,
    /// Set when a call with unknown effects occurs; membership is then never
    /// denied.
    pub unknown: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Overlap {
    Yes,
    No,
    Maybe,
}

impl LocationSet {
    pub fn new() -> LocationSet {
        LocationSet::default()
    }

    pub fn of(locs: impl IntoIterator<Item = Loc>) -> LocationSet {
        LocationSet {
            locs: locs.into_iter().collect(),
            unknown: false,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.locs.is_empty() && !self.unknown
    }

    pub fn insert(&mut self, l: Loc) {
        self.locs.insert(l);
    }

    pub fn extend(&mut self, other: LocationSet) {
        self.locs.extend(other.locs);
        self.unknown |= other.unknown;
    }

    pub fn scalars(&self) -> impl Iterator<Item = &str> {
        self.locs.iter().filter_map(|l| match l {
            Loc::Var(n) => Some(n.as_str()),
            _ => None,
        })
    }

    pub fn elems(&self) -> impl Iterator<Item = (&str, &Expr)> {
        self.locs.iter().filter_map(|l| match l {
            Loc::Elem(n, i) => Some((n.as_str(), i)),
            _ => None,
        })
    }

    /// Membership of a concrete location: an array element is given by its
    /// name and index value, with `eval` evaluating symbolic indices in the
    /// state the set describes.
    pub fn may_contain(&self, name: &str, index: Option<i64>, eval: &dyn Fn(&Expr) -> Option<i64>) -> Tri {
        if self.unknown {
            return Tri::Unknown;
        }
        let mut maybe = false;
        for l in &self.locs {
            match (l, index) {
                (Loc::Var(n), _) if n == name => return Tri::True,
                (Loc::Elem(n, e), Some(k)) if n == name => match eval(e) {
                    Some(v) if v == k => return Tri::True,
                    Some(_) => {}
                    None => maybe = true,
                },
                _ => {}
            }
        }
        if maybe {
            Tri::Unknown
        } else {
            Tri::False
        }
    }

    /// Drops elements of arrays indexed through an expression containing
    /// `through`.
    pub fn without_arrays_through(&self, through: &Expr) -> LocationSet {
        LocationSet {
            locs: self
                .locs
                .iter()
                .filter(|l| !matches!(l, Loc::Elem(_, i) if i.contains(through)))
                .cloned()
                .collect(),
            unknown: self.unknown,
        }
    }
}

impl fmt::Display for LocationSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<String> = self.locs.iter().map(ToString::to_string).collect();
        if self.unknown {
            parts.push("?".into());
        }
        write!(f, "{{{}}}", parts.join(", "))
    }
}

/// `i++` and `i--` index the old value; `++i` indexes `i+1`.
pub fn normalize_index(e: &Expr) -> Expr {
    match e {
        Expr::Unary {
            op: UnOp::PostInc | UnOp::PostDec,
            operand,
        } => (**operand).clone(),
        Expr::Unary {
            op: UnOp::PreInc,
            operand,
        } => Expr::binary(BinOp::Add, (**operand).clone(), Expr::Int(1)),
        Expr::Unary {
            op: UnOp::PreDec,
            operand,
        } => Expr::binary(BinOp::Sub, (**operand).clone(), Expr::Int(1)),
        other => other.clone(),
    }
}

fn int_lit(e: &Expr) -> Option<i64> {
    match e {
        Expr::Int(v) => Some(*v),
        Expr::Unary { op: UnOp::Neg, operand } => match **operand {
            Expr::Int(v) => Some(-v),
            _ => None,
        },
        _ => None,
    }
}

/// `e` as `var + k` for a variable and integer constant.
pub fn affine(e: &Expr) -> Option<(Option<&str>, i64)> {
    if let Some(k) = int_lit(e) {
        return Some((None, k));
    }
    match e {
        Expr::Ident(n) => Some((Some(n), 0)),
        Expr::Binary { op, lhs, rhs } => match (op, &**lhs, &**rhs) {
            (BinOp::Add, Expr::Ident(n), k) => int_lit(k).map(|k| (Some(n.as_str()), k)),
            (BinOp::Add, k, Expr::Ident(n)) => int_lit(k).map(|k| (Some(n.as_str()), k)),
            (BinOp::Sub, Expr::Ident(n), k) => int_lit(k).map(|k| (Some(n.as_str()), -k)),
            _ => None,
        },
        _ => None,
    }
}

/// Offset of `e` from the loop variable `l`, when `e` is `l + k`.
pub fn offset_from(e: &Expr, l: &str) -> Option<i64> {
    match affine(e)? {
        (Some(v), k) if v == l => Some(k),
        _ => None,
    }
}

fn overlap(a: &Loc, b: &Loc, mutated: &BTreeSet<String>) -> Overlap {
    match (a, b) {
        (Loc::Var(x), Loc::Var(y)) => {
            if x == y {
                Overlap::Yes
            } else {
                Overlap::No
            }
        }
        (Loc::Var(x), Loc::Elem(y, _)) | (Loc::Elem(y, _), Loc::Var(x)) => {
            if x == y {
                Overlap::Yes
            } else {
                Overlap::No
            }
        }
        (Loc::Elem(x, i), Loc::Elem(y, j)) => {
            if x != y {
                return Overlap::No;
            }
            if i == j {
                return Overlap::Yes;
            }
            match (affine(i), affine(j)) {
                (Some((None, p)), Some((None, q))) if p != q => Overlap::No,
                (Some((Some(u), p)), Some((Some(v), q))) if u == v && p != q && !mutated.contains(u) => Overlap::No,
                _ => Overlap::Maybe,
            }
        }
    }
}

/// Whether two location sets are disjoint. Index variables written by
/// either side are not assumed stable.
pub fn disjoint(a: &LocationSet, b: &LocationSet, mutated: &BTreeSet<String>) -> Tri {
    if (a.unknown && !b.is_empty()) || (b.unknown && !a.is_empty()) {
        return Tri::Unknown;
    }
    let mut maybe = false;
    for x in &a.locs {
        for y in &b.locs {
            match overlap(x, y, mutated) {
                Overlap::Yes => return Tri::False,
                Overlap::Maybe => maybe = true,
                Overlap::No => {}
            }
        }
    }
    if maybe {
        Tri::Unknown
    } else {
        Tri::True
    }
}

/// Function names whose calls are treated as pure without annotation.
pub const PURE_BUILTINS: &[&str] = &["sqrt", "fabs", "abs", "sin", "cos", "exp", "log", "pow", "min", "max"];

/// Read/write set computation against the annotations in force.
#[derive(Clone, Copy)]
pub struct Effects<'a> {
    pub store: &'a AnnotationStore,
}

enum CallEffect<'a> {
    Pure,
    Writes(&'a [CLocation]),
    Unknown,
}

fn lvalue_loc(e: &Expr) -> Option<Loc> {
    match e {
        Expr::Ident(n) => Some(Loc::Var(n.clone())),
        Expr::Index { base, index } => Some(Loc::Elem(base.clone(), normalize_index(index))),
        _ => None,
    }
}

impl<'a> Effects<'a> {
    pub fn new(store: &'a AnnotationStore) -> Effects<'a> {
        Effects { store }
    }

    fn call_effect(&self, name: &str) -> CallEffect<'a> {
        if self.store.is_pure_name(name) {
            CallEffect::Pure
        } else if let Some(locs) = self.store.write_set_of(name) {
            CallEffect::Writes(locs)
        } else if PURE_BUILTINS.contains(&name) {
            CallEffect::Pure
        } else {
            CallEffect::Unknown
        }
    }

    pub fn expr_writes(&self, e: &Expr) -> LocationSet {
        let mut s = LocationSet::new();
        self.ew(e, &mut s);
        s
    }

    pub fn expr_reads(&self, e: &Expr) -> LocationSet {
        let mut s = LocationSet::new();
        self.er(e, &mut s);
        s
    }

    fn index_writes(&self, target: &Expr, out: &mut LocationSet) {
        if let Expr::Index { index, .. } = target {
            self.ew(index, out);
        }
    }

    fn index_reads(&self, target: &Expr, out: &mut LocationSet) {
        if let Expr::Index { index, .. } = target {
            self.er(index, out);
        }
    }

    fn ew(&self, e: &Expr, out: &mut LocationSet) {
        match e {
            Expr::Assign { target, value, .. } => {
                if let Some(l) = lvalue_loc(target) {
                    out.insert(l);
                }
                self.index_writes(target, out);
                self.ew(value, out);
            }
            Expr::DeclInit { name, value, .. } => {
                out.insert(Loc::Var(name.clone()));
                self.ew(value, out);
            }
            Expr::Unary { op, operand } if op.is_update() => {
                if let Some(l) = lvalue_loc(operand) {
                    out.insert(l);
                }
                self.index_writes(operand, out);
            }
            Expr::Call { name, args } => {
                match self.call_effect(name) {
                    CallEffect::Pure => {}
                    CallEffect::Writes(locs) => {
                        for l in locs {
                            out.insert(match l {
                                CLocation::Scalar(n) => Loc::Var(n.clone()),
                                CLocation::Elem(n, i) => Loc::Elem(n.clone(), normalize_index(i)),
                            });
                        }
                    }
                    CallEffect::Unknown => out.unknown = true,
                }
                for a in args {
                    self.ew(a, out);
                }
            }
            other => {
                for c in other.children() {
                    self.ew(c, out);
                }
            }
        }
    }

    fn er(&self, e: &Expr, out: &mut LocationSet) {
        match e {
            Expr::Ident(n) => out.insert(Loc::Var(n.clone())),
            Expr::Index { base, index } => {
                out.insert(Loc::Elem(base.clone(), normalize_index(index)));
                self.er(index, out);
            }
            Expr::Assign { op, target, value } => {
                if *op != AssignOp::Set {
                    self.er(target, out);
                } else {
                    self.index_reads(target, out);
                }
                self.er(value, out);
            }
            Expr::Call { name, args } => {
                if matches!(self.call_effect(name), CallEffect::Unknown) {
                    out.unknown = true;
                }
                for a in args {
                    self.er(a, out);
                }
            }
            other => {
                for c in other.children() {
                    self.er(c, out);
                }
            }
        }
    }

    pub fn stmt_writes(&self, s: &Stmt) -> LocationSet {
        let mut out = LocationSet::new();
        self.sw(s, &mut out);
        out
    }

    pub fn stmt_reads(&self, s: &Stmt) -> LocationSet {
        let mut out = LocationSet::new();
        self.sr(s, &mut out);
        out
    }

    pub fn stmts_writes(&self, ss: &[Stmt]) -> LocationSet {
        let mut out = LocationSet::new();
        for s in ss {
            self.sw(s, &mut out);
        }
        out
    }

    pub fn stmts_reads(&self, ss: &[Stmt]) -> LocationSet {
        let mut out = LocationSet::new();
        for s in ss {
            self.sr(s, &mut out);
        }
        out
    }

    fn sw(&self, s: &Stmt, out: &mut LocationSet) {
        match &s.kind {
            StmtKind::Decl { declarators, .. } => {
                for d in declarators {
                    if let Some(e) = &d.extent {
                        self.ew(e, out);
                    }
                    if let Some(init) = &d.init {
                        out.insert(Loc::Var(d.name.clone()));
                        self.ew(init, out);
                    }
                }
            }
            StmtKind::Assign { target, value, .. } => {
                if let Some(l) = lvalue_loc(target) {
                    out.insert(l);
                }
                self.index_writes(target, out);
                self.ew(value, out);
            }
            _ => {
                for e in s.own_exprs() {
                    self.ew(e, out);
                }
                for b in s.child_blocks() {
                    for c in b {
                        self.sw(c, out);
                    }
                }
            }
        }
    }

    fn sr(&self, s: &Stmt, out: &mut LocationSet) {
        match &s.kind {
            StmtKind::Assign { op, target, value } => {
                if *op != AssignOp::Set {
                    self.er(target, out);
                } else {
                    self.index_reads(target, out);
                }
                self.er(value, out);
            }
            _ => {
                for e in s.own_exprs() {
                    self.er(e, out);
                }
                for b in s.child_blocks() {
                    for c in b {
                        self.sr(c, out);
                    }
                }
            }
        }
    }
}

/// Syntactic write set of an expression with no annotations.
pub fn write_set(e: &Expr) -> LocationSet {
    Effects::new(&AnnotationStore::new()).expr_writes(e)
}

/// Syntactic read set of an expression with no annotations.
pub fn read_set(e: &Expr) -> LocationSet {
    Effects::new(&AnnotationStore::new()).expr_reads(e)
}

/// Index variable, start, and the statement body of a loop of the shape
/// `for (l = e; l rel e; l++)`.
pub struct CanonicalLoop<'a> {
    pub var: String,
    pub init: &'a Expr,
    pub cond: &'a Expr,
    pub body: &'a [Stmt],
}

fn unit_step(step: &Expr, var: &str) -> bool {
    let is_var = |e: &Expr| matches!(e, Expr::Ident(n) if n == var);
    match step {
        Expr::Unary {
            op: UnOp::PostInc | UnOp::PreInc,
            operand,
        } => is_var(operand),
        Expr::Assign {
            op: AssignOp::Add,
            target,
            value,
        } => is_var(target) && matches!(**value, Expr::Int(1)),
        Expr::Assign {
            op: AssignOp::Set,
            target,
            value,
        } => {
            is_var(target)
                && matches!(&**value, Expr::Binary { op: BinOp::Add, lhs, rhs }
                    if (is_var(lhs) && matches!(**rhs, Expr::Int(1)))
                        || (is_var(rhs) && matches!(**lhs, Expr::Int(1))))
        }
        _ => false,
    }
}

pub fn canonical_loop(s: &Stmt) -> Option<CanonicalLoop<'_>> {
    let StmtKind::For {
        init: Some(init),
        cond: Some(cond),
        step: Some(step),
        body,
    } = &s.kind
    else {
        return None;
    };
    let var = match init {
        Expr::DeclInit { name, .. } => name.clone(),
        Expr::Assign {
            op: AssignOp::Set,
            target,
            ..
        } => match &**target {
            Expr::Ident(n) => n.clone(),
            _ => return None,
        },
        _ => return None,
    };
    let Expr::Binary { op, lhs, .. } = cond else {
        return None;
    };
    if !matches!(op, BinOp::Lt | BinOp::Le | BinOp::Ne) || !matches!(&**lhs, Expr::Ident(n) if *n == var) {
        return None;
    }
    if !unit_step(step, &var) {
        return None;
    }
    Some(CanonicalLoop {
        var,
        init,
        cond,
        body: &body.stmts,
    })
}

/// Offsets `k` such that `arr[l+k]` is accessed in the loop body under
/// `mode`. `None` when the loop is not canonical, when the body writes the
/// index, has unknown effects, or indexes `arr` other than by `l+k`.
pub fn loop_offsets(loop_stmt: &Stmt, arr: &str, mode: Access, store: &AnnotationStore) -> Option<Vec<i64>> {
    let cl = canonical_loop(loop_stmt)?;
    let fx = Effects::new(store);
    let writes = fx.stmts_writes(cl.body);
    if writes.unknown || writes.scalars().any(|n| n == cl.var) {
        return None;
    }
    let reads = fx.stmts_reads(cl.body);
    if reads.unknown {
        return None;
    }
    let mut out = BTreeSet::new();
    let mut sets = Vec::new();
    if mode.reads() {
        sets.push(&reads);
    }
    if mode.writes() {
        sets.push(&writes);
    }
    // Any access not of the form l+k makes the answer undefined, in either
    // mode.
    for set in [&reads, &writes] {
        for l in &set.locs {
            match l {
                Loc::Var(n) if n == arr => return None,
                Loc::Elem(n, i) if n == arr => {
                    offset_from(i, &cl.var)?;
                }
                _ => {}
            }
        }
    }
    for set in sets {
        for (n, i) in set.elems() {
            if n == arr {
                out.insert(offset_from(i, &cl.var)?);
            }
        }
    }
    Some(out.into_iter().collect())
}

// ---- predicates -------------------------------------------------------------

/// A predicate argument after metavariable substitution.
#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Expr(Expr),
    Stmts(Vec<Stmt>),
    /// `{a, b, ...}` or `(s1; s2)`: the union of the members.
    Set(Vec<Operand>),
    Locs(LocationSet),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PredicateError {
    #[error("unknown predicate `{0}`")]
    Unknown(String),
    #[error("predicate `{name}` expects {expected} argument(s), got {found}")]
    Arity {
        name: String,
        expected: &'static str,
        found: usize,
    },
    #[error("predicate `{name}`: {message}")]
    Argument { name: String, message: String },
}

/// Predicate names understood by [`eval_predicate`].
pub const PREDICATES: &[&str] = &[
    "no_write",
    "no_write_except_arrays",
    "no_write_prev_arrays",
    "no_read",
    "pure",
    "writes",
    "distributes_over",
    "occurs_in",
    "fresh_var",
    "is_identity",
    "is_assignment",
    "is_subseteq",
];

pub struct PredicateCtx<'a> {
    pub store: &'a AnnotationStore,
    /// Every identifier of the program (for `fresh_var`).
    pub names: &'a BTreeSet<String>,
}

impl PredicateCtx<'_> {
    fn fx(&self) -> Effects<'_> {
        Effects::new(self.store)
    }

    /// Locations an operand reads. A bare lvalue reads itself.
    pub fn reads(&self, o: &Operand) -> LocationSet {
        match o {
            Operand::Expr(e) => self.fx().expr_reads(e),
            Operand::Stmts(ss) => self.fx().stmts_reads(ss),
            Operand::Set(items) => {
                let mut out = LocationSet::new();
                for i in items {
                    out.extend(self.reads(i));
                }
                out
            }
            Operand::Locs(l) => l.clone(),
        }
    }

    /// Locations an operand writes. A bare lvalue stands for its own
    /// location, so that `no_read(s, l)` asks whether `s` reads `l`.
    pub fn writes(&self, o: &Operand) -> LocationSet {
        match o {
            Operand::Expr(e) => match lvalue_loc(e) {
                Some(l) => {
                    let mut s = LocationSet::of([l]);
                    if let Expr::Index { index, .. } = e {
                        s.extend(self.fx().expr_writes(index));
                    }
                    s
                }
                None => self.fx().expr_writes(e),
            },
            Operand::Stmts(ss) => self.fx().stmts_writes(ss),
            Operand::Set(items) => {
                let mut out = LocationSet::new();
                for i in items {
                    out.extend(self.writes(i));
                }
                out
            }
            Operand::Locs(l) => l.clone(),
        }
    }

    /// Effects proper (no lvalue convention), for `pure` and `writes(..)`.
    pub fn effects(&self, o: &Operand) -> LocationSet {
        match o {
            Operand::Expr(e) => self.fx().expr_writes(e),
            Operand::Stmts(ss) => self.fx().stmts_writes(ss),
            Operand::Set(items) => {
                let mut out = LocationSet::new();
                for i in items {
                    out.extend(self.effects(i));
                }
                out
            }
            Operand::Locs(l) => l.clone(),
        }
    }

    fn no_write(&self, x: &Operand, y: &Operand) -> Tri {
        let w = self.writes(x);
        let r = self.reads(y);
        let mutated = mutated_names(&w, &self.effects(y));
        disjoint(&w, &r, &mutated)
    }
}

fn mutated_names(a: &LocationSet, b: &LocationSet) -> BTreeSet<String> {
    a.scalars().chain(b.scalars()).map(str::to_string).collect()
}

fn operator_name(o: &Operand) -> Option<String> {
    match o {
        Operand::Expr(Expr::Ident(n)) => Some(n.clone()),
        _ => None,
    }
}

fn builtin_distributes(g: BinOp, f: BinOp) -> bool {
    matches!((g, f), (BinOp::Mul, BinOp::Add) | (BinOp::Mul, BinOp::Sub))
}

fn arity(name: &str, args: &[Operand], n: usize, expected: &'static str) -> Result<(), PredicateError> {
    if args.len() == n {
        Ok(())
    } else {
        Err(PredicateError::Arity {
            name: name.into(),
            expected,
            found: args.len(),
        })
    }
}

fn single_expr<'o>(name: &str, o: &'o Operand) -> Result<&'o Expr, PredicateError> {
    match o {
        Operand::Expr(e) => Ok(e),
        _ => Err(PredicateError::Argument {
            name: name.into(),
            message: "expected an expression".into(),
        }),
    }
}

fn occurs(needle: &Expr, hay: &Operand) -> bool {
    match hay {
        Operand::Expr(e) => e.contains(needle),
        Operand::Stmts(ss) => ss.iter().flat_map(|s| s.all_exprs()).any(|e| e == needle),
        Operand::Set(items) => items.iter().any(|i| occurs(needle, i)),
        Operand::Locs(l) => l.locs.iter().any(|x| x.to_expr().contains(needle)),
    }
}

/// For fusion of `for(..){s1} for(..){s2}` called as
/// `no_write_prev_arrays(s2, s1, l)`: every array indexed through `l` in
/// both operands, where at least one of the two accesses writes, must have
/// `x`'s offset at most `y`'s offset. Iteration `i` of the fused loop runs
/// `y(i)` then `x(i)`; an access of `x(j)` meeting one of `y(i)` with
/// `i > j` would be reordered.
fn no_write_prev_arrays(ctx: &PredicateCtx<'_>, x: &Operand, y: &Operand, l: &Expr) -> Tri {
    let Expr::Ident(var) = l else {
        return Tri::Unknown;
    };
    let (xr, xw) = (ctx.reads(x), ctx.effects(x));
    let (yr, yw) = (ctx.reads(y), ctx.effects(y));
    if xr.unknown || xw.unknown || yr.unknown || yw.unknown {
        return Tri::Unknown;
    }
    // (array, offset or None when not affine in l, is_write)
    let accesses = |r: &LocationSet, w: &LocationSet| -> Vec<(String, Option<i64>, bool)> {
        let mut v = Vec::new();
        for (set, is_w) in [(r, false), (w, true)] {
            for l in &set.locs {
                match l {
                    Loc::Elem(a, i) if i.contains(&Expr::ident(var.clone())) => {
                        v.push((a.clone(), offset_from(i, var), is_w))
                    }
                    _ => {}
                }
            }
        }
        v
    };
    let xa = accesses(&xr, &xw);
    let ya = accesses(&yr, &yw);
    let mut verdict = Tri::True;
    for (a, ox, wx) in &xa {
        for (b, oy, wy) in &ya {
            if a != b || !(*wx || *wy) {
                continue;
            }
            match (ox, oy) {
                (Some(p), Some(q)) => {
                    if p > q {
                        return Tri::False;
                    }
                }
                _ => verdict = Tri::Unknown,
            }
        }
    }
    verdict
}

fn is_subseteq(ctx: &PredicateCtx<'_>, a: &Operand, b: &Operand) -> Tri {
    let sa = match a {
        Operand::Locs(l) => l.clone(),
        other => ctx.writes(other),
    };
    let sb = match b {
        Operand::Locs(l) => l.clone(),
        other => ctx.writes(other),
    };
    if sa.unknown {
        return Tri::Unknown;
    }
    let none = BTreeSet::new();
    let mut verdict = Tri::True;
    for x in &sa.locs {
        if sb.locs.contains(x) {
            continue;
        }
        if sb.unknown || sb.locs.iter().any(|y| overlap(x, y, &none) != Overlap::No) {
            verdict = Tri::Unknown;
        } else {
            return Tri::False;
        }
    }
    verdict
}

fn is_identity_for(e: &Expr, op: &str) -> Option<bool> {
    let v = match e {
        Expr::Int(v) => *v as f64,
        Expr::Float(t) => t.trim_end_matches(['f', 'F']).parse().ok()?,
        _ => return None,
    };
    match op {
        "+" | "-" => Some(v == 0.0),
        "*" | "/" => Some(v == 1.0),
        _ => None,
    }
}

/// Evaluates a condition predicate. `True` and `False` are only returned
/// when syntax or annotations decide the question.
pub fn eval_predicate(name: &str, args: &[Operand], ctx: &PredicateCtx<'_>) -> Result<Tri, PredicateError> {
    Ok(match name {
        "no_write" => {
            arity(name, args, 2, "2")?;
            ctx.no_write(&args[0], &args[1])
        }
        "no_read" => {
            arity(name, args, 2, "2")?;
            let r = ctx.reads(&args[0]);
            let w = ctx.writes(&args[1]);
            let mutated = mutated_names(&w, &ctx.effects(&args[0]));
            disjoint(&r, &w, &mutated)
        }
        "no_write_except_arrays" => {
            arity(name, args, 3, "3")?;
            let through = single_expr(name, &args[2])?;
            let w = ctx.writes(&args[0]).without_arrays_through(through);
            let r = ctx.reads(&args[1]).without_arrays_through(through);
            let mutated = mutated_names(&w, &ctx.effects(&args[1]));
            disjoint(&w, &r, &mutated)
        }
        "no_write_prev_arrays" => {
            arity(name, args, 3, "3")?;
            let l = single_expr(name, &args[2])?;
            no_write_prev_arrays(ctx, &args[0], &args[1], l)
        }
        "pure" => {
            arity(name, args, 1, "1")?;
            let w = ctx.effects(&args[0]);
            if w.unknown {
                Tri::Unknown
            } else {
                Tri::from_bool(w.locs.is_empty())
            }
        }
        "writes" => {
            // As a condition on its own: true when something is written.
            arity(name, args, 1, "1")?;
            let w = ctx.effects(&args[0]);
            if !w.locs.is_empty() {
                Tri::True
            } else if w.unknown {
                Tri::Unknown
            } else {
                Tri::False
            }
        }
        "distributes_over" => {
            arity(name, args, 2, "2")?;
            let (Some(g), Some(f)) = (operator_name(&args[0]), operator_name(&args[1])) else {
                return Err(PredicateError::Argument {
                    name: name.into(),
                    message: "expected two operators".into(),
                });
            };
            match (BinOp::from_symbol(&g), BinOp::from_symbol(&f)) {
                (Some(gb), Some(fb)) => Tri::from_bool(builtin_distributes(gb, fb)),
                _ if ctx.store.distributes(&g, &f) => Tri::True,
                _ => Tri::Unknown,
            }
        }
        "occurs_in" => {
            arity(name, args, 2, "2")?;
            let e = single_expr(name, &args[0])?;
            Tri::from_bool(occurs(e, &args[1]))
        }
        "fresh_var" => {
            arity(name, args, 1, "1")?;
            match single_expr(name, &args[0])? {
                Expr::Ident(n) => Tri::from_bool(!ctx.names.contains(n)),
                _ => Tri::False,
            }
        }
        "is_identity" => match args {
            [e] => {
                let e = single_expr(name, e)?;
                if ctx.store.is_identity(e) {
                    Tri::True
                } else {
                    Tri::Unknown
                }
            }
            [e, op] => {
                let e = single_expr(name, e)?;
                let op = operator_name(op).unwrap_or_default();
                match is_identity_for(e, &op) {
                    Some(b) => Tri::from_bool(b),
                    None if ctx.store.is_identity(e) => Tri::True,
                    None => Tri::Unknown,
                }
            }
            _ => {
                return Err(PredicateError::Arity {
                    name: name.into(),
                    expected: "1 or 2",
                    found: args.len(),
                })
            }
        },
        "is_assignment" => {
            arity(name, args, 1, "1")?;
            Tri::from_bool(match &args[0] {
                Operand::Expr(e) => matches!(e, Expr::Assign { .. }),
                Operand::Stmts(ss) => {
                    matches!(
                        ss.as_slice(),
                        [Stmt {
                            kind: StmtKind::Assign { .. },
                            ..
                        }]
                    )
                }
                _ => false,
            })
        }
        "is_subseteq" => {
            arity(name, args, 2, "2")?;
            is_subseteq(ctx, &args[0], &args[1])
        }
        other => return Err(PredicateError::Unknown(other.to_string())),
    })
}

/// Whether the loop at hand is declared free of loop-carried dependencies.
pub fn declared_independent(store: &AnnotationStore, pos: crate::ast::NodeId) -> bool {
    store.has_at(pos, &StmlProperty::IterationIndependent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{Ann, Provenance};
    use crate::parser::{parse, parse_expr};

    fn e(s: &str) -> Expr {
        parse_expr(s).unwrap()
    }

    fn locs(items: &[&str]) -> BTreeSet<Loc> {
        items
            .iter()
            .map(|s| match e(s) {
                Expr::Ident(n) => Loc::Var(n),
                Expr::Index { base, index } => Loc::Elem(base, *index),
                _ => panic!(),
            })
            .collect()
    }

    #[test]
    fn write_sets() {
        assert_eq!(write_set(&e("c = a + 3")).locs, locs(&["c"]));
        assert_eq!(write_set(&e("c[i++] = a + 3")).locs, locs(&["c[i]", "i"]));
        assert!(write_set(&e("a + 3")).is_empty());
    }

    #[test]
    fn read_sets() {
        assert_eq!(read_set(&e("a += c[i]")).locs, locs(&["a", "c[i]", "i"]));
        assert_eq!(read_set(&e("c[i] = i * 2")).locs, locs(&["i"]));
        assert!(read_set(&e("f(x)")).unknown);
        let mut store = AnnotationStore::new();
        store.add(
            crate::ast::NodeId(1),
            Ann::Stml(StmlProperty::Pure(Expr::ident("f"))),
            Provenance::User,
        );
        let fx = Effects::new(&store);
        assert_eq!(fx.expr_reads(&e("f(x)")), LocationSet::of(locs(&["x"])));
    }

    #[test]
    fn offsets() {
        let store = AnnotationStore::new();
        let p = parse("for (i = 1; i < N; i++) { c[i-1] = i; c[i] = c[i-1] * 2; }").unwrap();
        assert_eq!(
            loop_offsets(&p.items[0], "c", Access::Writes, &store),
            Some(vec![-1, 0])
        );
        let p = parse("for (i = 0; i < N; i++) a += c[i-1] + c[i+1] - 2 * c[i];").unwrap();
        assert_eq!(
            loop_offsets(&p.items[0], "c", Access::Reads, &store),
            Some(vec![-1, 0, 1])
        );
        let p = parse("for (i = 0; i < N; i++) c[j] = 0;").unwrap();
        assert_eq!(loop_offsets(&p.items[0], "c", Access::Writes, &store), None);
    }

    #[test]
    fn kleene_laws() {
        use Tri::*;
        for a in [True, False, Unknown] {
            for b in [True, False, Unknown] {
                assert_eq!(a.and(b).not(), a.not().or(b.not()));
                assert_eq!(a.and(b), b.and(a));
            }
        }
        assert_eq!(Unknown.and(False), False);
        assert_eq!(Unknown.and(True), Unknown);
    }

    fn ctx_eval(name: &str, args: &[Operand], store: &AnnotationStore) -> Tri {
        let names = BTreeSet::new();
        eval_predicate(name, args, &PredicateCtx { store, names: &names }).unwrap()
    }

    fn stmts(src: &str) -> Operand {
        Operand::Stmts(parse(src).unwrap().items)
    }

    #[test]
    fn basic_predicates() {
        let store = AnnotationStore::new();
        assert_eq!(ctx_eval("pure", &[Operand::Expr(e("a * v[i]"))], &store), Tri::True);
        assert_eq!(
            ctx_eval("no_write", &[stmts("c[i] = a * v[i];"), stmts("x = y;")], &store),
            Tri::True
        );
        assert_eq!(
            ctx_eval("no_write", &[stmts("f();"), stmts("x = y;")], &store),
            Tri::Unknown
        );
        assert_eq!(
            ctx_eval(
                "distributes_over",
                &[Operand::Expr(Expr::ident("*")), Operand::Expr(Expr::ident("+"))],
                &store
            ),
            Tri::True
        );
    }

    #[test]
    fn unknown_predicate() {
        let store = AnnotationStore::new();
        let names = BTreeSet::new();
        assert!(matches!(
            eval_predicate(
                "frob",
                &[],
                &PredicateCtx {
                    store: &store,
                    names: &names
                }
            ),
            Err(PredicateError::Unknown(_))
        ));
    }

    #[test]
    fn fusion_offsets() {
        let store = AnnotationStore::new();
        let i = Operand::Expr(Expr::ident("i"));
        // Second loop reads what the first wrote one position ahead: unsafe.
        let s1 = stmts("c[i] = v[i];");
        let s2 = stmts("d[i] = c[i+1];");
        assert_eq!(
            ctx_eval("no_write_prev_arrays", &[s2.clone(), s1.clone(), i.clone()], &store),
            Tri::False
        );
        // Reading behind is safe.
        let s2 = stmts("d[i] = c[i-1];");
        assert_eq!(
            ctx_eval("no_write_prev_arrays", &[s2, s1.clone(), i.clone()], &store),
            Tri::True
        );
        let s2 = stmts("d[i] = c[2*i];");
        assert_eq!(ctx_eval("no_write_prev_arrays", &[s2, s1, i], &store), Tri::Unknown);
    }
}
