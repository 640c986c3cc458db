//! Abstract syntax for the supported C subset.
//!
//! The same types carry rule templates: the `Meta*`, `BinOper`, `Subs` and
//! generator variants only ever come out of the template parser and are
//! rejected everywhere else.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Position of a node in a [`Program`], assigned in pre-order starting at
/// the translation unit (`0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Type {
    Void,
    Int,
    Float,
    Double,
}

impl Type {
    pub fn keyword(self) -> &'static str {
        match self {
            Type::Void => "void",
            Type::Int => "int",
            Type::Float => "float",
            Type::Double => "double",
        }
    }

    pub fn is_floating(self) -> bool {
        matches!(self, Type::Float | Type::Double)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BinOp {
    Mul,
    Div,
    Rem,
    Add,
    Sub,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinOp {
    pub const ALL: [BinOp; 13] = [
        BinOp::Mul,
        BinOp::Div,
        BinOp::Rem,
        BinOp::Add,
        BinOp::Sub,
        BinOp::Lt,
        BinOp::Le,
        BinOp::Gt,
        BinOp::Ge,
        BinOp::Eq,
        BinOp::Ne,
        BinOp::And,
        BinOp::Or,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }

    pub fn from_symbol(s: &str) -> Option<BinOp> {
        BinOp::ALL.into_iter().find(|op| op.symbol() == s)
    }

    /// Binding strength; larger binds tighter.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Mul | BinOp::Div | BinOp::Rem => 10,
            BinOp::Add | BinOp::Sub => 9,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 7,
            BinOp::Eq | BinOp::Ne => 6,
            BinOp::And => 2,
            BinOp::Or => 1,
        }
    }

    pub fn is_arithmetic(self) -> bool {
        matches!(self, BinOp::Mul | BinOp::Div | BinOp::Rem | BinOp::Add | BinOp::Sub)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UnOp {
    Neg,
    Not,
    PreInc,
    PreDec,
    PostInc,
    PostDec,
}

impl UnOp {
    pub fn is_update(self) -> bool {
        matches!(self, UnOp::PreInc | UnOp::PreDec | UnOp::PostInc | UnOp::PostDec)
    }
}

/// `=`, `+=`, `-=`, `*=`, `/=`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AssignOp {
    Set,
    Add,
    Sub,
    Mul,
    Div,
}

impl AssignOp {
    pub fn symbol(self) -> &'static str {
        match self {
            AssignOp::Set => "=",
            AssignOp::Add => "+=",
            AssignOp::Sub => "-=",
            AssignOp::Mul => "*=",
            AssignOp::Div => "/=",
        }
    }

    /// The binary operator a compound assignment applies, `None` for `=`.
    pub fn binary(self) -> Option<BinOp> {
        match self {
            AssignOp::Set => None,
            AssignOp::Add => Some(BinOp::Add),
            AssignOp::Sub => Some(BinOp::Sub),
            AssignOp::Mul => Some(BinOp::Mul),
            AssignOp::Div => Some(BinOp::Div),
        }
    }
}

/// Operator slot of a `bin_oper(op, l, r)` template.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpRef {
    Builtin(BinOp),
    /// A two-argument function used as an operator.
    Named(String),
    Meta(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Expr {
    Int(i64),
    /// Float literal kept as written so printing is exact.
    Float(String),
    Ident(String),
    Index {
        base: String,
        index: Box<Expr>,
    },
    Unary {
        op: UnOp,
        operand: Box<Expr>,
    },
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Call {
        name: String,
        args: Vec<Expr>,
    },
    /// Assignment used as an expression (for-loop headers).
    Assign {
        op: AssignOp,
        target: Box<Expr>,
        value: Box<Expr>,
    },
    /// `int i = 0` in a for-loop header.
    DeclInit {
        ty: Type,
        name: String,
        value: Box<Expr>,
    },
    /// `zip(e1, ..., en)`; annotations only.
    Zip(Vec<Expr>),
    /// `(e1, ..., en)`; annotations only.
    Tuple(Vec<Expr>),

    Meta(String),
    BinOper {
        op: OpRef,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Subs {
        target: Box<Expr>,
        from: Box<Expr>,
        to: Box<Expr>,
    },
}

impl Expr {
    pub fn ident(name: impl Into<String>) -> Expr {
        Expr::Ident(name.into())
    }

    pub fn index(base: impl Into<String>, index: Expr) -> Expr {
        Expr::Index {
            base: base.into(),
            index: Box::new(index),
        }
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn unary(op: UnOp, operand: Expr) -> Expr {
        Expr::Unary {
            op,
            operand: Box::new(operand),
        }
    }

    pub fn is_lvalue(&self) -> bool {
        matches!(self, Expr::Ident(_) | Expr::Index { .. })
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Expr::Int(_) | Expr::Float(_) | Expr::Ident(_))
    }

    /// Direct sub-expressions in evaluation (and numbering) order.
    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Int(_) | Expr::Float(_) | Expr::Ident(_) | Expr::Meta(_) => vec![],
            Expr::Index { index, .. } => vec![index],
            Expr::Unary { operand, .. } => vec![operand],
            Expr::Binary { lhs, rhs, .. } | Expr::BinOper { lhs, rhs, .. } => vec![lhs, rhs],
            Expr::Call { args, .. } => args.iter().collect(),
            Expr::Assign { target, value, .. } => vec![target, value],
            Expr::DeclInit { value, .. } => vec![value],
            Expr::Zip(items) | Expr::Tuple(items) => items.iter().collect(),
            Expr::Subs { target, from, to } => vec![target, from, to],
        }
    }

    pub fn children_mut(&mut self) -> Vec<&mut Expr> {
        match self {
            Expr::Int(_) | Expr::Float(_) | Expr::Ident(_) | Expr::Meta(_) => vec![],
            Expr::Index { index, .. } => vec![index],
            Expr::Unary { operand, .. } => vec![operand],
            Expr::Binary { lhs, rhs, .. } | Expr::BinOper { lhs, rhs, .. } => vec![lhs, rhs],
            Expr::Call { args, .. } => args.iter_mut().collect(),
            Expr::Assign { target, value, .. } => vec![target, value],
            Expr::DeclInit { value, .. } => vec![value],
            Expr::Zip(items) | Expr::Tuple(items) => items.iter_mut().collect(),
            Expr::Subs { target, from, to } => vec![target, from, to],
        }
    }

    /// Number of nodes in this subtree (itself included).
    pub fn size(&self) -> u32 {
        1 + self.children().iter().map(|c| c.size()).sum::<u32>()
    }

    /// Pre-order iteration over this expression and all sub-expressions.
    pub fn preorder(&self) -> Vec<&Expr> {
        let mut out = Vec::new();
        fn go<'a>(e: &'a Expr, out: &mut Vec<&'a Expr>) {
            out.push(e);
            for c in e.children() {
                go(c, out);
            }
        }
        go(self, &mut out);
        out
    }

    pub fn contains(&self, needle: &Expr) -> bool {
        self == needle || self.children().iter().any(|c| c.contains(needle))
    }

    /// Identifiers mentioned anywhere, including array bases and callees.
    pub fn names(&self, out: &mut Vec<String>) {
        match self {
            Expr::Ident(n) | Expr::Meta(n) => out.push(n.clone()),
            Expr::Index { base, .. } => out.push(base.clone()),
            Expr::Call { name, .. } => out.push(name.clone()),
            Expr::DeclInit { name, .. } => out.push(name.clone()),
            _ => {}
        }
        for c in self.children() {
            c.names(out);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Declarator {
    pub name: String,
    /// Present for one-dimensional arrays.
    pub extent: Option<Expr>,
    pub init: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Param {
    pub ty: Type,
    pub name: String,
    /// `Some(None)` for `float v[]`, `Some(Some(N))` for `float v[N]`.
    pub array: Option<Option<Expr>>,
}

/// Brace-delimited statement list that owns its own node id (loop, branch
/// and function bodies).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Block {
    pub stmts: Vec<Stmt>,
}

impl Block {
    pub fn new(stmts: Vec<Stmt>) -> Block {
        Block { stmts }
    }

    pub fn size(&self) -> u32 {
        1 + self.stmts.iter().map(Stmt::size).sum::<u32>()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Stmt {
    /// Raw pragma lines (without the leading `#pragma`) bound to this
    /// statement.
    pub pragmas: Vec<String>,
    pub kind: StmtKind,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StmtKind {
    Decl {
        ty: Type,
        declarators: Vec<Declarator>,
    },
    Assign {
        op: AssignOp,
        target: Expr,
        value: Expr,
    },
    Expr(Expr),
    Compound(Vec<Stmt>),
    For {
        init: Option<Expr>,
        cond: Option<Expr>,
        step: Option<Expr>,
        body: Block,
    },
    If {
        cond: Expr,
        then: Block,
        els: Option<Block>,
    },
    Return(Option<Expr>),
    Function {
        ret: Type,
        name: String,
        params: Vec<Param>,
        body: Block,
    },

    /// `cstmt(x)` / `cstmts(x)` reference, or a bare `x;` splice.
    Meta(String),
    /// `subs(target, from, to);` over a statement-kind binding.
    Subs {
        target: String,
        from: Expr,
        to: Expr,
    },
    /// `if_then:{cond; ...}` and `if_then_else:{cond; then; else;}`.
    IfThen {
        cond: Expr,
        then: Vec<Stmt>,
        els: Option<Vec<Stmt>>,
    },
    /// `gen_list:{ {...} {...} }`; one consequent per alternative.
    GenList(Vec<Vec<Stmt>>),
}

impl Stmt {
    pub fn new(kind: StmtKind) -> Stmt {
        Stmt {
            pragmas: Vec::new(),
            kind,
        }
    }

    pub fn assign(target: Expr, value: Expr) -> Stmt {
        Stmt::new(StmtKind::Assign {
            op: AssignOp::Set,
            target,
            value,
        })
    }

    pub fn is_loop(&self) -> bool {
        matches!(self.kind, StmtKind::For { .. })
    }

    /// Number of nodes in this subtree (itself included).
    pub fn size(&self) -> u32 {
        let inner: u32 = match &self.kind {
            StmtKind::Decl { declarators, .. } => declarators
                .iter()
                .map(|d| d.extent.as_ref().map_or(0, Expr::size) + d.init.as_ref().map_or(0, Expr::size))
                .sum(),
            StmtKind::Assign { target, value, .. } => target.size() + value.size(),
            StmtKind::Expr(e) => e.size(),
            StmtKind::Compound(stmts) => stmts.iter().map(Stmt::size).sum(),
            StmtKind::For { init, cond, step, body } => {
                init.as_ref().map_or(0, Expr::size)
                    + cond.as_ref().map_or(0, Expr::size)
                    + step.as_ref().map_or(0, Expr::size)
                    + body.size()
            }
            StmtKind::If { cond, then, els } => cond.size() + then.size() + els.as_ref().map_or(0, Block::size),
            StmtKind::Return(e) => e.as_ref().map_or(0, Expr::size),
            StmtKind::Function { body, .. } => body.size(),
            StmtKind::Meta(_) | StmtKind::Subs { .. } | StmtKind::IfThen { .. } | StmtKind::GenList(_) => 0,
        };
        1 + inner
    }

    /// Expressions directly owned by this statement (not those of nested
    /// statements), in numbering order.
    pub fn own_exprs(&self) -> Vec<&Expr> {
        match &self.kind {
            StmtKind::Decl { declarators, .. } => declarators
                .iter()
                .flat_map(|d| d.extent.iter().chain(d.init.iter()))
                .collect(),
            StmtKind::Assign { target, value, .. } => vec![target, value],
            StmtKind::Expr(e) => vec![e],
            StmtKind::For { init, cond, step, .. } => init.iter().chain(cond.iter()).chain(step.iter()).collect(),
            StmtKind::If { cond, .. } => vec![cond],
            StmtKind::Return(e) => e.iter().collect(),
            StmtKind::Subs { from, to, .. } => vec![from, to],
            StmtKind::IfThen { cond, .. } => vec![cond],
            _ => vec![],
        }
    }

    /// Directly nested statement lists.
    pub fn child_blocks(&self) -> Vec<&[Stmt]> {
        match &self.kind {
            StmtKind::Compound(stmts) => vec![stmts],
            StmtKind::For { body, .. } => vec![&body.stmts],
            StmtKind::If { then, els, .. } => {
                let mut v: Vec<&[Stmt]> = vec![&then.stmts];
                if let Some(e) = els {
                    v.push(&e.stmts);
                }
                v
            }
            StmtKind::Function { body, .. } => vec![&body.stmts],
            StmtKind::IfThen { then, els, .. } => {
                let mut v: Vec<&[Stmt]> = vec![then];
                if let Some(e) = els {
                    v.push(e);
                }
                v
            }
            StmtKind::GenList(alts) => alts.iter().map(Vec::as_slice).collect(),
            _ => vec![],
        }
    }

    /// Every expression in this statement and its nested statements.
    pub fn all_exprs(&self) -> Vec<&Expr> {
        let mut out: Vec<&Expr> = Vec::new();
        for e in self.own_exprs() {
            out.extend(e.preorder());
        }
        for block in self.child_blocks() {
            for s in block {
                out.extend(s.all_exprs());
            }
        }
        out
    }

    /// This statement followed by every nested statement, pre-order.
    pub fn preorder(&self) -> Vec<&Stmt> {
        let mut out = vec![self];
        for block in self.child_blocks() {
            for s in block {
                out.extend(s.preorder());
            }
        }
        out
    }

    /// Identifiers declared or mentioned anywhere in the statement.
    pub fn names(&self, out: &mut Vec<String>) {
        match &self.kind {
            StmtKind::Decl { declarators, .. } => out.extend(declarators.iter().map(|d| d.name.clone())),
            StmtKind::Function { name, params, .. } => {
                out.push(name.clone());
                out.extend(params.iter().map(|p| p.name.clone()));
            }
            StmtKind::Meta(n) => out.push(n.clone()),
            StmtKind::Subs { target, .. } => out.push(target.clone()),
            _ => {}
        }
        for e in self.own_exprs() {
            e.names(out);
        }
        for block in self.child_blocks() {
            for s in block {
                s.names(out);
            }
        }
    }

    pub fn without_pragmas(&self) -> Stmt {
        let mut s = self.clone();
        s.strip_pragmas();
        s
    }

    pub fn strip_pragmas(&mut self) {
        self.pragmas.clear();
        match &mut self.kind {
            StmtKind::Compound(stmts) => stmts.iter_mut().for_each(Stmt::strip_pragmas),
            StmtKind::For { body, .. } | StmtKind::Function { body, .. } => {
                body.stmts.iter_mut().for_each(Stmt::strip_pragmas)
            }
            StmtKind::If { then, els, .. } => {
                then.stmts.iter_mut().for_each(Stmt::strip_pragmas);
                if let Some(e) = els {
                    e.stmts.iter_mut().for_each(Stmt::strip_pragmas);
                }
            }
            _ => {}
        }
    }
}

/// A parsed translation unit. File-scope statements are allowed so that
/// annotated fragments can be transformed directly; function definitions
/// are statements that only appear at file scope.
#[derive(Debug, Clone, Default)]
pub struct Program {
    pub items: Vec<Stmt>,
    /// Source line of each statement produced by the parser. Not part of
    /// structural equality and not maintained across edits.
    pub lines: BTreeMap<NodeId, usize>,
}

impl PartialEq for Program {
    fn eq(&self, other: &Self) -> bool {
        self.items == other.items
    }
}

impl Eq for Program {}

impl Program {
    pub fn new(items: Vec<Stmt>) -> Program {
        Program {
            items,
            lines: BTreeMap::new(),
        }
    }

    pub fn size(&self) -> u32 {
        1 + self.items.iter().map(Stmt::size).sum::<u32>()
    }

    pub fn functions(&self) -> impl Iterator<Item = &Stmt> {
        self.items
            .iter()
            .filter(|s| matches!(s.kind, StmtKind::Function { .. }))
    }

    pub fn declarations(&self) -> impl Iterator<Item = &Stmt> {
        self.items.iter().filter(|s| matches!(s.kind, StmtKind::Decl { .. }))
    }

    pub fn without_pragmas(&self) -> Program {
        let mut p = self.clone();
        p.items.iter_mut().for_each(Stmt::strip_pragmas);
        p
    }

    pub fn has_pragmas(&self) -> bool {
        self.items
            .iter()
            .flat_map(|s| s.preorder())
            .any(|s| !s.pragmas.is_empty())
    }

    /// Every identifier appearing in the program.
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for s in &self.items {
            s.names(&mut out);
        }
        out
    }
}

/// What a rule metavariable may bind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetaKind {
    /// `cexpr(x)`
    Expr,
    /// `cstmt(x)`
    Stmt,
    /// `cstmts(x)`
    Stmts,
}

impl MetaKind {
    pub fn keyword(self) -> &'static str {
        match self {
            MetaKind::Expr => "cexpr",
            MetaKind::Stmt => "cstmt",
            MetaKind::Stmts => "cstmts",
        }
    }

    pub fn from_keyword(s: &str) -> Option<MetaKind> {
        match s {
            "cexpr" => Some(MetaKind::Expr),
            "cstmt" => Some(MetaKind::Stmt),
            "cstmts" => Some(MetaKind::Stmts),
            _ => None,
        }
    }
}
