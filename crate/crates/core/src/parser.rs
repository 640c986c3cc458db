//! Recursive-descent parser for the C subset, rule templates and pragma
//! expressions.

use std::collections::BTreeMap;

use crate::ast::{
    AssignOp, BinOp, Block, Declarator, Expr, MetaKind, NodeId, OpRef, Param, Program, Stmt, StmtKind, Type, UnOp,
};
use crate::error::AstError;
use crate::lexer::{tokenize, Tok, Token};
use crate::nodes::{NodeRef, NodeTable};

/// Parses a translation unit.
pub fn parse(source: &str) -> Result<Program, AstError> {
    let mut p = Parser::new(tokenize(source)?, Mode::Program);
    let mut items = Vec::new();
    while !p.at_eof() {
        items.push(p.stmt(true)?);
    }
    let mut program = Program::new(items);
    let table = NodeTable::build(&program);
    let stmt_ids: Vec<NodeId> = table
        .iter()
        .filter(|(_, e)| matches!(e.node, NodeRef::Stmt(_)))
        .map(|(id, _)| id)
        .collect();
    program.lines = stmt_ids.into_iter().zip(p.stmt_lines).collect();
    Ok(program)
}

/// Parses one C expression (program syntax).
pub fn parse_expr(source: &str) -> Result<Expr, AstError> {
    let mut p = Parser::new(tokenize(source)?, Mode::Program);
    let e = p.expr()?;
    p.expect_eof()?;
    Ok(e)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Program,
    /// Pragma payloads: `zip(..)` and parenthesized tuples are allowed.
    Annotation,
    /// Rule sections: metavariables and generator constructs are allowed.
    Template,
}

/// A metavariable declaration site (`cexpr(x)` and friends).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaDecl {
    pub name: String,
    pub kind: MetaKind,
    pub line: usize,
    pub col: usize,
}

pub struct Parser {
    toks: Vec<Token>,
    pos: usize,
    mode: Mode,
    /// Known metavariables (template mode).
    pub metas: BTreeMap<String, MetaKind>,
    /// Declarations seen since the last [`Parser::take_declared`].
    declared: Vec<MetaDecl>,
    stmt_lines: Vec<usize>,
}

const UNSUPPORTED_KEYWORDS: &[&str] = &[
    "while", "do", "switch", "case", "goto", "struct", "union", "enum", "typedef", "break", "continue", "char", "long",
    "short", "unsigned", "signed", "const", "static", "extern", "sizeof", "volatile",
];

impl Parser {
    pub fn new(toks: Vec<Token>, mode: Mode) -> Parser {
        Parser {
            toks,
            pos: 0,
            mode,
            metas: BTreeMap::new(),
            declared: Vec::new(),
            stmt_lines: Vec::new(),
        }
    }

    pub fn for_source(source: &str, mode: Mode) -> Result<Parser, AstError> {
        Ok(Parser::new(tokenize(source)?, mode))
    }

    pub fn take_declared(&mut self) -> Vec<MetaDecl> {
        std::mem::take(&mut self.declared)
    }

    /// Current token index, for backtracking with [`Parser::reset`].
    pub fn mark(&self) -> usize {
        self.pos
    }

    pub fn reset(&mut self, mark: usize) {
        self.pos = mark;
    }

    pub fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    pub fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    pub fn loc(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    pub fn at_eof(&self) -> bool {
        matches!(self.peek(), Tok::Eof)
    }

    pub fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    pub fn error(&self, message: impl Into<String>) -> AstError {
        let (line, col) = self.loc();
        AstError::syntax(line, col, message)
    }

    fn unsupported(&self, construct: impl Into<String>) -> AstError {
        let (line, col) = self.loc();
        AstError::Unsupported {
            line,
            col,
            construct: construct.into(),
        }
    }

    pub fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    pub fn is_ident(&self, name: &str) -> bool {
        matches!(self.peek(), Tok::Ident(n) if n == name)
    }

    pub fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    pub fn expect_punct(&mut self, p: &str) -> Result<(), AstError> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            Err(self.error(format!("expected `{p}`, found {}", describe(self.peek()))))
        }
    }

    pub fn expect_ident(&mut self) -> Result<String, AstError> {
        match self.peek().clone() {
            Tok::Ident(n) => {
                self.bump();
                Ok(n)
            }
            other => Err(self.error(format!("expected identifier, found {}", describe(&other)))),
        }
    }

    pub fn expect_eof(&self) -> Result<(), AstError> {
        if self.at_eof() {
            Ok(())
        } else {
            Err(self.error(format!("unexpected {}", describe(self.peek()))))
        }
    }

    pub fn expect_int(&mut self) -> Result<i64, AstError> {
        let neg = if self.eat_punct("-") {
            true
        } else {
            self.eat_punct("+");
            false
        };
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(if neg { -v } else { v })
            }
            other => Err(self.error(format!("expected integer, found {}", describe(&other)))),
        }
    }

    fn type_keyword(&self) -> Option<Type> {
        match self.peek() {
            Tok::Ident(n) => match n.as_str() {
                "void" => Some(Type::Void),
                "int" => Some(Type::Int),
                "float" => Some(Type::Float),
                "double" => Some(Type::Double),
                _ => None,
            },
            _ => None,
        }
    }

    fn check_unsupported_keyword(&self) -> Result<(), AstError> {
        if let Tok::Ident(n) = self.peek() {
            if UNSUPPORTED_KEYWORDS.contains(&n.as_str()) {
                return Err(self.unsupported(format!("`{n}`")));
            }
        }
        Ok(())
    }

    // ---- statements -------------------------------------------------------

    /// Parses statements until `}` (not consumed).
    pub fn stmts_until_brace(&mut self) -> Result<Vec<Stmt>, AstError> {
        let mut out = Vec::new();
        loop {
            if self.is_punct("}") {
                return Ok(out);
            }
            if self.at_eof() {
                return Err(self.error("expected `}`"));
            }
            out.push(self.stmt(false)?);
        }
    }

    fn pragmas(&mut self) -> Vec<String> {
        let mut out = Vec::new();
        while let Tok::Pragma(text) = self.peek().clone() {
            self.bump();
            out.push(text);
        }
        out
    }

    pub fn stmt(&mut self, top_level: bool) -> Result<Stmt, AstError> {
        let first = self.loc();
        let pragmas = self.pragmas();
        if !pragmas.is_empty() && (self.at_eof() || self.is_punct("}")) {
            return Err(AstError::syntax(
                first.0,
                first.1,
                "pragma is not followed by a statement",
            ));
        }
        let (line, _) = self.loc();
        self.stmt_lines.push(line);
        let kind = self.stmt_kind(top_level)?;
        Ok(Stmt { pragmas, kind })
    }

    fn body(&mut self) -> Result<Block, AstError> {
        if self.eat_punct("{") {
            let stmts = self.stmts_until_brace()?;
            self.expect_punct("}")?;
            Ok(Block::new(stmts))
        } else {
            Ok(Block::new(vec![self.stmt(false)?]))
        }
    }

    fn stmt_kind(&mut self, top_level: bool) -> Result<StmtKind, AstError> {
        self.check_unsupported_keyword()?;
        if self.mode == Mode::Template {
            if let Some(kind) = self.template_stmt()? {
                return Ok(kind);
            }
        }
        if self.eat_punct("{") {
            let stmts = self.stmts_until_brace()?;
            self.expect_punct("}")?;
            return Ok(StmtKind::Compound(stmts));
        }
        if self.eat_punct(";") {
            return Ok(StmtKind::Compound(vec![]));
        }
        if self.is_ident("for") {
            self.bump();
            self.expect_punct("(")?;
            let init = if self.is_punct(";") {
                None
            } else if let Some(ty) = self.type_keyword() {
                self.bump();
                if self.is_punct("*") {
                    return Err(self.unsupported("pointer declaration"));
                }
                let name = self.expect_ident()?;
                self.expect_punct("=")?;
                let value = self.expr()?;
                Some(Expr::DeclInit {
                    ty,
                    name,
                    value: Box::new(value),
                })
            } else {
                Some(self.expr()?)
            };
            self.expect_punct(";")?;
            let cond = if self.is_punct(";") { None } else { Some(self.expr()?) };
            self.expect_punct(";")?;
            let step = if self.is_punct(")") { None } else { Some(self.expr()?) };
            self.expect_punct(")")?;
            let body = self.body()?;
            return Ok(StmtKind::For { init, cond, step, body });
        }
        if self.is_ident("if") {
            self.bump();
            self.expect_punct("(")?;
            let cond = self.expr()?;
            self.expect_punct(")")?;
            let then = self.body()?;
            let els = if self.is_ident("else") {
                self.bump();
                Some(self.body()?)
            } else {
                None
            };
            return Ok(StmtKind::If { cond, then, els });
        }
        if self.is_ident("return") {
            self.bump();
            let e = if self.is_punct(";") { None } else { Some(self.expr()?) };
            self.expect_punct(";")?;
            return Ok(StmtKind::Return(e));
        }
        if let Some(ty) = self.type_keyword() {
            self.bump();
            if self.is_punct("*") {
                return Err(self.unsupported("pointer declaration"));
            }
            let name = self.expect_ident()?;
            if self.is_punct("(") {
                if !top_level {
                    return Err(self.error("function definitions are only allowed at file scope"));
                }
                return self.function(ty, name);
            }
            if ty == Type::Void {
                return Err(self.error("`void` variables are not allowed"));
            }
            let mut declarators = vec![self.declarator(name)?];
            while self.eat_punct(",") {
                if self.is_punct("*") {
                    return Err(self.unsupported("pointer declaration"));
                }
                let name = self.expect_ident()?;
                declarators.push(self.declarator(name)?);
            }
            self.expect_punct(";")?;
            return Ok(StmtKind::Decl { ty, declarators });
        }
        let e = self.expr()?;
        self.expect_punct(";")?;
        Ok(match e {
            Expr::Assign { op, target, value } => StmtKind::Assign {
                op,
                target: *target,
                value: *value,
            },
            other => StmtKind::Expr(other),
        })
    }

    fn declarator(&mut self, name: String) -> Result<Declarator, AstError> {
        let extent = if self.eat_punct("[") {
            let e = self.expr()?;
            self.expect_punct("]")?;
            if self.is_punct("[") {
                return Err(self.unsupported("multi-dimensional array"));
            }
            Some(e)
        } else {
            None
        };
        let init = if self.eat_punct("=") {
            if self.is_punct("{") {
                return Err(self.unsupported("array initializer list"));
            }
            Some(self.assignment()?)
        } else {
            None
        };
        Ok(Declarator { name, extent, init })
    }

    fn function(&mut self, ret: Type, name: String) -> Result<StmtKind, AstError> {
        self.expect_punct("(")?;
        let mut params = Vec::new();
        if self.is_ident("void") && matches!(self.peek_at(1), Tok::Punct(")")) {
            self.bump();
        }
        if !self.is_punct(")") {
            loop {
                self.check_unsupported_keyword()?;
                let ty = self
                    .type_keyword()
                    .ok_or_else(|| self.error("expected parameter type"))?;
                self.bump();
                if self.is_punct("*") {
                    return Err(self.unsupported("pointer parameter"));
                }
                let pname = self.expect_ident()?;
                let array = if self.eat_punct("[") {
                    let extent = if self.is_punct("]") { None } else { Some(self.expr()?) };
                    self.expect_punct("]")?;
                    Some(extent)
                } else {
                    None
                };
                params.push(Param { ty, name: pname, array });
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        if !self.is_punct("{") {
            return Err(self.unsupported("function prototype without body"));
        }
        self.bump();
        let stmts = self.stmts_until_brace()?;
        self.expect_punct("}")?;
        Ok(StmtKind::Function {
            ret,
            name,
            params,
            body: Block::new(stmts),
        })
    }

    /// Template-only statement forms. Returns `None` when the upcoming
    /// tokens are an ordinary statement.
    fn template_stmt(&mut self) -> Result<Option<StmtKind>, AstError> {
        let Tok::Ident(name) = self.peek().clone() else {
            return Ok(None);
        };
        let next = self.peek_at(1).clone();
        match (name.as_str(), &next) {
            ("cstmt" | "cstmts", Tok::Punct("(")) => {
                let kind = MetaKind::from_keyword(&name).unwrap();
                self.bump();
                self.bump();
                let var = self.declare_meta(kind)?;
                self.expect_punct(")")?;
                self.expect_punct(";")?;
                Ok(Some(StmtKind::Meta(var)))
            }
            ("if_then" | "if_then_else", Tok::Punct(":")) => {
                self.bump();
                self.bump();
                self.expect_punct("{")?;
                let cond = self.expr()?;
                self.expect_punct(";")?;
                let then = self.gen_branch()?;
                let els = if name == "if_then_else" {
                    Some(self.gen_branch()?)
                } else {
                    None
                };
                self.expect_punct("}")?;
                Ok(Some(StmtKind::IfThen { cond, then, els }))
            }
            ("gen_list", Tok::Punct(":")) => {
                self.bump();
                self.bump();
                self.expect_punct("{")?;
                let mut alts = Vec::new();
                while self.eat_punct("{") {
                    alts.push(self.stmts_until_brace()?);
                    self.expect_punct("}")?;
                }
                self.expect_punct("}")?;
                if alts.is_empty() {
                    return Err(self.error("gen_list needs at least one alternative"));
                }
                Ok(Some(StmtKind::GenList(alts)))
            }
            ("subs", Tok::Punct("(")) => {
                // Statement-level subs only when the target is a statement binding.
                let Tok::Ident(target) = self.peek_at(2).clone() else {
                    return Ok(None);
                };
                if !matches!(self.metas.get(&target), Some(MetaKind::Stmt | MetaKind::Stmts)) {
                    return Ok(None);
                }
                self.bump();
                self.bump();
                self.bump();
                self.expect_punct(",")?;
                let from = self.expr()?;
                self.expect_punct(",")?;
                let to = self.expr()?;
                self.expect_punct(")")?;
                self.expect_punct(";")?;
                Ok(Some(StmtKind::Subs { target, from, to }))
            }
            (_, Tok::Punct(";")) if matches!(self.metas.get(&name), Some(MetaKind::Stmt | MetaKind::Stmts)) => {
                self.bump();
                self.bump();
                Ok(Some(StmtKind::Meta(name)))
            }
            _ => Ok(None),
        }
    }

    fn gen_branch(&mut self) -> Result<Vec<Stmt>, AstError> {
        if self.eat_punct("{") {
            let stmts = self.stmts_until_brace()?;
            self.expect_punct("}")?;
            Ok(stmts)
        } else {
            Ok(vec![self.stmt(false)?])
        }
    }

    fn declare_meta(&mut self, kind: MetaKind) -> Result<String, AstError> {
        let (line, col) = self.loc();
        let name = self.expect_ident()?;
        match self.metas.get(&name) {
            Some(k) if *k != kind => {
                return Err(AstError::KindConflict {
                    line,
                    col,
                    name,
                    declared: k.keyword(),
                    found: kind.keyword(),
                })
            }
            _ => {}
        }
        self.metas.insert(name.clone(), kind);
        self.declared.push(MetaDecl {
            name: name.clone(),
            kind,
            line,
            col,
        });
        Ok(name)
    }

    // ---- expressions ------------------------------------------------------

    pub fn expr(&mut self) -> Result<Expr, AstError> {
        self.assignment()
    }

    fn assignment(&mut self) -> Result<Expr, AstError> {
        let lhs = self.binary(1)?;
        let op = match self.peek() {
            Tok::Punct("=") => AssignOp::Set,
            Tok::Punct("+=") => AssignOp::Add,
            Tok::Punct("-=") => AssignOp::Sub,
            Tok::Punct("*=") => AssignOp::Mul,
            Tok::Punct("/=") => AssignOp::Div,
            Tok::Punct("%=") => return Err(self.unsupported("`%=`")),
            Tok::Punct("?") => return Err(self.unsupported("conditional operator")),
            _ => return Ok(lhs),
        };
        if !(lhs.is_lvalue() || matches!(lhs, Expr::Meta(_))) {
            return Err(self.error("left side of assignment is not assignable"));
        }
        self.bump();
        let value = self.assignment()?;
        Ok(Expr::Assign {
            op,
            target: Box::new(lhs),
            value: Box::new(value),
        })
    }

    fn binary_op(&self) -> Option<BinOp> {
        match self.peek() {
            Tok::Punct(p) => BinOp::from_symbol(p),
            _ => None,
        }
    }

    fn binary(&mut self, min_prec: u8) -> Result<Expr, AstError> {
        let mut lhs = self.unary()?;
        loop {
            if let Tok::Punct(p @ ("&" | "|" | "^" | "<<" | ">>")) = self.peek() {
                return Err(self.unsupported(format!("bitwise operator `{p}`")));
            }
            let Some(op) = self.binary_op() else {
                return Ok(lhs);
            };
            let prec = op.precedence();
            if prec < min_prec {
                return Ok(lhs);
            }
            self.bump();
            let rhs = self.binary(prec + 1)?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, AstError> {
        let op = match self.peek() {
            Tok::Punct("-") => Some(UnOp::Neg),
            Tok::Punct("!") => Some(UnOp::Not),
            Tok::Punct("++") => Some(UnOp::PreInc),
            Tok::Punct("--") => Some(UnOp::PreDec),
            Tok::Punct("+") => {
                self.bump();
                return self.unary();
            }
            Tok::Punct("*") => return Err(self.unsupported("pointer dereference")),
            Tok::Punct("&") => return Err(self.unsupported("address-of operator")),
            Tok::Punct("~") => return Err(self.unsupported("bitwise operator `~`")),
            _ => None,
        };
        if let Some(op) = op {
            self.bump();
            let operand = self.unary()?;
            if op.is_update() && !(operand.is_lvalue() || matches!(operand, Expr::Meta(_))) {
                return Err(self.error("operand of increment/decrement is not assignable"));
            }
            return Ok(Expr::unary(op, operand));
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<Expr, AstError> {
        let mut e = self.primary()?;
        loop {
            if self.is_punct("++") || self.is_punct("--") {
                let op = if self.is_punct("++") {
                    UnOp::PostInc
                } else {
                    UnOp::PostDec
                };
                if !(e.is_lvalue() || matches!(e, Expr::Meta(_))) {
                    return Err(self.error("operand of increment/decrement is not assignable"));
                }
                self.bump();
                e = Expr::unary(op, e);
            } else if self.is_punct("[") {
                return Err(self.error("indexing is only allowed on array names"));
            } else if self.is_punct(".") || self.is_punct("->") {
                return Err(self.unsupported("member access"));
            } else {
                return Ok(e);
            }
        }
    }

    fn primary(&mut self) -> Result<Expr, AstError> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::Int(v))
            }
            Tok::Float(t) => {
                self.bump();
                Ok(Expr::Float(t))
            }
            Tok::Punct("(") => {
                self.bump();
                if self.type_keyword().is_some() {
                    return Err(self.unsupported("cast"));
                }
                let first = self.expr()?;
                if self.mode != Mode::Program && self.is_punct(",") {
                    let mut items = vec![first];
                    while self.eat_punct(",") {
                        items.push(self.expr()?);
                    }
                    self.expect_punct(")")?;
                    return Ok(Expr::Tuple(items));
                }
                self.expect_punct(")")?;
                Ok(first)
            }
            Tok::Ident(name) => {
                if UNSUPPORTED_KEYWORDS.contains(&name.as_str()) {
                    return Err(self.unsupported(format!("`{name}`")));
                }
                self.bump();
                if self.mode == Mode::Template {
                    if let Some(e) = self.template_expr(&name)? {
                        return Ok(e);
                    }
                }
                if self.is_punct("(") {
                    self.bump();
                    let mut args = Vec::new();
                    if !self.is_punct(")") {
                        loop {
                            args.push(self.expr()?);
                            if !self.eat_punct(",") {
                                break;
                            }
                        }
                    }
                    self.expect_punct(")")?;
                    if self.mode != Mode::Program && name == "zip" {
                        return Ok(Expr::Zip(args));
                    }
                    return Ok(Expr::Call { name, args });
                }
                if self.is_punct("[") {
                    self.bump();
                    let index = self.expr()?;
                    self.expect_punct("]")?;
                    if self.is_punct("[") {
                        return Err(self.unsupported("multi-dimensional array"));
                    }
                    return Ok(Expr::index(name, index));
                }
                Ok(Expr::Ident(name))
            }
            other => Err(self.error(format!("expected expression, found {}", describe(&other)))),
        }
    }

    /// Template forms that start with an identifier already consumed.
    fn template_expr(&mut self, name: &str) -> Result<Option<Expr>, AstError> {
        if let Some(kind) = MetaKind::from_keyword(name) {
            if self.is_punct("(") {
                self.bump();
                let var = self.declare_meta(kind)?;
                self.expect_punct(")")?;
                return Ok(Some(Expr::Meta(var)));
            }
        }
        match name {
            "bin_oper" if self.is_punct("(") => {
                self.bump();
                let op = self.op_ref()?;
                self.expect_punct(",")?;
                let lhs = self.expr()?;
                self.expect_punct(",")?;
                let rhs = self.expr()?;
                self.expect_punct(")")?;
                Ok(Some(Expr::BinOper {
                    op,
                    lhs: Box::new(lhs),
                    rhs: Box::new(rhs),
                }))
            }
            "subs" if self.is_punct("(") => {
                self.bump();
                let target = self.expr()?;
                self.expect_punct(",")?;
                let from = self.expr()?;
                self.expect_punct(",")?;
                let to = self.expr()?;
                self.expect_punct(")")?;
                Ok(Some(Expr::Subs {
                    target: Box::new(target),
                    from: Box::new(from),
                    to: Box::new(to),
                }))
            }
            _ if self.metas.contains_key(name) => {
                if self.is_punct("[") || self.is_punct("(") {
                    return Err(self.error(format!("metavariable `{name}` cannot be indexed or called")));
                }
                Ok(Some(Expr::Meta(name.to_string())))
            }
            _ => Ok(None),
        }
    }

    fn op_ref(&mut self) -> Result<OpRef, AstError> {
        match self.peek().clone() {
            Tok::Punct(p) => match BinOp::from_symbol(p) {
                Some(op) => {
                    self.bump();
                    Ok(OpRef::Builtin(op))
                }
                None => Err(self.error(format!("`{p}` is not a binary operator"))),
            },
            Tok::Ident(n) if n == "cexpr" && matches!(self.peek_at(1), Tok::Punct("(")) => {
                self.bump();
                self.bump();
                let var = self.declare_meta(MetaKind::Expr)?;
                self.expect_punct(")")?;
                Ok(OpRef::Meta(var))
            }
            Tok::Ident(n) => {
                self.bump();
                if self.metas.contains_key(&n) {
                    Ok(OpRef::Meta(n))
                } else {
                    Ok(OpRef::Named(n))
                }
            }
            other => Err(self.error(format!("expected operator, found {}", describe(&other)))),
        }
    }
}

pub fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(n) => format!("`{n}`"),
        Tok::Int(v) => format!("`{v}`"),
        Tok::Float(f) => format!("`{f}`"),
        Tok::Punct(p) => format!("`{p}`"),
        Tok::Pragma(_) => "pragma".into(),
        Tok::Eof => "end of input".into(),
    }
}
