//! Canonical pretty-printer.
//!
//! Four-space indentation, one statement per line, pragmas directly above
//! their statement. Loop and branch bodies holding a single simple statement
//! are printed without braces; everything else is braced.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::ast::{Block, Declarator, Expr, MetaKind, NodeId, OpRef, Param, Program, Stmt, StmtKind, UnOp};

/// Supplies the pragma lines (without `#pragma `) printed above a statement.
pub type PragmaSource<'a> = &'a dyn Fn(NodeId, &Stmt) -> Vec<String>;

fn raw_pragmas(_: NodeId, s: &Stmt) -> Vec<String> {
    s.pragmas.clone()
}

fn no_pragmas(_: NodeId, _: &Stmt) -> Vec<String> {
    Vec::new()
}

/// Prints a program with the pragmas stored on its statements.
pub fn print(p: &Program) -> String {
    print_with(p, &raw_pragmas)
}

/// Prints a program without any pragma lines.
pub fn print_bare(p: &Program) -> String {
    print_with(p, &no_pragmas)
}

/// Prints a program taking pragma lines from `pragmas`.
pub fn print_with(p: &Program, pragmas: PragmaSource<'_>) -> String {
    let mut pr = Printer::new(pragmas);
    pr.top_level(&p.items, NodeId::ROOT.0 + 1);
    pr.out
}

/// Prints a statement list (for fragments and logs), with raw pragmas.
pub fn print_stmts(stmts: &[Stmt]) -> String {
    let mut pr = Printer::new(&raw_pragmas);
    pr.stmts(stmts, 0, 0);
    pr.out
}

/// Code-style expression text: `a * v[i]`.
pub fn print_expr(e: &Expr) -> String {
    let mut s = String::new();
    ExprPrinter {
        compact: false,
        decl: None,
    }
    .expr(e, 0, &mut s);
    s
}

/// Pragma-style expression text: `N-1`, `zip(v,c)`.
pub fn print_expr_compact(e: &Expr) -> String {
    let mut s = String::new();
    ExprPrinter {
        compact: true,
        decl: None,
    }
    .expr(e, 0, &mut s);
    s
}

/// Tracks which metavariables have been printed with their kind tag, so that
/// the first occurrence reads `cexpr(x)` and later ones read `x`.
#[derive(Debug, Clone, Default)]
pub struct MetaDecls {
    pub kinds: BTreeMap<String, MetaKind>,
    pub seen: BTreeSet<String>,
}

impl MetaDecls {
    pub fn new(kinds: BTreeMap<String, MetaKind>) -> MetaDecls {
        MetaDecls {
            kinds,
            seen: BTreeSet::new(),
        }
    }

    fn name(&mut self, name: &str) -> String {
        match self.kinds.get(name) {
            Some(kind) if self.seen.insert(name.to_string()) => {
                format!("{}({name})", kind.keyword())
            }
            _ => name.to_string(),
        }
    }
}

/// Template expression text, tagging first metavariable occurrences.
pub fn print_template_expr(e: &Expr, decls: &mut MetaDecls) -> String {
    let mut s = String::new();
    ExprPrinter {
        compact: false,
        decl: Some(decls),
    }
    .expr(e, 0, &mut s);
    s
}

/// Template statement text at the given indentation.
pub fn print_template_stmts(stmts: &[Stmt], indent: usize, decls: &mut MetaDecls) -> String {
    let mut pr = Printer::new(&raw_pragmas);
    pr.decls = Some(decls);
    pr.stmts(stmts, indent, 0);
    pr.out
}

struct ExprPrinter<'d> {
    compact: bool,
    decl: Option<&'d mut MetaDecls>,
}

const PREC_ASSIGN: u8 = 0;
const PREC_UNARY: u8 = 12;
const PREC_POSTFIX: u8 = 13;

fn expr_prec(e: &Expr) -> u8 {
    match e {
        Expr::Assign { .. } | Expr::DeclInit { .. } => PREC_ASSIGN,
        Expr::Binary { op, .. } => op.precedence(),
        Expr::Unary { op, .. } => match op {
            UnOp::PostInc | UnOp::PostDec => PREC_POSTFIX,
            _ => PREC_UNARY,
        },
        Expr::Int(v) if *v < 0 => PREC_UNARY,
        _ => PREC_POSTFIX + 1,
    }
}

impl ExprPrinter<'_> {
    fn sep(&self) -> &'static str {
        if self.compact {
            ","
        } else {
            ", "
        }
    }

    fn list(&mut self, items: &[Expr], out: &mut String) {
        for (i, a) in items.iter().enumerate() {
            if i > 0 {
                out.push_str(self.sep());
            }
            self.expr(a, 0, out);
        }
    }

    fn meta(&mut self, name: &str) -> String {
        match self.decl.as_deref_mut() {
            Some(d) => d.name(name),
            None => name.to_string(),
        }
    }

    fn expr(&mut self, e: &Expr, min_prec: u8, out: &mut String) {
        let prec = expr_prec(e);
        let paren = prec < min_prec;
        if paren {
            out.push('(');
        }
        match e {
            Expr::Int(v) => {
                let _ = write!(out, "{v}");
            }
            Expr::Float(t) => out.push_str(t),
            Expr::Ident(n) => out.push_str(n),
            Expr::Index { base, index } => {
                out.push_str(base);
                out.push('[');
                self.expr(index, 0, out);
                out.push(']');
            }
            Expr::Unary { op, operand } => {
                let sym = match op {
                    UnOp::Neg => "-",
                    UnOp::Not => "!",
                    UnOp::PreInc | UnOp::PostInc => "++",
                    UnOp::PreDec | UnOp::PostDec => "--",
                };
                match op {
                    UnOp::PostInc | UnOp::PostDec => {
                        self.expr(operand, PREC_POSTFIX, out);
                        out.push_str(sym);
                    }
                    _ => {
                        out.push_str(sym);
                        let mut inner = String::new();
                        self.expr(operand, PREC_UNARY, &mut inner);
                        // Keep `- -x` and `-(--x)` from gluing into `--`.
                        if inner.starts_with('-') || inner.starts_with('+') {
                            out.push('(');
                            out.push_str(&inner);
                            out.push(')');
                        } else {
                            out.push_str(&inner);
                        }
                    }
                }
            }
            Expr::Binary { op, lhs, rhs } => {
                let p = op.precedence();
                self.expr(lhs, p, out);
                let mut r = String::new();
                self.expr(rhs, p + 1, &mut r);
                if self.compact {
                    out.push_str(op.symbol());
                    if r.starts_with(op.symbol().chars().last().unwrap()) {
                        out.push(' ');
                    }
                } else {
                    out.push(' ');
                    out.push_str(op.symbol());
                    out.push(' ');
                }
                out.push_str(&r);
            }
            Expr::Call { name, args } => {
                out.push_str(name);
                out.push('(');
                self.list(args, out);
                out.push(')');
            }
            Expr::Assign { op, target, value } => {
                self.expr(target, PREC_UNARY, out);
                out.push(' ');
                out.push_str(op.symbol());
                out.push(' ');
                self.expr(value, PREC_ASSIGN, out);
            }
            Expr::DeclInit { ty, name, value } => {
                let _ = write!(out, "{} {name} = ", ty.keyword());
                self.expr(value, PREC_ASSIGN + 1, out);
            }
            Expr::Zip(items) => {
                out.push_str("zip(");
                self.list(items, out);
                out.push(')');
            }
            Expr::Tuple(items) => {
                out.push('(');
                self.list(items, out);
                out.push(')');
            }
            Expr::Meta(name) => {
                let n = self.meta(name);
                out.push_str(&n);
            }
            Expr::BinOper { op, lhs, rhs } => {
                out.push_str("bin_oper(");
                match op {
                    OpRef::Builtin(b) => out.push_str(b.symbol()),
                    OpRef::Named(n) => out.push_str(n),
                    OpRef::Meta(n) => {
                        let n = self.meta(n);
                        out.push_str(&n);
                    }
                }
                out.push_str(self.sep());
                self.expr(lhs, 0, out);
                out.push_str(self.sep());
                self.expr(rhs, 0, out);
                out.push(')');
            }
            Expr::Subs { target, from, to } => {
                out.push_str("subs(");
                self.expr(target, 0, out);
                out.push_str(self.sep());
                self.expr(from, 0, out);
                out.push_str(self.sep());
                self.expr(to, 0, out);
                out.push(')');
            }
        }
        if paren {
            out.push(')');
        }
    }
}

struct Printer<'a, 'd> {
    out: String,
    pragmas: PragmaSource<'a>,
    decls: Option<&'d mut MetaDecls>,
}

fn is_compound_item(s: &Stmt) -> bool {
    matches!(
        s.kind,
        StmtKind::For { .. } | StmtKind::If { .. } | StmtKind::Function { .. } | StmtKind::Compound(_)
    )
}

fn braceless(b: &Block) -> bool {
    matches!(
        b.stmts.as_slice(),
        [Stmt {
            kind: StmtKind::Assign { .. } | StmtKind::Expr(_) | StmtKind::Return(_),
            ..
        }]
    )
}

impl<'a, 'd> Printer<'a, 'd> {
    fn new(pragmas: PragmaSource<'a>) -> Printer<'a, 'd> {
        Printer {
            out: String::new(),
            pragmas,
            decls: None,
        }
    }

    fn expr(&mut self, e: &Expr) -> String {
        let mut s = String::new();
        ExprPrinter {
            compact: false,
            decl: self.decls.as_deref_mut(),
        }
        .expr(e, 0, &mut s);
        s
    }

    fn line(&mut self, indent: usize, text: &str) {
        for _ in 0..indent {
            self.out.push_str("    ");
        }
        self.out.push_str(text);
        self.out.push('\n');
    }

    fn top_level(&mut self, items: &[Stmt], mut next: u32) {
        for (i, s) in items.iter().enumerate() {
            if i > 0 && (is_compound_item(s) || is_compound_item(&items[i - 1])) {
                self.out.push('\n');
            }
            self.stmt(s, 0, next);
            next += s.size();
        }
    }

    fn stmts(&mut self, stmts: &[Stmt], indent: usize, mut next: u32) {
        for s in stmts {
            self.stmt(s, indent, next);
            next += s.size();
        }
    }

    fn meta(&mut self, name: &str) -> String {
        match self.decls.as_deref_mut() {
            Some(d) => d.name(name),
            None => name.to_string(),
        }
    }

    fn body(&mut self, header: String, b: &Block, indent: usize, id: u32) {
        if braceless(b) {
            self.line(indent, &header);
            self.stmts(&b.stmts, indent + 1, id + 1);
        } else {
            self.line(indent, &format!("{header} {{"));
            self.stmts(&b.stmts, indent + 1, id + 1);
            self.line(indent, "}");
        }
    }

    fn branch(&mut self, stmts: &[Stmt], indent: usize) {
        self.line(indent, "{");
        self.stmts(stmts, indent + 1, 0);
        self.line(indent, "}");
    }

    fn declarator(&mut self, d: &Declarator) -> String {
        let mut s = d.name.clone();
        if let Some(ext) = &d.extent {
            let _ = write!(s, "[{}]", self.expr(ext));
        }
        if let Some(init) = &d.init {
            let _ = write!(s, " = {}", self.expr(init));
        }
        s
    }

    fn param(&mut self, p: &Param) -> String {
        let mut s = format!("{} {}", p.ty.keyword(), p.name);
        match &p.array {
            None => {}
            Some(None) => s.push_str("[]"),
            Some(Some(e)) => {
                let _ = write!(s, "[{}]", self.expr(e));
            }
        }
        s
    }

    fn stmt(&mut self, s: &Stmt, indent: usize, id: u32) {
        for p in (self.pragmas)(NodeId(id), s) {
            self.line(indent, &format!("#pragma {p}"));
        }
        let own: u32 = s.own_exprs().iter().map(|e| e.size()).sum();
        match &s.kind {
            StmtKind::Decl { ty, declarators } => {
                let parts: Vec<String> = declarators.iter().map(|d| self.declarator(d)).collect();
                self.line(indent, &format!("{} {};", ty.keyword(), parts.join(", ")));
            }
            StmtKind::Assign { op, target, value } => {
                let t = self.expr(target);
                let v = self.expr(value);
                self.line(indent, &format!("{t} {} {v};", op.symbol()));
            }
            StmtKind::Expr(e) => {
                let t = self.expr(e);
                self.line(indent, &format!("{t};"));
            }
            StmtKind::Compound(stmts) => {
                self.line(indent, "{");
                self.stmts(stmts, indent + 1, id + 1);
                self.line(indent, "}");
            }
            StmtKind::For { init, cond, step, body } => {
                let i = init.as_ref().map(|e| self.expr(e)).unwrap_or_default();
                let c = cond.as_ref().map(|e| self.expr(e)).unwrap_or_default();
                let st = step.as_ref().map(|e| self.expr(e)).unwrap_or_default();
                let header = format!("for ({i}; {c}; {st})");
                self.body(header, body, indent, id + 1 + own);
            }
            StmtKind::If { cond, then, els } => {
                let c = self.expr(cond);
                let then_id = id + 1 + own;
                self.body(format!("if ({c})"), then, indent, then_id);
                if let Some(e) = els {
                    self.body("else".to_string(), e, indent, then_id + then.size());
                }
            }
            StmtKind::Return(e) => match e {
                Some(e) => {
                    let t = self.expr(e);
                    self.line(indent, &format!("return {t};"));
                }
                None => self.line(indent, "return;"),
            },
            StmtKind::Function {
                ret,
                name,
                params,
                body,
            } => {
                let ps: Vec<String> = params.iter().map(|p| self.param(p)).collect();
                self.line(indent, &format!("{} {name}({}) {{", ret.keyword(), ps.join(", ")));
                self.stmts(&body.stmts, indent + 1, id + 2);
                self.line(indent, "}");
            }
            StmtKind::Meta(name) => {
                let n = self.meta(name);
                self.line(indent, &format!("{n};"));
            }
            StmtKind::Subs { target, from, to } => {
                let f = self.expr(from);
                let t = self.expr(to);
                self.line(indent, &format!("subs({target}, {f}, {t});"));
            }
            StmtKind::IfThen { cond, then, els } => {
                let c = self.expr(cond);
                let kw = if els.is_some() { "if_then_else" } else { "if_then" };
                self.line(indent, &format!("{kw}:{{{c};"));
                self.branch(then, indent + 1);
                if let Some(e) = els {
                    self.branch(e, indent + 1);
                }
                self.line(indent, "}");
            }
            StmtKind::GenList(alts) => {
                self.line(indent, "gen_list:{");
                for a in alts {
                    self.branch(a, indent + 1);
                }
                self.line(indent, "}");
            }
        }
    }
}

/// Removes all whitespace; goldens are compared in this form.
pub fn normalize_ws(text: &str) -> String {
    text.chars().filter(|c| !c.is_whitespace()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse, parse_expr};

    #[test]
    fn canonical_layout() {
        let p =
            parse("float c[N],v[N];\nfor(int i=0;i<N;i++) c[i]=a*v[i];\nfor(int i=0;i<N;i++){c[i]+=1;x=2;}").unwrap();
        assert_eq!(
            print(&p),
            "float c[N], v[N];\n\nfor (int i = 0; i < N; i++)\n    c[i] = a * v[i];\n\nfor (int i = 0; i < N; i++) {\n    c[i] += 1;\n    x = 2;\n}\n"
        );
    }

    #[test]
    fn minimal_parentheses() {
        for src in [
            "(a + b) * v[i]",
            "a - (b - c)",
            "a - b - c",
            "-(-x)",
            "!(a < b)",
            "f(a, b * c)",
        ] {
            let e = parse_expr(src).unwrap();
            assert_eq!(print_expr(&e), src);
        }
    }

    #[test]
    fn compact_form() {
        let e = parse_expr("N - 1").unwrap();
        assert_eq!(print_expr_compact(&e), "N-1");
        let e = parse_expr("a - -b").unwrap();
        assert_eq!(parse_expr(&print_expr_compact(&e)).unwrap(), e);
    }

    #[test]
    fn pragmas_above_statements() {
        let src = "#pragma polca map F v w\nfor (int i = 0; i < N; i++)\n#pragma polca def F\n    w[i] = v[i];\n";
        let p = parse(src).unwrap();
        let out = print(&p);
        assert_eq!(
            out,
            "#pragma polca map F v w\nfor (int i = 0; i < N; i++)\n    #pragma polca def F\n    w[i] = v[i];\n"
        );
        assert_eq!(parse(&out).unwrap(), p);
    }

    #[test]
    fn pragma_hook_sees_statement_ids() {
        let p = parse("x = 1;\nfor (i = 0; i < 2; i++) y = i;\n").unwrap();
        let hook = |id: NodeId, _: &Stmt| vec![format!("id {}", id.0)];
        let out = print_with(&p, &hook);
        let table = crate::nodes::NodeTable::build(&p);
        for line in out.lines().filter(|l| l.contains("#pragma id")) {
            let id: u32 = line.trim().trim_start_matches("#pragma id ").parse().unwrap();
            assert!(matches!(
                table.node(NodeId(id)).unwrap(),
                crate::nodes::NodeRef::Stmt(_)
            ));
        }
        assert_eq!(out.matches("#pragma").count(), 3);
    }

    #[test]
    fn functions_and_branches_roundtrip() {
        let src = "int f(int n, float v[], float w[8]) { int s = 0; if (n > 0) { s = 1; } else s = 2; return s; }\nvoid g(void) { }";
        let p = parse(src).unwrap();
        assert_eq!(parse(&print(&p)).unwrap(), p);
    }
}
