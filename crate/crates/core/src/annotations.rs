//! POLCA skeleton annotations, STML properties and the per-node store.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ast::{BinOp, Expr, NodeId, Program, StmtKind, UnOp};
use crate::error::AstError;
use crate::lexer::Tok;
use crate::nodes::{NodeRef, NodeTable};
use crate::parser::{describe, Mode, Parser};
use crate::printer::{print_expr_compact, print_with};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnnError {
    #[error("line {line}: bad pragma `{pragma}`: {message}")]
    Grammar {
        line: usize,
        pragma: String,
        message: String,
    },
    #[error("node {pos}: `{annotation}` must annotate a for-loop, found a {found}")]
    AnchorShape {
        pos: NodeId,
        annotation: String,
        found: &'static str,
    },
    #[error("annotation anchored at {0}, which is not a statement of the program")]
    DanglingAnchor(NodeId),
    #[error("external property list: {0}")]
    External(String),
    #[error(transparent)]
    Ast(#[from] AstError),
}

/// Sorted, duplicate-free, non-empty list of loop-index offsets.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Offsets(Vec<i64>);

impl Offsets {
    pub fn new(mut v: Vec<i64>) -> Option<Offsets> {
        v.sort_unstable();
        v.dedup();
        if v.is_empty() {
            None
        } else {
            Some(Offsets(v))
        }
    }

    pub fn as_slice(&self) -> &[i64] {
        &self.0
    }
}

impl fmt::Display for Offsets {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(i64::to_string).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CLocation {
    Scalar(String),
    Elem(String, Expr),
}

impl CLocation {
    fn from_expr(e: &Expr) -> Option<CLocation> {
        match e {
            Expr::Ident(n) => Some(CLocation::Scalar(n.clone())),
            Expr::Index { base, index } => Some(CLocation::Elem(base.clone(), (**index).clone())),
            _ => None,
        }
    }

    pub fn to_expr(&self) -> Expr {
        match self {
            CLocation::Scalar(n) => Expr::ident(n.clone()),
            CLocation::Elem(n, i) => Expr::index(n.clone(), i.clone()),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            CLocation::Scalar(n) | CLocation::Elem(n, _) => n,
        }
    }
}

impl fmt::Display for CLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_expr_compact(&self.to_expr()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Parameter {
    Int(i64),
    Location(CLocation),
    Symbolic(Expr),
}

impl Parameter {
    pub fn from_expr(e: Expr) -> Parameter {
        match &e {
            Expr::Int(v) => Parameter::Int(*v),
            Expr::Unary { op: UnOp::Neg, operand } if matches!(**operand, Expr::Int(_)) => match **operand {
                Expr::Int(v) => Parameter::Int(-v),
                _ => unreachable!(),
            },
            _ => match CLocation::from_expr(&e) {
                Some(l) => Parameter::Location(l),
                None => Parameter::Symbolic(e),
            },
        }
    }

    pub fn to_expr(&self) -> Expr {
        match self {
            Parameter::Int(v) if *v < 0 => Expr::unary(UnOp::Neg, Expr::Int(-v)),
            Parameter::Int(v) => Expr::Int(*v),
            Parameter::Location(l) => l.to_expr(),
            Parameter::Symbolic(e) => e.clone(),
        }
    }
}

impl fmt::Display for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Parameter::Int(v) => write!(f, "{v}"),
            other => f.write_str(&print_expr_compact(&other.to_expr())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Access {
    Reads,
    Writes,
    Rw,
}

impl Access {
    pub fn keyword(self) -> &'static str {
        match self {
            Access::Reads => "reads",
            Access::Writes => "writes",
            Access::Rw => "rw",
        }
    }

    pub fn reads(self) -> bool {
        matches!(self, Access::Reads | Access::Rw)
    }

    pub fn writes(self) -> bool {
        matches!(self, Access::Writes | Access::Rw)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StmlProperty {
    Appears(Expr),
    Pure(Expr),
    IsIdentity(Expr),
    /// Operators are kept as written: a C operator symbol or a name.
    Commutative(String),
    Associative(String),
    /// `g distributes_over f`.
    DistributesOver(String, String),
    WriteSetEq(Expr, Vec<CLocation>),
    Access(Access, Expr, Option<Offsets>),
    SameLength(Expr, Expr),
    OutputOf(Expr),
    IterationSpace(Parameter, Parameter),
    IterationIndependent,
}

impl StmlProperty {
    pub fn reads(e: Expr, offsets: Option<Vec<i64>>) -> StmlProperty {
        StmlProperty::Access(Access::Reads, e, offsets.and_then(Offsets::new))
    }

    pub fn writes(e: Expr, offsets: Option<Vec<i64>>) -> StmlProperty {
        StmlProperty::Access(Access::Writes, e, offsets.and_then(Offsets::new))
    }
}

fn access_text(kind: Access, e: &Expr, offs: &Option<Offsets>) -> String {
    match offs {
        Some(o) => format!("{} {} in {o}", kind.keyword(), print_expr_compact(e)),
        None => format!("{} {}", kind.keyword(), print_expr_compact(e)),
    }
}

impl fmt::Display for StmlProperty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = print_expr_compact;
        match self {
            StmlProperty::Appears(e) => write!(f, "appears {}", c(e)),
            StmlProperty::Pure(e) => write!(f, "pure {}", c(e)),
            StmlProperty::IsIdentity(e) => write!(f, "is_identity {}", c(e)),
            StmlProperty::Commutative(op) => write!(f, "commutative {op}"),
            StmlProperty::Associative(op) => write!(f, "associative {op}"),
            StmlProperty::DistributesOver(g, op) => write!(f, "{g} distributes_over {op}"),
            StmlProperty::WriteSetEq(e, locs) => {
                let ls: Vec<String> = locs.iter().map(ToString::to_string).collect();
                write!(f, "write({}) = {{{}}}", c(e), ls.join(","))
            }
            StmlProperty::Access(k, e, o) => f.write_str(&access_text(*k, e, o)),
            StmlProperty::SameLength(a, b) => write!(f, "same_length {} {}", c(a), c(b)),
            StmlProperty::OutputOf(e) => write!(f, "output({})", c(e)),
            StmlProperty::IterationSpace(lo, hi) => write!(f, "iteration_space {lo} {hi}"),
            StmlProperty::IterationIndependent => f.write_str("iteration_independent"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PolcaAnnotation {
    Map {
        f: String,
        input: Expr,
        output: Expr,
    },
    Fold {
        f: String,
        ini: Expr,
        input: Expr,
        acc: Expr,
    },
    Itn {
        f: String,
        ini: Expr,
        n: Expr,
        output: Expr,
    },
    ZipWith {
        f: String,
        in1: Expr,
        in2: Expr,
        output: Expr,
    },
    Scanl {
        f: String,
        ini: Expr,
        input: Expr,
        output: Expr,
    },
    Def(String),
    Input(Expr),
    Output(Expr),
    Platform(String),
}

impl PolcaAnnotation {
    pub fn is_skeleton(&self) -> bool {
        matches!(
            self,
            PolcaAnnotation::Map { .. }
                | PolcaAnnotation::Fold { .. }
                | PolcaAnnotation::Itn { .. }
                | PolcaAnnotation::ZipWith { .. }
                | PolcaAnnotation::Scanl { .. }
        )
    }
}

impl fmt::Display for PolcaAnnotation {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = print_expr_compact;
        match self {
            PolcaAnnotation::Map { f, input, output } => {
                write!(fm, "map {f} {} {}", c(input), c(output))
            }
            PolcaAnnotation::Fold { f, ini, input, acc } => {
                write!(fm, "fold {f} {} {} {}", c(ini), c(input), c(acc))
            }
            PolcaAnnotation::Itn { f, ini, n, output } => {
                write!(fm, "itn {f} {} {} {}", c(ini), c(n), c(output))
            }
            PolcaAnnotation::ZipWith { f, in1, in2, output } => {
                write!(fm, "zipWith {f} {} {} {}", c(in1), c(in2), c(output))
            }
            PolcaAnnotation::Scanl { f, ini, input, output } => {
                write!(fm, "scanl {f} {} {} {}", c(ini), c(input), c(output))
            }
            PolcaAnnotation::Def(name) => write!(fm, "def {name}"),
            PolcaAnnotation::Input(e) => write!(fm, "input {}", c(e)),
            PolcaAnnotation::Output(e) => write!(fm, "output {}", c(e)),
            PolcaAnnotation::Platform(p) => fm.write_str(p),
        }
    }
}

/// One parsed pragma line.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Ann {
    Polca(PolcaAnnotation),
    Stml(StmlProperty),
    /// A pragma outside the two namespaces (e.g. `omp parallel for`), kept
    /// verbatim.
    Opaque(String),
}

impl Ann {
    pub fn pragma_text(&self) -> String {
        match self {
            Ann::Polca(p) => format!("polca {p}"),
            Ann::Stml(p) => format!("stml {p}"),
            Ann::Opaque(t) => t.clone(),
        }
    }

    pub fn as_stml(&self) -> Option<&StmlProperty> {
        match self {
            Ann::Stml(p) => Some(p),
            _ => None,
        }
    }

    pub fn as_polca(&self) -> Option<&PolcaAnnotation> {
        match self {
            Ann::Polca(p) => Some(p),
            _ => None,
        }
    }
}

// ---- pragma grammar ------------------------------------------------------

struct PragmaParser {
    p: Parser,
    text: String,
    line: usize,
}

impl PragmaParser {
    fn new(text: &str, line: usize) -> Result<PragmaParser, AnnError> {
        let p = Parser::for_source(text, Mode::Annotation).map_err(|e| AnnError::Grammar {
            line,
            pragma: text.to_string(),
            message: e.to_string(),
        })?;
        Ok(PragmaParser {
            p,
            text: text.to_string(),
            line,
        })
    }

    fn err(&self, message: impl Into<String>) -> AnnError {
        AnnError::Grammar {
            line: self.line,
            pragma: self.text.clone(),
            message: message.into(),
        }
    }

    fn lift<T>(&self, r: Result<T, AstError>) -> Result<T, AnnError> {
        r.map_err(|e| self.err(e.to_string()))
    }

    fn expr(&mut self) -> Result<Expr, AnnError> {
        let r = self.p.expr();
        self.lift(r)
    }

    fn name(&mut self) -> Result<String, AnnError> {
        let r = self.p.expect_ident();
        self.lift(r)
    }

    fn end(&self) -> Result<(), AnnError> {
        if self.p.at_eof() {
            Ok(())
        } else {
            Err(self.err(format!("unexpected {}", describe(self.p.peek()))))
        }
    }

    fn offsets(&mut self) -> Result<Offsets, AnnError> {
        let r = self.p.expect_punct("{");
        self.lift(r)?;
        let mut v = Vec::new();
        loop {
            let r = self.p.expect_int();
            v.push(self.lift(r)?);
            if !self.p.eat_punct(",") {
                break;
            }
        }
        let r = self.p.expect_punct("}");
        self.lift(r)?;
        Offsets::new(v).ok_or_else(|| self.err("empty offset list"))
    }

    fn operator(&mut self) -> Result<String, AnnError> {
        match self.p.peek().clone() {
            Tok::Punct(p) if BinOp::from_symbol(p).is_some() => {
                self.p.bump();
                Ok(p.to_string())
            }
            Tok::Ident(n) => {
                self.p.bump();
                Ok(n)
            }
            other => Err(self.err(format!("expected operator, found {}", describe(&other)))),
        }
    }

    fn location(&mut self) -> Result<CLocation, AnnError> {
        let e = self.expr()?;
        CLocation::from_expr(&e).ok_or_else(|| self.err("expected a variable or array element"))
    }

    fn polca(&mut self) -> Result<PolcaAnnotation, AnnError> {
        let kw = self.name()?;
        let ann = match kw.as_str() {
            "map" => PolcaAnnotation::Map {
                f: self.name()?,
                input: self.expr()?,
                output: self.expr()?,
            },
            "fold" => PolcaAnnotation::Fold {
                f: self.name()?,
                ini: self.expr()?,
                input: self.expr()?,
                acc: self.expr()?,
            },
            "itn" => PolcaAnnotation::Itn {
                f: self.name()?,
                ini: self.expr()?,
                n: self.expr()?,
                output: self.expr()?,
            },
            "zipWith" => PolcaAnnotation::ZipWith {
                f: self.name()?,
                in1: self.expr()?,
                in2: self.expr()?,
                output: self.expr()?,
            },
            "scanl" => PolcaAnnotation::Scanl {
                f: self.name()?,
                ini: self.expr()?,
                input: self.expr()?,
                output: self.expr()?,
            },
            "def" => PolcaAnnotation::Def(self.name()?),
            "input" => PolcaAnnotation::Input(self.expr()?),
            "output" => PolcaAnnotation::Output(self.expr()?),
            "platform" => PolcaAnnotation::Platform(self.name()?),
            other if self.p.at_eof() => PolcaAnnotation::Platform(other.to_string()),
            other => return Err(self.err(format!("unknown polca annotation `{other}`"))),
        };
        self.end()?;
        Ok(ann)
    }

    fn stml(&mut self) -> Result<Vec<StmlProperty>, AnnError> {
        let props = match self.p.peek().clone() {
            Tok::Ident(kw) => match kw.as_str() {
                "appears" | "pure" | "is_identity" => {
                    self.p.bump();
                    let e = self.expr()?;
                    vec![match kw.as_str() {
                        "appears" => StmlProperty::Appears(e),
                        "pure" => StmlProperty::Pure(e),
                        _ => StmlProperty::IsIdentity(e),
                    }]
                }
                "commutative" => {
                    self.p.bump();
                    vec![StmlProperty::Commutative(self.operator()?)]
                }
                "associative" => {
                    self.p.bump();
                    vec![StmlProperty::Associative(self.operator()?)]
                }
                "reads" | "writes" | "rw" => {
                    self.p.bump();
                    let kind = match kw.as_str() {
                        "reads" => Access::Reads,
                        "writes" => Access::Writes,
                        _ => Access::Rw,
                    };
                    self.access(kind)?
                }
                "same_length" => {
                    self.p.bump();
                    vec![StmlProperty::SameLength(self.expr()?, self.expr()?)]
                }
                "iteration_independent" => {
                    self.p.bump();
                    vec![StmlProperty::IterationIndependent]
                }
                "iteration_space" => {
                    self.p.bump();
                    let lo = Parameter::from_expr(self.expr()?);
                    let hi = Parameter::from_expr(self.expr()?);
                    vec![StmlProperty::IterationSpace(lo, hi)]
                }
                "write" if matches!(self.p.peek_at(1), Tok::Punct("(")) => {
                    self.p.bump();
                    self.p.bump();
                    let e = self.expr()?;
                    let r = self.p.expect_punct(")");
                    self.lift(r)?;
                    let r = self.p.expect_punct("=");
                    self.lift(r)?;
                    let r = self.p.expect_punct("{");
                    self.lift(r)?;
                    let mut locs = Vec::new();
                    if !self.p.is_punct("}") {
                        loop {
                            locs.push(self.location()?);
                            if !self.p.eat_punct(",") {
                                break;
                            }
                        }
                    }
                    let r = self.p.expect_punct("}");
                    self.lift(r)?;
                    vec![StmlProperty::WriteSetEq(e, locs)]
                }
                "output" if matches!(self.p.peek_at(1), Tok::Punct("(")) => {
                    self.p.bump();
                    self.p.bump();
                    let e = self.expr()?;
                    let r = self.p.expect_punct(")");
                    self.lift(r)?;
                    vec![StmlProperty::OutputOf(e)]
                }
                _ => self.op_prop()?,
            },
            _ => self.op_prop()?,
        };
        self.end()?;
        Ok(props)
    }

    fn op_prop(&mut self) -> Result<Vec<StmlProperty>, AnnError> {
        let g = self.operator()?;
        match self.p.peek().clone() {
            Tok::Ident(kw) if kw == "distributes_over" => {
                self.p.bump();
                Ok(vec![StmlProperty::DistributesOver(g, self.operator()?)])
            }
            _ => Err(self.err(format!("unknown stml property `{g}`"))),
        }
    }

    fn access(&mut self, kind: Access) -> Result<Vec<StmlProperty>, AnnError> {
        // `reads (v in {0}, c in {0})` lists several targets at once.
        if self.p.is_punct("(") {
            let mark = self.p.mark();
            self.p.bump();
            let first = self.expr()?;
            if self.p.is_ident("in") {
                let mut out = Vec::new();
                let mut target = first;
                loop {
                    let offs = if self.p.is_ident("in") {
                        self.p.bump();
                        Some(self.offsets()?)
                    } else {
                        None
                    };
                    out.push(StmlProperty::Access(kind, target, offs));
                    if !self.p.eat_punct(",") {
                        break;
                    }
                    target = self.expr()?;
                }
                let r = self.p.expect_punct(")");
                self.lift(r)?;
                return Ok(out);
            }
            self.p.reset(mark);
        }
        let e = self.expr()?;
        let offs = if self.p.is_ident("in") {
            self.p.bump();
            Some(self.offsets()?)
        } else {
            None
        };
        Ok(vec![StmlProperty::Access(kind, e, offs)])
    }
}

/// Parses one pragma payload (the text after `#pragma`). A multi-target
/// `reads (...)` line yields several annotations.
pub fn parse_pragma(text: &str, line: usize) -> Result<Vec<Ann>, AnnError> {
    let trimmed = text.trim();
    let (ns, rest) = trimmed.split_once(char::is_whitespace).unwrap_or((trimmed, ""));
    match ns {
        "polca" => {
            let mut pp = PragmaParser::new(rest, line)?;
            if pp.p.at_eof() {
                return Err(pp.err("empty polca annotation"));
            }
            Ok(vec![Ann::Polca(pp.polca()?)])
        }
        "stml" => {
            let mut pp = PragmaParser::new(rest, line)?;
            if pp.p.at_eof() {
                return Err(pp.err("empty stml property"));
            }
            Ok(pp.stml()?.into_iter().map(Ann::Stml).collect())
        }
        _ => Ok(vec![Ann::Opaque(trimmed.to_string())]),
    }
}

/// Parses an STML property in concrete syntax, with or without the
/// `#pragma stml` / `stml` prefix.
pub fn parse_property(text: &str) -> Result<Vec<StmlProperty>, AnnError> {
    let t = text.trim();
    let t = t.strip_prefix("#pragma").map(str::trim_start).unwrap_or(t);
    let t = t
        .strip_prefix("stml")
        .filter(|r| r.starts_with(char::is_whitespace))
        .unwrap_or(t);
    let mut pp = PragmaParser::new(t, 0)?;
    pp.stml()
}

// ---- store ----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    User,
    Expanded,
    External,
    RuleAsserted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub ann: Ann,
    pub provenance: Provenance,
    /// Entries sharing a group were written on one pragma line.
    pub group: Option<u32>,
}

/// A warning produced while merging or re-anchoring annotations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Warning {
    pub pos: NodeId,
    pub pragma: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnnotationStore {
    by_node: BTreeMap<NodeId, Vec<Entry>>,
    next_group: u32,
}

impl AnnotationStore {
    pub fn new() -> AnnotationStore {
        AnnotationStore::default()
    }

    pub fn is_empty(&self) -> bool {
        self.by_node.values().all(Vec::is_empty)
    }

    pub fn len(&self) -> usize {
        self.by_node.values().map(Vec::len).sum()
    }

    pub fn at(&self, pos: NodeId) -> &[Entry] {
        self.by_node.get(&pos).map_or(&[], Vec::as_slice)
    }

    pub fn anchors(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.by_node.iter().filter(|(_, v)| !v.is_empty()).map(|(k, _)| *k)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Entry)> {
        self.by_node.iter().flat_map(|(k, v)| v.iter().map(move |e| (*k, e)))
    }

    /// Every STML property with its anchor.
    pub fn properties(&self) -> impl Iterator<Item = (NodeId, &StmlProperty)> {
        self.iter().filter_map(|(k, e)| e.ann.as_stml().map(|p| (k, p)))
    }

    pub fn stml_at(&self, pos: NodeId) -> impl Iterator<Item = &StmlProperty> {
        self.at(pos).iter().filter_map(|e| e.ann.as_stml())
    }

    pub fn contains(&self, pos: NodeId, ann: &Ann) -> bool {
        self.at(pos).iter().any(|e| &e.ann == ann)
    }

    /// Adds an entry unless an equal annotation is already present there.
    pub fn add(&mut self, pos: NodeId, ann: Ann, provenance: Provenance) -> bool {
        self.add_grouped(pos, ann, provenance, None)
    }

    fn add_grouped(&mut self, pos: NodeId, ann: Ann, provenance: Provenance, group: Option<u32>) -> bool {
        if self.contains(pos, &ann) {
            return false;
        }
        self.by_node
            .entry(pos)
            .or_default()
            .push(Entry { ann, provenance, group });
        true
    }

    /// Adds several annotations written as one pragma line.
    pub fn add_line(&mut self, pos: NodeId, anns: Vec<Ann>, provenance: Provenance) {
        let group = if anns.len() > 1 {
            self.next_group += 1;
            Some(self.next_group)
        } else {
            None
        };
        for a in anns {
            self.add_grouped(pos, a, provenance, group);
        }
    }

    fn insert_after(&mut self, pos: NodeId, index: usize, entries: Vec<Entry>) -> usize {
        let list = self.by_node.entry(pos).or_default();
        let mut at = index + 1;
        for e in entries {
            if list.iter().any(|x| x.ann == e.ann) {
                continue;
            }
            list.insert(at, e);
            at += 1;
        }
        at
    }

    /// Pragma lines for `pos`, merging grouped entries back into one line.
    pub fn pragma_lines(&self, pos: NodeId, keep: &dyn Fn(&Entry) -> bool) -> Vec<String> {
        let mut out = Vec::new();
        let entries: Vec<&Entry> = self.at(pos).iter().filter(|e| keep(e)).collect();
        let mut i = 0;
        while i < entries.len() {
            let e = entries[i];
            let mut j = i + 1;
            if let (Some(g), Ann::Stml(StmlProperty::Access(kind, ..))) = (e.group, &e.ann) {
                while j < entries.len()
                    && entries[j].group == Some(g)
                    && matches!(&entries[j].ann, Ann::Stml(StmlProperty::Access(k, ..)) if k == kind)
                {
                    j += 1;
                }
                if j - i > 1 {
                    let parts: Vec<String> = entries[i..j]
                        .iter()
                        .map(|x| match &x.ann {
                            Ann::Stml(StmlProperty::Access(_, t, o)) => match o {
                                Some(o) => format!("{} in {o}", print_expr_compact(t)),
                                None => print_expr_compact(t),
                            },
                            _ => unreachable!(),
                        })
                        .collect();
                    out.push(format!("stml {} ({})", kind.keyword(), parts.join(", ")));
                    i = j;
                    continue;
                }
            }
            out.push(e.ann.pragma_text());
            i += 1;
        }
        out
    }

    /// Moves every entry to a new anchor. `map` returns `None` for anchors
    /// whose statement no longer exists; those entries are dropped and
    /// reported.
    pub fn remap(&self, map: &dyn Fn(NodeId) -> Option<NodeId>) -> (AnnotationStore, Vec<Warning>) {
        let mut out = AnnotationStore {
            by_node: BTreeMap::new(),
            next_group: self.next_group,
        };
        let mut warnings = Vec::new();
        for (pos, entries) in &self.by_node {
            match map(*pos) {
                Some(to) => out.by_node.entry(to).or_default().extend(entries.iter().cloned()),
                None => warnings.extend(entries.iter().map(|e| Warning {
                    pos: *pos,
                    pragma: e.ann.pragma_text(),
                    reason: "anchor statement removed by the transformation".into(),
                })),
            }
        }
        (out, warnings)
    }

    /// Whether `name` is declared pure anywhere.
    pub fn is_pure_name(&self, name: &str) -> bool {
        self.properties()
            .any(|(_, p)| matches!(p, StmlProperty::Pure(Expr::Ident(n)) if n == name))
    }

    /// Declared write set of the function `name`, if any.
    pub fn write_set_of(&self, name: &str) -> Option<&[CLocation]> {
        self.properties().find_map(|(_, p)| match p {
            StmlProperty::WriteSetEq(e, locs) if callee_name(e) == Some(name) => Some(locs.as_slice()),
            _ => None,
        })
    }

    pub fn distributes(&self, g: &str, f: &str) -> bool {
        self.properties()
            .any(|(_, p)| matches!(p, StmlProperty::DistributesOver(a, b) if a == g && b == f))
    }

    pub fn is_identity(&self, e: &Expr) -> bool {
        self.properties()
            .any(|(_, p)| matches!(p, StmlProperty::IsIdentity(x) if x == e))
    }

    pub fn has_at(&self, pos: NodeId, prop: &StmlProperty) -> bool {
        self.stml_at(pos).any(|p| p == prop)
    }
}

fn callee_name(e: &Expr) -> Option<&str> {
    match e {
        Expr::Ident(n) => Some(n),
        Expr::Call { name, .. } => Some(name),
        _ => None,
    }
}

/// Parses every pragma attached to a statement into a store with user
/// provenance.
pub fn parse_pragmas(p: &Program) -> Result<AnnotationStore, AnnError> {
    let table = NodeTable::build(p);
    let mut store = AnnotationStore::new();
    for (id, entry) in table.iter() {
        let NodeRef::Stmt(s) = entry.node else { continue };
        let base = p.lines.get(&id).copied().unwrap_or(0);
        let n = s.pragmas.len();
        for (k, text) in s.pragmas.iter().enumerate() {
            let line = base.saturating_sub(n - k);
            store.add_line(id, parse_pragma(text, line)?, Provenance::User);
        }
    }
    Ok(store)
}

fn len_of(e: &Expr) -> Parameter {
    Parameter::Symbolic(Expr::Call {
        name: "length".into(),
        args: vec![e.clone()],
    })
}

fn output_of(e: &Expr) -> Expr {
    Expr::Call {
        name: "output".into(),
        args: vec![e.clone()],
    }
}

/// The STML lines a skeleton stands for, in table order. Each inner vector
/// is one pragma line.
pub fn skeleton_properties(ann: &PolcaAnnotation) -> Vec<Vec<StmlProperty>> {
    use StmlProperty as P;
    let pure = |f: &str| vec![P::Pure(Expr::ident(f))];
    let reads0 = |e: &Expr| -> Vec<StmlProperty> {
        match e {
            Expr::Zip(items) => items.iter().map(|x| P::reads(x.clone(), Some(vec![0]))).collect(),
            _ => vec![P::reads(e.clone(), Some(vec![0]))],
        }
    };
    match ann {
        PolcaAnnotation::Map { f, input, output } => vec![
            reads0(input),
            vec![P::writes(output.clone(), Some(vec![0]))],
            vec![P::SameLength(input.clone(), output.clone())],
            pure(f),
            vec![P::IterationSpace(Parameter::Int(0), len_of(input))],
            vec![P::IterationIndependent],
        ],
        PolcaAnnotation::Fold { f, ini, input, acc } => vec![
            reads0(input),
            vec![P::reads(output_of(ini), None)],
            vec![P::writes(acc.clone(), None)],
            pure(f),
            vec![P::IterationSpace(Parameter::Int(0), len_of(input))],
        ],
        PolcaAnnotation::Itn { f, ini, n, output } => vec![
            vec![P::reads(output_of(ini), None)],
            vec![P::reads(n.clone(), None)],
            vec![P::writes(output.clone(), None)],
            pure(f),
            vec![P::IterationSpace(Parameter::Int(0), Parameter::from_expr(n.clone()))],
        ],
        PolcaAnnotation::ZipWith { f, in1, in2, output } => vec![
            reads0(in1),
            reads0(in2),
            vec![P::writes(output.clone(), Some(vec![0]))],
            vec![P::SameLength(in1.clone(), in2.clone())],
            vec![P::SameLength(in1.clone(), output.clone())],
            pure(f),
            vec![P::IterationSpace(Parameter::Int(0), len_of(in1))],
            vec![P::IterationIndependent],
        ],
        PolcaAnnotation::Scanl { f, ini, input, output } => vec![
            vec![P::reads(output_of(ini), None)],
            reads0(input),
            reads0(output),
            vec![P::writes(output.clone(), Some(vec![1]))],
            pure(f),
            vec![P::IterationSpace(Parameter::Int(0), len_of(input))],
        ],
        _ => vec![],
    }
}

/// Adds the STML expansion of every skeleton annotation right after it.
pub fn expand_polca(p: &Program, store: &AnnotationStore) -> Result<AnnotationStore, AnnError> {
    let table = NodeTable::build(p);
    let mut out = store.clone();
    for (pos, entries) in &store.by_node {
        let mut offset = 0;
        for (i, e) in entries.iter().enumerate() {
            let Ann::Polca(ann) = &e.ann else { continue };
            if !ann.is_skeleton() {
                continue;
            }
            let node = table.node(*pos).map_err(|_| AnnError::DanglingAnchor(*pos))?;
            let is_loop = node.as_stmt().is_some_and(|s| s.is_loop());
            if !is_loop {
                return Err(AnnError::AnchorShape {
                    pos: *pos,
                    annotation: e.ann.pragma_text(),
                    found: match node {
                        NodeRef::Stmt(s) => stmt_kind_name(&s.kind),
                        other => other.kind_name(),
                    },
                });
            }
            let mut new = Vec::new();
            for line in skeleton_properties(ann) {
                let group = if line.len() > 1 {
                    out.next_group += 1;
                    Some(out.next_group)
                } else {
                    None
                };
                for prop in line {
                    new.push(Entry {
                        ann: Ann::Stml(prop),
                        provenance: Provenance::Expanded,
                        group,
                    });
                }
            }
            let idx = out.by_node[pos].iter().position(|x| x == e).unwrap_or(i + offset);
            let before = out.by_node[pos].len();
            out.insert_after(*pos, idx, new);
            offset += out.by_node[pos].len() - before;
        }
    }
    Ok(out)
}

fn stmt_kind_name(k: &StmtKind) -> &'static str {
    match k {
        StmtKind::Decl { .. } => "declaration",
        StmtKind::Assign { .. } => "assignment",
        StmtKind::Expr(_) => "expression statement",
        StmtKind::Compound(_) => "block",
        StmtKind::For { .. } => "for-loop",
        StmtKind::If { .. } => "if statement",
        StmtKind::Return(_) => "return statement",
        StmtKind::Function { .. } => "function definition",
        _ => "template statement",
    }
}

// ---- external properties ----------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
struct ExternalRecord {
    line: Option<usize>,
    node: Option<u32>,
    property: String,
}

/// Reads the external-tool JSON format `[{"line": n, "property": "..."}]`
/// (a `node` id may be given instead of a line). A line resolves to the
/// first statement starting on or after it.
pub fn parse_external(p: &Program, json: &str) -> Result<Vec<(NodeId, StmlProperty)>, AnnError> {
    let records: Vec<ExternalRecord> = serde_json::from_str(json).map_err(|e| AnnError::External(e.to_string()))?;
    let mut out = Vec::new();
    for r in records {
        let pos = match (r.node, r.line) {
            (Some(n), _) => NodeId(n),
            (None, Some(line)) => p
                .lines
                .iter()
                .filter(|(_, l)| **l >= line)
                .min_by_key(|(id, l)| (**l, id.0))
                .map(|(id, _)| *id)
                .ok_or_else(|| AnnError::External(format!("no statement at or after line {line}")))?,
            (None, None) => return Err(AnnError::External("record needs a `line` or a `node`".into())),
        };
        for prop in parse_property(&r.property)? {
            out.push((pos, prop));
        }
    }
    Ok(out)
}

/// Whether a `pure x` claim and a write-set claim about `e` concern the same
/// code: the same expression, or `x` names the function `e` calls.
fn same_subject(x: &Expr, e: &Expr) -> bool {
    x == e || matches!(x, Expr::Ident(n) if callee_name(e) == Some(n))
}

fn carried(writes: &[i64], others: &[i64]) -> bool {
    writes.iter().any(|w| others.iter().any(|r| r != w))
}

fn is_authoritative(p: Provenance) -> bool {
    matches!(p, Provenance::User | Provenance::Expanded)
}

fn array_name(e: &Expr) -> Option<&str> {
    match e {
        Expr::Ident(n) => Some(n),
        _ => None,
    }
}

/// Why `prop` (external, at `pos`) contradicts the user's annotations.
fn contradiction(store: &AnnotationStore, pos: NodeId, prop: &StmlProperty) -> Option<String> {
    let user: Vec<(NodeId, &StmlProperty)> = store
        .iter()
        .filter(|(_, e)| is_authoritative(e.provenance))
        .filter_map(|(k, e)| e.ann.as_stml().map(|p| (k, p)))
        .collect();
    let user_here = || user.iter().filter(|(k, _)| *k == pos).map(|(_, p)| *p);
    match prop {
        StmlProperty::Pure(e) => {
            for (_, u) in &user {
                if let StmlProperty::WriteSetEq(w, locs) = u {
                    if !locs.is_empty() && same_subject(e, w) {
                        return Some(format!("user states `{u}`"));
                    }
                }
            }
            for u in user_here() {
                if let StmlProperty::Access(k, w, _) = u {
                    if k.writes() && w == e {
                        return Some(format!("user states `{u}`"));
                    }
                }
            }
            None
        }
        StmlProperty::WriteSetEq(e, locs) if !locs.is_empty() => {
            for (_, u) in &user {
                if let StmlProperty::Pure(x) = u {
                    if same_subject(x, e) {
                        return Some(format!("user states `{u}`"));
                    }
                }
            }
            None
        }
        StmlProperty::Access(k, e, offs) => {
            if k.writes() {
                for u in user_here() {
                    if matches!(u, StmlProperty::Pure(x) if x == e) {
                        return Some(format!("user states `{u}`"));
                    }
                }
            }
            let name = array_name(e)?;
            let offs = offs.as_ref()?;
            if !user_here().any(|u| *u == StmlProperty::IterationIndependent) {
                return None;
            }
            let (mut w, mut all) = (Vec::new(), Vec::new());
            for u in user_here() {
                if let StmlProperty::Access(uk, ue, Some(uo)) = u {
                    if array_name(ue) == Some(name) {
                        all.extend_from_slice(uo.as_slice());
                        if uk.writes() {
                            w.extend_from_slice(uo.as_slice());
                        }
                    }
                }
            }
            all.extend_from_slice(offs.as_slice());
            if k.writes() {
                w.extend_from_slice(offs.as_slice());
            }
            carried(&w, &all).then(|| "user states `iteration_independent` for this loop".to_string())
        }
        StmlProperty::IterationIndependent => {
            let mut by_array: BTreeMap<&str, (Vec<i64>, Vec<i64>)> = BTreeMap::new();
            for u in user_here() {
                if let StmlProperty::Access(uk, ue, Some(uo)) = u {
                    if let Some(name) = array_name(ue) {
                        let slot = by_array.entry(name).or_default();
                        slot.1.extend_from_slice(uo.as_slice());
                        if uk.writes() {
                            slot.0.extend_from_slice(uo.as_slice());
                        }
                    }
                }
            }
            by_array
                .iter()
                .find(|(_, (w, all))| carried(w, all))
                .map(|(a, _)| format!("user offsets on `{a}` imply a loop-carried dependency"))
        }
        _ => None,
    }
}

/// Merges externally inferred properties. Entries contradicting the user's
/// annotations are dropped and reported.
pub fn ingest_external(store: &AnnotationStore, extra: &[(NodeId, StmlProperty)]) -> (AnnotationStore, Vec<Warning>) {
    let mut out = store.clone();
    let mut warnings = Vec::new();
    for (pos, prop) in extra {
        if let Some(reason) = contradiction(store, *pos, prop) {
            log::warn!("dropping external `{prop}` at {pos}: {reason}");
            warnings.push(Warning {
                pos: *pos,
                pragma: format!("stml {prop}"),
                reason,
            });
            continue;
        }
        out.add(*pos, Ann::Stml(prop.clone()), Provenance::External);
    }
    (out, warnings)
}

/// Prints the program with the store's pragmas above their anchors.
pub fn emit_pragmas(p: &Program, store: &AnnotationStore) -> Result<String, AnnError> {
    emit_filtered(p, store, &|_| true)
}

/// Like [`emit_pragmas`], printing only the entries accepted by `keep`.
pub fn emit_filtered(p: &Program, store: &AnnotationStore, keep: &dyn Fn(&Entry) -> bool) -> Result<String, AnnError> {
    let table = NodeTable::build(p);
    for pos in store.anchors() {
        match table.get(pos) {
            Some(e) if matches!(e.node, NodeRef::Stmt(_)) => {}
            _ => return Err(AnnError::DanglingAnchor(pos)),
        }
    }
    let hook = |id: NodeId, _: &crate::ast::Stmt| store.pragma_lines(id, keep);
    Ok(print_with(p, &hook))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse, parse_expr};

    fn stml(text: &str) -> Vec<StmlProperty> {
        parse_property(text).unwrap()
    }

    #[test]
    fn offsets_with_explicit_plus() {
        assert_eq!(
            stml("reads c in {-1,0,+1}"),
            vec![StmlProperty::reads(Expr::ident("c"), Some(vec![-1, 0, 1]))]
        );
    }

    #[test]
    fn map_annotation() {
        assert_eq!(
            parse_pragma("polca map BODY1 v c", 1).unwrap(),
            vec![Ann::Polca(PolcaAnnotation::Map {
                f: "BODY1".into(),
                input: Expr::ident("v"),
                output: Expr::ident("c"),
            })]
        );
    }

    #[test]
    fn iteration_space_with_symbolic_bound() {
        assert_eq!(
            stml("iteration_space 0 N-1"),
            vec![StmlProperty::IterationSpace(
                Parameter::Int(0),
                Parameter::Symbolic(parse_expr("N - 1").unwrap())
            )]
        );
    }

    #[test]
    fn write_set_and_operators() {
        assert_eq!(
            stml("write(c[i++] = a + 3) = {c[i], i}"),
            vec![StmlProperty::WriteSetEq(
                parse_expr("c[i++] = a + 3").unwrap(),
                vec![
                    CLocation::Elem("c".into(), Expr::ident("i")),
                    CLocation::Scalar("i".into())
                ]
            )]
        );
        assert_eq!(
            stml("* distributes_over +"),
            vec![StmlProperty::DistributesOver("*".into(), "+".into())]
        );
        assert_eq!(stml("commutative max"), vec![StmlProperty::Commutative("max".into())]);
    }

    #[test]
    fn multi_target_reads() {
        let props = stml("reads (v in {0}, c in {0})");
        assert_eq!(props.len(), 2);
        // A parenthesized expression without `in` is an ordinary target.
        assert_eq!(
            stml("reads (a + b)"),
            vec![StmlProperty::reads(parse_expr("a + b").unwrap(), None)]
        );
    }

    #[test]
    fn grammar_errors_name_the_pragma() {
        let err = parse_pragma("stml reads c in {}", 7).unwrap_err();
        assert!(matches!(err, AnnError::Grammar { line: 7, .. }), "{err}");
        assert!(parse_pragma("polca frobnicate x y", 1).is_err());
    }

    #[test]
    fn platform_and_opaque() {
        assert_eq!(
            parse_pragma("polca mpi", 1).unwrap(),
            vec![Ann::Polca(PolcaAnnotation::Platform("mpi".into()))]
        );
        assert_eq!(
            parse_pragma("omp parallel for", 1).unwrap(),
            vec![Ann::Opaque("omp parallel for".into())]
        );
    }

    #[test]
    fn skeleton_on_non_loop_is_rejected() {
        let p = parse("#pragma polca map F v w\nw[0] = v[0];\n").unwrap();
        let store = parse_pragmas(&p).unwrap();
        assert!(matches!(expand_polca(&p, &store), Err(AnnError::AnchorShape { .. })));
    }

    #[test]
    fn expansion_is_idempotent() {
        let p = parse("#pragma polca map F v w\nfor (i = 0; i < N; i++)\n    w[i] = v[i];\n").unwrap();
        let once = expand_polca(&p, &parse_pragmas(&p).unwrap()).unwrap();
        let twice = expand_polca(&p, &once).unwrap();
        assert_eq!(once.len(), 7);
        assert_eq!(once, twice);
    }

    #[test]
    fn emit_roundtrip_reproduces_store() {
        let src = "#pragma polca map F zip(v,c) c\n#pragma stml reads (v in {0}, c in {0})\nfor (i = 0; i < N; i++)\n    c[i] += v[i];\n";
        let p = parse(src).unwrap();
        let store = parse_pragmas(&p).unwrap();
        let text = emit_pragmas(&p, &store).unwrap();
        assert!(text.contains("#pragma stml reads (v in {0}, c in {0})"));
        let again = parse_pragmas(&parse(&text).unwrap()).unwrap();
        assert_eq!(again, store);
    }

    #[test]
    fn dangling_anchor() {
        let p = parse("x = 1;").unwrap();
        let mut store = AnnotationStore::new();
        store.add(
            NodeId(40),
            Ann::Stml(StmlProperty::IterationIndependent),
            Provenance::User,
        );
        assert_eq!(emit_pragmas(&p, &store), Err(AnnError::DanglingAnchor(NodeId(40))));
    }
}
