//! Reference interpreter for the C subset, with access traces, and a
//! randomized equivalence check built on it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::ast::{AssignOp, BinOp, Expr, NodeId, Program, Stmt, StmtKind, Type, UnOp};
use crate::properties::{canonical_loop, PURE_BUILTINS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Float(f64),
}

impl Value {
    pub fn as_f64(self) -> f64 {
        match self {
            Value::Int(v) => v as f64,
            Value::Float(v) => v,
        }
    }

    pub fn as_i64(self) -> i64 {
        match self {
            Value::Int(v) => v,
            Value::Float(v) => v as i64,
        }
    }

    fn truthy(self) -> bool {
        match self {
            Value::Int(v) => v != 0,
            Value::Float(v) => v != 0.0,
        }
    }

    fn convert(self, ty: Type) -> Value {
        if ty.is_floating() {
            Value::Float(self.as_f64())
        } else {
            Value::Int(self.as_i64())
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v:?}"),
        }
    }
}

/// Variable bindings: inputs to a run, or its final global state.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Env {
    pub scalars: BTreeMap<String, Value>,
    pub arrays: BTreeMap<String, Vec<Value>>,
}

impl fmt::Display for Env {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        for (k, v) in &self.scalars {
            parts.push(format!("{k}={v}"));
        }
        for (k, v) in &self.arrays {
            let items: Vec<String> = v.iter().map(ToString::to_string).collect();
            parts.push(format!("{k}=[{}]", items.join(",")));
        }
        f.write_str(&parts.join(" "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
pub enum ExecError {
    #[error("index {index} out of bounds for `{name}` of length {len}")]
    OutOfBounds { name: String, index: i64, len: usize },
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("`{0}` read before it was assigned")]
    Uninitialized(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("step limit exceeded")]
    StepLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessKind {
    Read,
    Write,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub kind: AccessKind,
    pub name: String,
    /// Element index for array accesses.
    pub index: Option<i64>,
    /// Enclosing canonical loops of the same function, outermost first, with
    /// the current value of their index variable.
    pub loops: Vec<(NodeId, i64)>,
}

/// Which part of a statement a visit covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Whole,
    Init,
    Cond,
    Step,
}

/// One execution of a statement (or of a loop/branch header expression),
/// with the accesses it performed itself.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Visit {
    pub stmt: NodeId,
    pub part: Part,
    /// Visible variables just before the visit (when snapshots are on).
    pub before: Option<Env>,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub trace: bool,
    pub snapshots: bool,
    pub step_limit: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            trace: false,
            snapshots: false,
            step_limit: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    /// Final values of file-scope variables.
    pub globals: Env,
    pub ret: Option<Value>,
    pub visits: Vec<Visit>,
}

#[derive(Debug, Clone)]
enum Slot {
    Scalar { ty: Type, val: Option<Value> },
    Array { ty: Type, heap: usize },
}

type Scope = BTreeMap<String, Slot>;

enum Flow {
    Normal,
    Return(Option<Value>),
}

enum Place {
    Scalar(String),
    Elem(String, usize, i64),
}

struct Machine<'p> {
    functions: BTreeMap<&'p str, (&'p Stmt, NodeId)>,
    heap: Vec<(Type, Vec<Value>)>,
    globals: Scope,
    /// Block scopes of the active function (the file scope has none).
    frames: Vec<Vec<Scope>>,
    input: &'p Env,
    opts: RunOptions,
    steps: u64,
    visits: Vec<Visit>,
    open: Vec<usize>,
    loops: Vec<Vec<(NodeId, String)>>,
}

/// Ids of the statements of a block or compound list whose first statement
/// has id `first`.
fn seq_ids(stmts: &[Stmt], first: u32) -> Vec<NodeId> {
    let mut id = first;
    stmts
        .iter()
        .map(|s| {
            let this = NodeId(id);
            id += s.size();
            this
        })
        .collect()
}

/// Id of the first child block of `s` (which has id `id`).
fn first_block_id(s: &Stmt, id: NodeId) -> u32 {
    id.0 + 1 + s.own_exprs().iter().map(|e| e.size()).sum::<u32>()
}

fn arith_i(op: BinOp, a: i64, b: i64) -> Result<Value, ExecError> {
    Ok(Value::Int(match op {
        BinOp::Add => a.wrapping_add(b),
        BinOp::Sub => a.wrapping_sub(b),
        BinOp::Mul => a.wrapping_mul(b),
        BinOp::Div => {
            if b == 0 {
                return Err(ExecError::DivisionByZero);
            }
            a.wrapping_div(b)
        }
        BinOp::Rem => {
            if b == 0 {
                return Err(ExecError::DivisionByZero);
            }
            a.wrapping_rem(b)
        }
        BinOp::Lt => (a < b) as i64,
        BinOp::Le => (a <= b) as i64,
        BinOp::Gt => (a > b) as i64,
        BinOp::Ge => (a >= b) as i64,
        BinOp::Eq => (a == b) as i64,
        BinOp::Ne => (a != b) as i64,
        BinOp::And | BinOp::Or => unreachable!("short-circuit operators"),
    }))
}

fn arith_f(op: BinOp, a: f64, b: f64) -> Result<Value, ExecError> {
    Ok(match op {
        BinOp::Add => Value::Float(a + b),
        BinOp::Sub => Value::Float(a - b),
        BinOp::Mul => Value::Float(a * b),
        BinOp::Div => Value::Float(a / b),
        BinOp::Rem => return Err(ExecError::Unsupported("`%` on floating operands".into())),
        BinOp::Lt => Value::Int((a < b) as i64),
        BinOp::Le => Value::Int((a <= b) as i64),
        BinOp::Gt => Value::Int((a > b) as i64),
        BinOp::Ge => Value::Int((a >= b) as i64),
        BinOp::Eq => Value::Int((a == b) as i64),
        BinOp::Ne => Value::Int((a != b) as i64),
        BinOp::And | BinOp::Or => unreachable!("short-circuit operators"),
    })
}

pub fn binary(op: BinOp, a: Value, b: Value) -> Result<Value, ExecError> {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => arith_i(op, x, y),
        _ => arith_f(op, a.as_f64(), b.as_f64()),
    }
}

fn builtin_call(name: &str, args: &[Value]) -> Result<Value, ExecError> {
    let f = |i: usize| args.get(i).map_or(0.0, |v| v.as_f64());
    Ok(match (name, args.len()) {
        ("sqrt", 1) => Value::Float(f(0).sqrt()),
        ("fabs", 1) => Value::Float(f(0).abs()),
        ("abs", 1) => Value::Int(args[0].as_i64().wrapping_abs()),
        ("sin", 1) => Value::Float(f(0).sin()),
        ("cos", 1) => Value::Float(f(0).cos()),
        ("exp", 1) => Value::Float(f(0).exp()),
        ("log", 1) => Value::Float(f(0).ln()),
        ("pow", 2) => Value::Float(f(0).powf(f(1))),
        ("min", 2) => match (args[0], args[1]) {
            (Value::Int(a), Value::Int(b)) => Value::Int(a.min(b)),
            _ => Value::Float(f(0).min(f(1))),
        },
        ("max", 2) => match (args[0], args[1]) {
            (Value::Int(a), Value::Int(b)) => Value::Int(a.max(b)),
            _ => Value::Float(f(0).max(f(1))),
        },
        _ => return Err(ExecError::Unsupported(format!("call to undefined function `{name}`"))),
    })
}

impl<'p> Machine<'p> {
    fn tick(&mut self) -> Result<(), ExecError> {
        self.steps += 1;
        if self.steps > self.opts.step_limit {
            Err(ExecError::StepLimit)
        } else {
            Ok(())
        }
    }

    fn scope_of(&self, name: &str) -> Option<&Slot> {
        if let Some(frame) = self.frames.last() {
            for s in frame.iter().rev() {
                if let Some(slot) = s.get(name) {
                    return Some(slot);
                }
            }
        }
        self.globals.get(name)
    }

    fn slot_mut(&mut self, name: &str) -> Option<&mut Slot> {
        if let Some(frame) = self.frames.last_mut() {
            for s in frame.iter_mut().rev() {
                if s.contains_key(name) {
                    return s.get_mut(name);
                }
            }
        }
        self.globals.get_mut(name)
    }

    /// Resolves a name, binding undeclared names from the input on first
    /// use (file-scope constants such as `N`).
    fn resolve(&mut self, name: &str) -> Result<(), ExecError> {
        if self.scope_of(name).is_some() {
            return Ok(());
        }
        if let Some(v) = self.input.scalars.get(name) {
            let ty = match v {
                Value::Int(_) => Type::Int,
                Value::Float(_) => Type::Double,
            };
            self.globals
                .insert(name.to_string(), Slot::Scalar { ty, val: Some(*v) });
            return Ok(());
        }
        if let Some(data) = self.input.arrays.get(name) {
            let ty = if data.iter().any(|v| matches!(v, Value::Float(_))) {
                Type::Double
            } else {
                Type::Int
            };
            self.heap.push((ty, data.clone()));
            self.globals.insert(
                name.to_string(),
                Slot::Array {
                    ty,
                    heap: self.heap.len() - 1,
                },
            );
            return Ok(());
        }
        Err(ExecError::Unbound(name.to_string()))
    }

    fn event(&mut self, kind: AccessKind, name: &str, index: Option<i64>) {
        if !self.opts.trace {
            return;
        }
        let Some(&top) = self.open.last() else {
            return;
        };
        let loops = self
            .loops
            .last()
            .map(|ls| {
                ls.iter()
                    .filter_map(|(id, var)| match self.scope_of(var) {
                        Some(Slot::Scalar { val: Some(v), .. }) => Some((*id, v.as_i64())),
                        _ => None,
                    })
                    .collect()
            })
            .unwrap_or_default();
        self.visits[top].events.push(Event {
            kind,
            name: name.to_string(),
            index,
            loops,
        });
    }

    fn snapshot(&self) -> Env {
        let mut env = Env::default();
        let mut scopes: Vec<&Scope> = vec![&self.globals];
        if let Some(frame) = self.frames.last() {
            scopes.extend(frame.iter());
        }
        for s in scopes {
            for (name, slot) in s {
                match slot {
                    Slot::Scalar { val: Some(v), .. } => {
                        env.arrays.remove(name);
                        env.scalars.insert(name.clone(), *v);
                    }
                    Slot::Scalar { val: None, .. } => {
                        env.scalars.remove(name);
                        env.arrays.remove(name);
                    }
                    Slot::Array { heap, .. } => {
                        env.scalars.remove(name);
                        env.arrays.insert(name.clone(), self.heap[*heap].1.clone());
                    }
                }
            }
        }
        env
    }

    fn open_visit(&mut self, stmt: NodeId, part: Part) {
        if !self.opts.trace {
            return;
        }
        let before = self.opts.snapshots.then(|| self.snapshot());
        self.visits.push(Visit {
            stmt,
            part,
            before,
            events: Vec::new(),
        });
        self.open.push(self.visits.len() - 1);
    }

    fn close_visit(&mut self) {
        if self.opts.trace {
            self.open.pop();
        }
    }

    fn read_scalar(&mut self, name: &str) -> Result<Value, ExecError> {
        self.resolve(name)?;
        match self.scope_of(name) {
            Some(Slot::Scalar { val: Some(v), .. }) => {
                let v = *v;
                self.event(AccessKind::Read, name, None);
                Ok(v)
            }
            Some(Slot::Scalar { val: None, .. }) => Err(ExecError::Uninitialized(name.to_string())),
            Some(Slot::Array { .. }) => Err(ExecError::Unsupported(format!("array `{name}` used as a value"))),
            None => Err(ExecError::Unbound(name.to_string())),
        }
    }

    fn place(&mut self, e: &Expr) -> Result<Place, ExecError> {
        match e {
            Expr::Ident(n) => {
                self.resolve(n)?;
                Ok(Place::Scalar(n.clone()))
            }
            Expr::Index { base, index } => {
                let i = self.eval(index)?.as_i64();
                self.resolve(base)?;
                match self.scope_of(base) {
                    Some(Slot::Array { heap, .. }) => {
                        let h = *heap;
                        let len = self.heap[h].1.len();
                        if i < 0 || i as usize >= len {
                            return Err(ExecError::OutOfBounds {
                                name: base.clone(),
                                index: i,
                                len,
                            });
                        }
                        Ok(Place::Elem(base.clone(), h, i))
                    }
                    _ => Err(ExecError::Unsupported(format!("`{base}` is not an array"))),
                }
            }
            other => Err(ExecError::Unsupported(format!("not an lvalue: {other:?}"))),
        }
    }

    fn load(&mut self, p: &Place) -> Result<Value, ExecError> {
        match p {
            Place::Scalar(n) => self.read_scalar(n),
            Place::Elem(n, h, i) => {
                let v = self.heap[*h].1[*i as usize];
                self.event(AccessKind::Read, n, Some(*i));
                Ok(v)
            }
        }
    }

    fn store(&mut self, p: &Place, v: Value) -> Result<Value, ExecError> {
        match p {
            Place::Scalar(n) => {
                let stored = match self.slot_mut(n) {
                    Some(Slot::Scalar { ty, val }) => {
                        let c = v.convert(*ty);
                        *val = Some(c);
                        c
                    }
                    Some(Slot::Array { .. }) => {
                        return Err(ExecError::Unsupported(format!("assignment to array `{n}`")))
                    }
                    None => return Err(ExecError::Unbound(n.clone())),
                };
                self.event(AccessKind::Write, n, None);
                Ok(stored)
            }
            Place::Elem(n, h, i) => {
                let c = v.convert(self.heap[*h].0);
                self.heap[*h].1[*i as usize] = c;
                self.event(AccessKind::Write, n, Some(*i));
                Ok(c)
            }
        }
    }

    fn eval(&mut self, e: &Expr) -> Result<Value, ExecError> {
        match e {
            Expr::Int(v) => Ok(Value::Int(*v)),
            Expr::Float(t) => t
                .trim_end_matches(['f', 'F'])
                .parse()
                .map(Value::Float)
                .map_err(|_| ExecError::Unsupported(format!("float literal `{t}`"))),
            Expr::Ident(n) => self.read_scalar(n),
            Expr::Index { .. } => {
                let p = self.place(e)?;
                self.load(&p)
            }
            Expr::Unary { op, operand } => match op {
                UnOp::Neg => Ok(match self.eval(operand)? {
                    Value::Int(v) => Value::Int(v.wrapping_neg()),
                    Value::Float(v) => Value::Float(-v),
                }),
                UnOp::Not => Ok(Value::Int(!self.eval(operand)?.truthy() as i64)),
                UnOp::PreInc | UnOp::PreDec | UnOp::PostInc | UnOp::PostDec => {
                    let p = self.place(operand)?;
                    let old = self.load(&p)?;
                    let delta = if matches!(op, UnOp::PreInc | UnOp::PostInc) {
                        BinOp::Add
                    } else {
                        BinOp::Sub
                    };
                    let new = self.store(&p, binary(delta, old, Value::Int(1))?)?;
                    Ok(if matches!(op, UnOp::PreInc | UnOp::PreDec) {
                        new
                    } else {
                        old
                    })
                }
            },
            Expr::Binary {
                op: BinOp::And,
                lhs,
                rhs,
            } => Ok(Value::Int(
                (self.eval(lhs)?.truthy() && self.eval(rhs)?.truthy()) as i64,
            )),
            Expr::Binary {
                op: BinOp::Or,
                lhs,
                rhs,
            } => Ok(Value::Int(
                (self.eval(lhs)?.truthy() || self.eval(rhs)?.truthy()) as i64,
            )),
            Expr::Binary { op, lhs, rhs } => {
                let a = self.eval(lhs)?;
                let b = self.eval(rhs)?;
                binary(*op, a, b)
            }
            Expr::Call { name, args } => self.call(name, args),
            Expr::Assign { op, target, value } => self.assign(*op, target, value),
            Expr::DeclInit { ty, name, value } => {
                let v = self.eval(value)?.convert(*ty);
                self.declare_scalar(name, *ty, Some(v));
                self.event(AccessKind::Write, name, None);
                Ok(v)
            }
            other => Err(ExecError::Unsupported(format!(
                "template or annotation construct {other:?}"
            ))),
        }
    }

    fn assign(&mut self, op: AssignOp, target: &Expr, value: &Expr) -> Result<Value, ExecError> {
        let p = self.place(target)?;
        let v = match op.binary() {
            None => self.eval(value)?,
            Some(b) => {
                let old = self.load(&p)?;
                let rhs = self.eval(value)?;
                binary(b, old, rhs)?
            }
        };
        self.store(&p, v)
    }

    fn declare_scalar(&mut self, name: &str, ty: Type, val: Option<Value>) {
        let slot = Slot::Scalar { ty, val };
        match self.frames.last_mut().and_then(|f| f.last_mut()) {
            Some(scope) => {
                scope.insert(name.to_string(), slot);
            }
            None => {
                self.globals.insert(name.to_string(), slot);
            }
        }
    }

    fn declare_array(&mut self, name: &str, ty: Type, data: Vec<Value>) {
        self.heap.push((ty, data));
        let slot = Slot::Array {
            ty,
            heap: self.heap.len() - 1,
        };
        match self.frames.last_mut().and_then(|f| f.last_mut()) {
            Some(scope) => {
                scope.insert(name.to_string(), slot);
            }
            None => {
                self.globals.insert(name.to_string(), slot);
            }
        }
    }

    fn call(&mut self, name: &str, args: &[Expr]) -> Result<Value, ExecError> {
        let Some(&(def, id)) = self.functions.get(name) else {
            let vals = args.iter().map(|a| self.eval(a)).collect::<Result<Vec<_>, _>>()?;
            return builtin_call(name, &vals);
        };
        let StmtKind::Function { params, body, .. } = &def.kind else {
            unreachable!("function table holds definitions")
        };
        if params.len() != args.len() {
            return Err(ExecError::Unsupported(format!(
                "`{name}` called with {} arguments",
                args.len()
            )));
        }
        let mut scope = Scope::new();
        for (prm, a) in params.iter().zip(args) {
            if prm.array.is_some() {
                let Expr::Ident(arr) = a else {
                    return Err(ExecError::Unsupported("array argument must be an array name".into()));
                };
                self.resolve(arr)?;
                match self.scope_of(arr) {
                    Some(Slot::Array { ty, heap }) => {
                        scope.insert(prm.name.clone(), Slot::Array { ty: *ty, heap: *heap });
                    }
                    _ => return Err(ExecError::Unsupported(format!("`{arr}` is not an array"))),
                }
                self.event(AccessKind::Read, arr, None);
            } else {
                let v = self.eval(a)?.convert(prm.ty);
                scope.insert(
                    prm.name.clone(),
                    Slot::Scalar {
                        ty: prm.ty,
                        val: Some(v),
                    },
                );
            }
        }
        self.frames.push(vec![scope]);
        self.loops.push(Vec::new());
        let first = first_block_id(def, id) + 1;
        let flow = self.block(&body.stmts, first);
        self.loops.pop();
        self.frames.pop();
        match flow? {
            Flow::Return(Some(v)) => Ok(v),
            _ => Ok(Value::Int(0)),
        }
    }

    fn block(&mut self, stmts: &[Stmt], first: u32) -> Result<Flow, ExecError> {
        if let Some(f) = self.frames.last_mut() {
            f.push(Scope::new());
        }
        let mut flow = Ok(Flow::Normal);
        for (s, id) in stmts.iter().zip(seq_ids(stmts, first)) {
            match self.stmt(s, id) {
                Ok(Flow::Normal) => {}
                other => {
                    flow = other;
                    break;
                }
            }
        }
        if let Some(f) = self.frames.last_mut() {
            f.pop();
        }
        flow
    }

    fn with_visit<T>(
        &mut self,
        id: NodeId,
        part: Part,
        f: impl FnOnce(&mut Self) -> Result<T, ExecError>,
    ) -> Result<T, ExecError> {
        self.open_visit(id, part);
        let r = f(self);
        self.close_visit();
        r
    }

    fn stmt(&mut self, s: &Stmt, id: NodeId) -> Result<Flow, ExecError> {
        self.tick()?;
        match &s.kind {
            StmtKind::Decl { ty, declarators } => self.with_visit(id, Part::Whole, |m| {
                for d in declarators {
                    match &d.extent {
                        Some(ext) => {
                            let len = m.eval(ext)?.as_i64();
                            if len < 0 {
                                return Err(ExecError::Unsupported(format!("negative extent for `{}`", d.name)));
                            }
                            let at_file_scope = m.frames.is_empty();
                            let data = match m.input.arrays.get(&d.name) {
                                Some(v) if at_file_scope => {
                                    let mut v: Vec<Value> = v.iter().map(|x| x.convert(*ty)).collect();
                                    v.resize(len as usize, Value::Int(0).convert(*ty));
                                    v
                                }
                                _ => vec![Value::Int(0).convert(*ty); len as usize],
                            };
                            m.declare_array(&d.name, *ty, data);
                        }
                        None => {
                            let val = match &d.init {
                                Some(init) => Some(m.eval(init)?.convert(*ty)),
                                None if m.frames.is_empty() => m.input.scalars.get(&d.name).map(|v| v.convert(*ty)),
                                None => None,
                            };
                            m.declare_scalar(&d.name, *ty, val);
                            if d.init.is_some() {
                                m.event(AccessKind::Write, &d.name, None);
                            }
                        }
                    }
                }
                Ok(Flow::Normal)
            }),
            StmtKind::Assign { op, target, value } => self.with_visit(id, Part::Whole, |m| {
                m.assign(*op, target, value)?;
                Ok(Flow::Normal)
            }),
            StmtKind::Expr(e) => self.with_visit(id, Part::Whole, |m| {
                m.eval(e)?;
                Ok(Flow::Normal)
            }),
            StmtKind::Return(e) => self.with_visit(id, Part::Whole, |m| {
                Ok(Flow::Return(match e {
                    Some(e) => Some(m.eval(e)?),
                    None => None,
                }))
            }),
            StmtKind::Compound(ss) => self.block(ss, id.0 + 1),
            StmtKind::If { cond, then, els } => {
                let c = self.with_visit(id, Part::Cond, |m| m.eval(cond))?;
                let then_id = first_block_id(s, id);
                if c.truthy() {
                    self.block(&then.stmts, then_id + 1)
                } else if let Some(e) = els {
                    self.block(&e.stmts, then_id + then.size() + 1)
                } else {
                    Ok(Flow::Normal)
                }
            }
            StmtKind::For { init, cond, step, body } => {
                if let Some(f) = self.frames.last_mut() {
                    f.push(Scope::new());
                }
                let body_first = first_block_id(s, id) + 1;
                let canonical = canonical_loop(s).map(|c| c.var);
                let r = (|| {
                    if let Some(init) = init {
                        self.with_visit(id, Part::Init, |m| m.eval(init))?;
                    }
                    if let Some(var) = &canonical {
                        if let Some(ls) = self.loops.last_mut() {
                            ls.push((id, var.clone()));
                        }
                    }
                    let r = (|| loop {
                        self.tick()?;
                        if let Some(c) = cond {
                            if !self.with_visit(id, Part::Cond, |m| m.eval(c))?.truthy() {
                                return Ok(Flow::Normal);
                            }
                        }
                        if let Flow::Return(v) = self.block(&body.stmts, body_first)? {
                            return Ok(Flow::Return(v));
                        }
                        if let Some(st) = step {
                            self.with_visit(id, Part::Step, |m| m.eval(st))?;
                        }
                    })();
                    if canonical.is_some() {
                        if let Some(ls) = self.loops.last_mut() {
                            ls.pop();
                        }
                    }
                    r
                })();
                if let Some(f) = self.frames.last_mut() {
                    f.pop();
                }
                r
            }
            StmtKind::Function { .. } => Ok(Flow::Normal),
            other => Err(ExecError::Unsupported(format!("template statement {other:?}"))),
        }
    }
}

/// Runs a program. Without an entry function, the file-scope statements
/// run in order; otherwise they run first (declarations) and then the
/// entry is called with its parameters taken from `input`.
pub fn run(p: &Program, input: &Env, entry: Option<&str>, opts: RunOptions) -> Result<RunResult, ExecError> {
    let mut functions = BTreeMap::new();
    for (s, id) in p.items.iter().zip(seq_ids(&p.items, 1)) {
        if let StmtKind::Function { name, .. } = &s.kind {
            functions.insert(name.as_str(), (s, id));
        }
    }
    let mut m = Machine {
        functions,
        heap: Vec::new(),
        globals: Scope::new(),
        frames: Vec::new(),
        input,
        opts,
        steps: 0,
        visits: Vec::new(),
        open: Vec::new(),
        loops: vec![Vec::new()],
    };
    let mut ret = None;
    for (s, id) in p.items.iter().zip(seq_ids(&p.items, 1)) {
        if let Flow::Return(v) = m.stmt(s, id)? {
            ret = v;
            break;
        }
    }
    if let Some(name) = entry {
        let Some(&(def, _)) = m.functions.get(name) else {
            return Err(ExecError::Unbound(name.to_string()));
        };
        let StmtKind::Function { params, .. } = &def.kind else {
            unreachable!()
        };
        let args: Vec<Expr> = params.iter().map(|prm| Expr::ident(prm.name.clone())).collect();
        // Parameters are bound from the input under their own names.
        for prm in params {
            m.resolve(&prm.name)?;
        }
        ret = Some(m.call(name, &args)?);
    }
    let mut globals = Env::default();
    for (name, slot) in &m.globals {
        match slot {
            Slot::Scalar { val: Some(v), .. } => {
                globals.scalars.insert(name.clone(), *v);
            }
            Slot::Scalar { val: None, .. } => {}
            Slot::Array { heap, .. } => {
                globals.arrays.insert(name.clone(), m.heap[*heap].1.clone());
            }
        }
    }
    Ok(RunResult {
        globals,
        ret,
        visits: m.visits,
    })
}

// ---- random environments and equivalence -------------------------------------

fn declared_names(p: &Program) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for item in &p.items {
        for s in item.preorder() {
            match &s.kind {
                StmtKind::Decl { declarators, .. } => out.extend(declarators.iter().map(|d| d.name.clone())),
                StmtKind::Function { name, params, .. } => {
                    out.insert(name.clone());
                    out.extend(params.iter().map(|p| p.name.clone()));
                }
                _ => {}
            }
            for e in s.own_exprs() {
                for x in e.preorder() {
                    if let Expr::DeclInit { name, .. } = x {
                        out.insert(name.clone());
                    }
                }
            }
        }
    }
    out
}

fn random_value(rng: &mut ChaCha8Rng, ty: Type) -> Value {
    if ty.is_floating() {
        Value::Float(rng.gen_range(-1.0..=1.0))
    } else {
        Value::Int(rng.gen_range(-100..=100))
    }
}

/// A random input: undeclared free identifiers (sizes such as `N`) are
/// bound to `size`; uninitialized file-scope variables and entry
/// parameters get random values (integers in [-100, 100], floats in
/// [-1, 1]); arrays take their declared extents.
pub fn random_env(p: &Program, entry: Option<&str>, size: i64, rng: &mut ChaCha8Rng) -> Env {
    let declared = declared_names(p);
    let mut env = Env::default();
    let mut free: BTreeSet<String> = BTreeSet::new();
    for item in &p.items {
        for s in item.preorder() {
            for e in s.own_exprs() {
                for x in e.preorder() {
                    if let Expr::Ident(n) = x {
                        if !declared.contains(n) && !PURE_BUILTINS.contains(&n.as_str()) {
                            free.insert(n.clone());
                        }
                    }
                }
            }
        }
    }
    for n in &free {
        env.scalars.insert(n.clone(), Value::Int(size));
    }
    let extent = |e: &Expr, env: &Env| -> i64 {
        let input = env.clone();
        let prog = Program::new(vec![Stmt::new(StmtKind::Return(Some(e.clone())))]);
        run(&prog, &input, None, RunOptions::default())
            .ok()
            .and_then(|r| r.ret)
            .map_or(size, |v| v.as_i64().clamp(0, 4096))
    };
    for item in &p.items {
        match &item.kind {
            StmtKind::Decl { ty, declarators } => {
                for d in declarators {
                    if d.init.is_some() {
                        continue;
                    }
                    match &d.extent {
                        Some(ext) => {
                            let len = extent(ext, &env);
                            let data = (0..len).map(|_| random_value(rng, *ty)).collect();
                            env.arrays.insert(d.name.clone(), data);
                        }
                        None => {
                            let v = random_value(rng, *ty);
                            env.scalars.insert(d.name.clone(), v);
                        }
                    }
                }
            }
            StmtKind::Function { name, params, .. } if Some(name.as_str()) == entry => {
                for prm in params {
                    match &prm.array {
                        Some(ext) => {
                            let len = ext.as_ref().map_or(size, |e| extent(e, &env));
                            let data = (0..len).map(|_| random_value(rng, prm.ty)).collect();
                            env.arrays.insert(prm.name.clone(), data);
                        }
                        None => {
                            let v = random_value(rng, prm.ty);
                            env.scalars.insert(prm.name.clone(), v);
                        }
                    }
                }
            }
            _ => {}
        }
    }
    env
}

/// Relative tolerance for floating comparisons, with an absolute floor for
/// values near zero.
pub const REL_TOL: f64 = 1e-6;
pub const ABS_TOL: f64 = 1e-12;

pub fn values_close(a: Value, b: Value) -> bool {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => x == y,
        _ => {
            let (x, y) = (a.as_f64(), b.as_f64());
            if x.is_nan() || y.is_nan() {
                return x.is_nan() && y.is_nan();
            }
            (x - y).abs() <= REL_TOL * x.abs().max(y.abs()) + ABS_TOL
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Counterexample {
    pub trial: usize,
    pub input: Env,
    pub location: String,
    pub left: String,
    pub right: String,
}

impl fmt::Display for Counterexample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "trial {}: {} differs ({} vs {}) on input {}",
            self.trial, self.location, self.left, self.right, self.input
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Verdict {
    Pass { trials: usize },
    Fail(Counterexample),
}

impl Verdict {
    pub fn passed(&self) -> bool {
        matches!(self, Verdict::Pass { .. })
    }
}

fn compare(a: &RunResult, b: &RunResult) -> Option<(String, String, String)> {
    for (name, v) in &a.globals.scalars {
        match b.globals.scalars.get(name) {
            Some(w) if values_close(*v, *w) => {}
            other => {
                return Some((
                    name.clone(),
                    v.to_string(),
                    other.map_or("missing".into(), ToString::to_string),
                ))
            }
        }
    }
    for (name, v) in &a.globals.arrays {
        let Some(w) = b.globals.arrays.get(name) else {
            return Some((name.clone(), "array".into(), "missing".into()));
        };
        if v.len() != w.len() {
            return Some((
                name.clone(),
                format!("length {}", v.len()),
                format!("length {}", w.len()),
            ));
        }
        for (i, (x, y)) in v.iter().zip(w).enumerate() {
            if !values_close(*x, *y) {
                return Some((format!("{name}[{i}]"), x.to_string(), y.to_string()));
            }
        }
    }
    match (a.ret, b.ret) {
        (Some(x), Some(y)) if !values_close(x, y) => Some(("return value".into(), x.to_string(), y.to_string())),
        (Some(x), None) => Some(("return value".into(), x.to_string(), "none".into())),
        _ => None,
    }
}

/// Runs both programs on `trials` seeded random inputs drawn from `p1`'s
/// declarations and compares every file-scope variable of `p1` (and the
/// entry's return value). Runs that fail must fail the same way.
pub fn equivalent(p1: &Program, p2: &Program, entry: Option<&str>, trials: usize, seed: u64) -> Verdict {
    equivalent_sized(p1, p2, entry, trials, seed, 8)
}

pub fn equivalent_sized(
    p1: &Program,
    p2: &Program,
    entry: Option<&str>,
    trials: usize,
    seed: u64,
    size: i64,
) -> Verdict {
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial as u64));
        let input = random_env(p1, entry, size, &mut rng);
        let r1 = run(p1, &input, entry, RunOptions::default());
        let r2 = run(p2, &input, entry, RunOptions::default());
        let diff = match (&r1, &r2) {
            (Ok(a), Ok(b)) => compare(a, b),
            (Err(x), Err(y)) if std::mem::discriminant(x) == std::mem::discriminant(y) => None,
            (x, y) => Some((
                "outcome".into(),
                x.as_ref().map_or_else(ToString::to_string, |_| "ok".into()),
                y.as_ref().map_or_else(ToString::to_string, |_| "ok".into()),
            )),
        };
        if let Some((location, left, right)) = diff {
            return Verdict::Fail(Counterexample {
                trial,
                input,
                location,
                left,
                right,
            });
        }
    }
    Verdict::Pass { trials }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;

    const PANEL0: &str = "float c[N], v[N], a, b;
for (int i = 0; i < N; i++) c[i] = a * v[i];
for (int i = 0; i < N; i++) c[i] += b * v[i];";

    fn input() -> Env {
        let mut env = Env::default();
        env.scalars.insert("N".into(), Value::Int(3));
        env.scalars.insert("a".into(), Value::Int(2));
        env.scalars.insert("b".into(), Value::Int(3));
        env.arrays
            .insert("v".into(), vec![Value::Int(1), Value::Int(2), Value::Int(3)]);
        env
    }

    #[test]
    fn panel0_computes_scaled_sum() {
        let p = parse(PANEL0).unwrap();
        let r = run(&p, &input(), None, RunOptions::default()).unwrap();
        let c: Vec<f64> = r.globals.arrays["c"].iter().map(|v| v.as_f64()).collect();
        assert_eq!(c, vec![5.0, 10.0, 15.0]);
    }

    #[test]
    fn out_of_bounds() {
        let p = parse("int c[2]; c[2] = 1;").unwrap();
        assert!(matches!(
            run(&p, &Env::default(), None, RunOptions::default()),
            Err(ExecError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn entry_function() {
        let p =
            parse("int sum(int v[], int n) { int s = 0; for (int i = 0; i < n; i++) s += v[i]; return s; }").unwrap();
        let mut env = Env::default();
        env.scalars.insert("n".into(), Value::Int(3));
        env.arrays
            .insert("v".into(), vec![Value::Int(1), Value::Int(2), Value::Int(4)]);
        let r = run(&p, &env, Some("sum"), RunOptions::default()).unwrap();
        assert_eq!(r.ret, Some(Value::Int(7)));
    }

    #[test]
    fn mutant_is_caught() {
        let p = parse(PANEL0).unwrap();
        let q = parse(&PANEL0.replace("c[i] += b", "c[i] -= b")).unwrap();
        assert!(equivalent(&p, &p, None, 20, 1).passed());
        assert!(!equivalent(&p, &q, None, 20, 1).passed());
    }

    #[test]
    fn trace_attributes_events_to_statements() {
        let p = parse("int x, c[4]; for (int i = 0; i < 2; i++) c[i] = x;").unwrap();
        let mut env = Env::default();
        env.scalars.insert("x".into(), Value::Int(5));
        let r = run(
            &p,
            &env,
            None,
            RunOptions {
                trace: true,
                snapshots: true,
                ..RunOptions::default()
            },
        )
        .unwrap();
        let body: Vec<&Visit> = r
            .visits
            .iter()
            .filter(|v| v.part == Part::Whole && v.stmt != NodeId(1))
            .collect();
        assert_eq!(body.len(), 2);
        assert_eq!(
            body[1]
                .events
                .iter()
                .filter(|e| e.kind == AccessKind::Write)
                .map(|e| e.index)
                .collect::<Vec<_>>(),
            vec![Some(1)]
        );
        assert_eq!(body[1].events[0].loops.len(), 1);
    }
}
