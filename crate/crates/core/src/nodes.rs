//! Node addressing: pre-order ids, lookup and functional replacement.
//!
//! Ids are not stored in the tree; they are recomputed from subtree sizes,
//! so every edit implicitly renumbers the result.

use crate::ast::{Block, Expr, NodeId, Program, Stmt, StmtKind};
use crate::error::AstError;

#[derive(Debug, Clone, Copy)]
pub enum NodeRef<'a> {
    Root(&'a Program),
    Stmt(&'a Stmt),
    Block(&'a Block),
    Expr(&'a Expr),
}

impl<'a> NodeRef<'a> {
    pub fn kind_name(&self) -> &'static str {
        match self {
            NodeRef::Root(_) => "translation unit",
            NodeRef::Stmt(_) => "statement",
            NodeRef::Block(_) => "block",
            NodeRef::Expr(_) => "expression",
        }
    }

    pub fn as_stmt(&self) -> Option<&'a Stmt> {
        match self {
            NodeRef::Stmt(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_expr(&self) -> Option<&'a Expr> {
        match self {
            NodeRef::Expr(e) => Some(e),
            _ => None,
        }
    }

    /// The statement list this node holds, when it is a sequence container.
    pub fn sequence(&self) -> Option<&'a [Stmt]> {
        match self {
            NodeRef::Root(p) => Some(&p.items),
            NodeRef::Block(b) => Some(&b.stmts),
            NodeRef::Stmt(Stmt {
                kind: StmtKind::Compound(stmts),
                ..
            }) => Some(stmts),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NodeEntry<'a> {
    pub node: NodeRef<'a>,
    pub parent: Option<NodeId>,
    /// First id after this subtree.
    pub end: NodeId,
    /// Index within the parent's statement list, for statements.
    pub slot: Option<usize>,
}

/// Flat pre-order table of every node in a program.
pub struct NodeTable<'a> {
    entries: Vec<NodeEntry<'a>>,
}

impl<'a> NodeTable<'a> {
    pub fn build(program: &'a Program) -> NodeTable<'a> {
        let mut b = TableBuilder {
            entries: Vec::with_capacity(program.size() as usize),
        };
        b.push(NodeRef::Root(program), None, program.size(), None);
        b.stmts(&program.items, NodeId::ROOT);
        NodeTable { entries: b.entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: NodeId) -> Option<&NodeEntry<'a>> {
        self.entries.get(id.index())
    }

    pub fn node(&self, id: NodeId) -> Result<NodeRef<'a>, AstError> {
        self.get(id).map(|e| e.node).ok_or(AstError::UnknownPosition(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &NodeEntry<'a>)> {
        self.entries.iter().enumerate().map(|(i, e)| (NodeId(i as u32), e))
    }

    /// Id of the `slot`-th statement of the container `container`.
    pub fn child_stmt_id(&self, container: NodeId, slot: usize) -> Option<NodeId> {
        let entry = self.get(container)?;
        let seq = entry.node.sequence()?;
        if slot > seq.len() {
            return None;
        }
        let mut next = container.0 + 1;
        for s in &seq[..slot] {
            next += s.size();
        }
        Some(NodeId(next))
    }

    /// Ids of the statements directly inside a container.
    pub fn child_stmt_ids(&self, container: NodeId) -> Vec<NodeId> {
        let Some(seq) = self.get(container).and_then(|e| e.node.sequence()) else {
            return vec![];
        };
        let mut next = container.0 + 1;
        seq.iter()
            .map(|s| {
                let id = NodeId(next);
                next += s.size();
                id
            })
            .collect()
    }

    /// Innermost enclosing for-loop ids, outermost first.
    pub fn enclosing_loops(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut cur = self.get(id).and_then(|e| e.parent);
        while let Some(p) = cur {
            if let NodeRef::Stmt(s) = self.entries[p.index()].node {
                if s.is_loop() {
                    out.push(p);
                }
            }
            cur = self.entries[p.index()].parent;
        }
        out.reverse();
        out
    }
}

struct TableBuilder<'a> {
    entries: Vec<NodeEntry<'a>>,
}

impl<'a> TableBuilder<'a> {
    fn next_id(&self) -> NodeId {
        NodeId(self.entries.len() as u32)
    }

    fn push(&mut self, node: NodeRef<'a>, parent: Option<NodeId>, size: u32, slot: Option<usize>) -> NodeId {
        let id = self.next_id();
        self.entries.push(NodeEntry {
            node,
            parent,
            end: NodeId(id.0 + size),
            slot,
        });
        id
    }

    fn stmts(&mut self, stmts: &'a [Stmt], parent: NodeId) {
        for (i, s) in stmts.iter().enumerate() {
            self.stmt(s, parent, Some(i));
        }
    }

    fn block(&mut self, b: &'a Block, parent: NodeId) {
        let id = self.push(NodeRef::Block(b), Some(parent), b.size(), None);
        self.stmts(&b.stmts, id);
    }

    fn stmt(&mut self, s: &'a Stmt, parent: NodeId, slot: Option<usize>) {
        let id = self.push(NodeRef::Stmt(s), Some(parent), s.size(), slot);
        for e in s.own_exprs() {
            self.expr(e, id);
        }
        match &s.kind {
            StmtKind::Compound(stmts) => self.stmts(stmts, id),
            StmtKind::For { body, .. } | StmtKind::Function { body, .. } => self.block(body, id),
            StmtKind::If { then, els, .. } => {
                self.block(then, id);
                if let Some(e) = els {
                    self.block(e, id);
                }
            }
            _ => {}
        }
    }

    fn expr(&mut self, e: &'a Expr, parent: NodeId) {
        let id = self.push(NodeRef::Expr(e), Some(parent), e.size(), None);
        for c in e.children() {
            self.expr(c, id);
        }
    }
}

/// Returns the node at `pos`.
pub fn subtree_at(program: &Program, pos: NodeId) -> Result<NodeRef<'_>, AstError> {
    if pos.0 >= program.size() {
        return Err(AstError::UnknownPosition(pos));
    }
    NodeTable::build(program).node(pos)
}

/// Code to splice into a program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fragment {
    Expr(Expr),
    Stmts(Vec<Stmt>),
}

impl Fragment {
    pub fn category(&self) -> &'static str {
        match self {
            Fragment::Expr(_) => "expression",
            Fragment::Stmts(_) => "statement sequence",
        }
    }
}

/// Replaces the node at `pos` with `fragment`.
///
/// An expression position takes an expression; a statement position takes a
/// statement sequence (which may grow or shrink the enclosing list); a block
/// or the translation unit takes a statement sequence that becomes its new
/// contents.
pub fn replace_at(program: &Program, pos: NodeId, fragment: Fragment) -> Result<Program, AstError> {
    let (container, slot, is_seq_container) = {
        let table = NodeTable::build(program);
        let entry = table.get(pos).ok_or(AstError::UnknownPosition(pos))?;
        match (entry.node, &fragment) {
            (NodeRef::Expr(_), Fragment::Expr(_)) => (None, None, false),
            (NodeRef::Stmt(_), Fragment::Stmts(_)) => (entry.parent, entry.slot, false),
            (NodeRef::Block(_) | NodeRef::Root(_), Fragment::Stmts(_)) => (None, None, true),
            (node, frag) => {
                return Err(AstError::CategoryMismatch {
                    pos,
                    expected: node.kind_name(),
                    found: frag.category(),
                })
            }
        }
    };
    let mut out = program.clone();
    out.lines.clear();
    match fragment {
        Fragment::Expr(e) => {
            let slot = expr_mut(&mut out, pos).ok_or(AstError::UnknownPosition(pos))?;
            *slot = e;
        }
        Fragment::Stmts(stmts) if is_seq_container => {
            let seq = seq_mut(&mut out, pos).ok_or(AstError::UnknownPosition(pos))?;
            *seq = stmts;
        }
        Fragment::Stmts(stmts) => {
            let container = container.ok_or(AstError::UnknownPosition(pos))?;
            let slot = slot.ok_or(AstError::UnknownPosition(pos))?;
            let seq = seq_mut(&mut out, container).ok_or(AstError::UnknownPosition(pos))?;
            seq.splice(slot..slot + 1, stmts);
        }
    }
    Ok(out)
}

/// Replaces `len` consecutive statements starting at `slot` of the sequence
/// container `container`.
pub fn replace_run(
    program: &Program,
    container: NodeId,
    slot: usize,
    len: usize,
    stmts: Vec<Stmt>,
) -> Result<Program, AstError> {
    let mut out = program.clone();
    out.lines.clear();
    let seq = seq_mut(&mut out, container).ok_or(AstError::UnknownPosition(container))?;
    if slot + len > seq.len() {
        return Err(AstError::UnknownPosition(container));
    }
    seq.splice(slot..slot + len, stmts);
    Ok(out)
}

enum NodeMut<'a> {
    Root(&'a mut Vec<Stmt>),
    Stmt(&'a mut Stmt),
    Block(&'a mut Block),
    Expr(&'a mut Expr),
}

/// Mutable access to the statement list of a sequence container.
pub fn seq_mut(program: &mut Program, id: NodeId) -> Option<&mut Vec<Stmt>> {
    match locate_mut(program, id)? {
        NodeMut::Root(items) => Some(items),
        NodeMut::Block(b) => Some(&mut b.stmts),
        NodeMut::Stmt(Stmt {
            kind: StmtKind::Compound(stmts),
            ..
        }) => Some(stmts),
        _ => None,
    }
}

pub fn expr_mut(program: &mut Program, id: NodeId) -> Option<&mut Expr> {
    match locate_mut(program, id)? {
        NodeMut::Expr(e) => Some(e),
        _ => None,
    }
}

pub fn stmt_mut(program: &mut Program, id: NodeId) -> Option<&mut Stmt> {
    match locate_mut(program, id)? {
        NodeMut::Stmt(s) => Some(s),
        _ => None,
    }
}

fn locate_mut(program: &mut Program, id: NodeId) -> Option<NodeMut<'_>> {
    if id == NodeId::ROOT {
        return Some(NodeMut::Root(&mut program.items));
    }
    find_in_stmts(&mut program.items, 1, id.0)
}

fn find_in_stmts(stmts: &mut [Stmt], mut next: u32, id: u32) -> Option<NodeMut<'_>> {
    for s in stmts.iter_mut() {
        let size = s.size();
        if id < next + size {
            return find_in_stmt(s, next, id);
        }
        next += size;
    }
    None
}

fn find_in_block(b: &mut Block, start: u32, id: u32) -> Option<NodeMut<'_>> {
    if id == start {
        return Some(NodeMut::Block(b));
    }
    find_in_stmts(&mut b.stmts, start + 1, id)
}

fn find_in_exprs<'a>(exprs: Vec<&'a mut Expr>, next: &mut u32, id: u32) -> Option<NodeMut<'a>> {
    for e in exprs {
        let size = e.size();
        if id < *next + size {
            return find_in_expr(e, *next, id);
        }
        *next += size;
    }
    None
}

fn find_in_expr(e: &mut Expr, start: u32, id: u32) -> Option<NodeMut<'_>> {
    if id == start {
        return Some(NodeMut::Expr(e));
    }
    let mut next = start + 1;
    find_in_exprs(e.children_mut(), &mut next, id)
}

fn find_in_stmt(s: &mut Stmt, start: u32, id: u32) -> Option<NodeMut<'_>> {
    if id == start {
        return Some(NodeMut::Stmt(s));
    }
    let mut next = start + 1;
    let exprs_size: u32 = s.own_exprs().iter().map(|e| e.size()).sum();
    if id < next + exprs_size {
        let exprs: Vec<&mut Expr> = match &mut s.kind {
            StmtKind::Decl { declarators, .. } => declarators
                .iter_mut()
                .flat_map(|d| d.extent.iter_mut().chain(d.init.iter_mut()))
                .collect(),
            StmtKind::Assign { target, value, .. } => vec![target, value],
            StmtKind::Expr(e) => vec![e],
            StmtKind::For { init, cond, step, .. } => {
                init.iter_mut().chain(cond.iter_mut()).chain(step.iter_mut()).collect()
            }
            StmtKind::If { cond, .. } => vec![cond],
            StmtKind::Return(e) => e.iter_mut().collect(),
            _ => vec![],
        };
        return find_in_exprs(exprs, &mut next, id);
    }
    next += exprs_size;
    match &mut s.kind {
        StmtKind::Compound(stmts) => find_in_stmts(stmts, next, id),
        StmtKind::For { body, .. } | StmtKind::Function { body, .. } => find_in_block(body, next, id),
        StmtKind::If { then, els, .. } => {
            let then_size = then.size();
            if id < next + then_size {
                find_in_block(then, next, id)
            } else {
                find_in_block(els.as_mut()?, next + then_size, id)
            }
        }
        _ => None,
    }
}
