//! Cost model used by the greedy oracle.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::ast::{AssignOp, Expr, Program, Stmt, StmtKind};
use crate::printer::print_expr;

/// Weighted program cost. Lower is better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metric {
    /// Per statement nested in a loop body.
    pub statement: i64,
    /// Per loop.
    pub lp: i64,
    /// Per distinct array element read in a loop body (counted per loop).
    pub array_read: i64,
    /// Per arithmetic operator in a loop body, compound assignments included.
    pub arith: i64,
}

impl Default for Metric {
    fn default() -> Self {
        Metric {
            statement: 1,
            lp: 4,
            array_read: 1,
            arith: 1,
        }
    }
}

fn array_reads(e: &Expr, out: &mut BTreeSet<String>) {
    match e {
        Expr::Assign { op, target, value } => {
            if *op != AssignOp::Set {
                array_reads(target, out);
            } else if let Expr::Index { index, .. } = &**target {
                array_reads(index, out);
            }
            array_reads(value, out);
        }
        Expr::Index { index, .. } => {
            out.insert(print_expr(e));
            array_reads(index, out);
        }
        _ => e.children().into_iter().for_each(|c| array_reads(c, out)),
    }
}

fn arith_ops(e: &Expr) -> i64 {
    let own = match e {
        Expr::Binary { op, .. } if op.is_arithmetic() => 1,
        Expr::Assign { op, .. } if *op != AssignOp::Set => 1,
        _ => 0,
    };
    own + e.children().into_iter().map(arith_ops).sum::<i64>()
}

fn stmt_exprs(s: &Stmt) -> Vec<Expr> {
    match &s.kind {
        StmtKind::Assign { op, target, value } => vec![Expr::Assign {
            op: *op,
            target: Box::new(target.clone()),
            value: Box::new(value.clone()),
        }],
        _ => s.own_exprs().into_iter().cloned().collect(),
    }
}

impl Metric {
    pub fn score(&self, p: &Program) -> i64 {
        let mut total = 0;
        for item in &p.items {
            for s in item.preorder() {
                let StmtKind::For { body, .. } = &s.kind else { continue };
                total += self.lp;
                let mut reads = BTreeSet::new();
                for inner in body.stmts.iter().flat_map(Stmt::preorder) {
                    total += self.statement;
                    for e in stmt_exprs(inner) {
                        array_reads(&e, &mut reads);
                        total += self.arith * arith_ops(&e);
                    }
                }
                total += self.array_read * reads.len() as i64;
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;

    #[test]
    fn counts_loop_work() {
        let p = parse("for (int i = 0; i < N; i++) c[i] += b * v[i];").unwrap();
        // one loop, one statement, reads {c[i], v[i]}, operators += and *
        assert_eq!(Metric::default().score(&p), 4 + 1 + 2 + 2);
        assert_eq!(Metric::default().score(&parse("x = a + b;").unwrap()), 0);
    }
}
