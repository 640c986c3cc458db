//! Translation readiness and the OpenMP backend.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::annotations::{Access, Ann, AnnotationStore, PolcaAnnotation, StmlProperty};
use crate::ast::{Expr, NodeId, Program, Stmt, StmtKind};
use crate::nodes::{NodeRef, NodeTable};
use crate::printer::print_with;
use crate::properties::{canonical_loop, loop_offsets, Effects, Loc};

/// Calls treated as I/O by the mpi readiness check.
pub const DEFAULT_IO_NAMES: &[&str] = &[
    "printf", "fprintf", "puts", "putchar", "scanf", "fscanf", "getchar", "fopen", "fclose", "fread", "fwrite",
    "fgets", "fputs",
];

pub const OMP_PRAGMA: &str = "omp parallel for";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Openmp,
    Mpi,
}

impl std::str::FromStr for Target {
    type Err = TranslateError;

    fn from_str(s: &str) -> Result<Target, TranslateError> {
        match s {
            "openmp" => Ok(Target::Openmp),
            "mpi" => Ok(Target::Mpi),
            other => Err(TranslateError::UnknownTarget(other.to_string())),
        }
    }
}

impl std::fmt::Display for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Target::Openmp => "openmp",
            Target::Mpi => "mpi",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Blocker {
    pub pos: NodeId,
    pub reason: String,
}

/// Why a loop may run its iterations in parallel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Evidence {
    Annotated,
    Proved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Report {
    pub target: Target,
    pub ready: bool,
    /// Outermost loops that will be parallelized.
    pub parallel: Vec<(NodeId, Evidence)>,
    pub blocking: Vec<Blocker>,
    /// Statements performing I/O (mpi only).
    pub io: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TranslateError {
    #[error("unknown target `{0}` (expected openmp or mpi)")]
    UnknownTarget(String),
    #[error("code is not ready for {target}: {}", describe(.blocking))]
    NotReady { target: Target, blocking: Vec<Blocker> },
}

fn describe(b: &[Blocker]) -> String {
    b.iter()
        .map(|x| format!("node {}: {}", x.pos, x.reason))
        .collect::<Vec<_>>()
        .join("; ")
}

fn locals(body: &[Stmt]) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for s in body.iter().flat_map(Stmt::preorder) {
        if let StmtKind::Decl { declarators, .. } = &s.kind {
            out.extend(declarators.iter().map(|d| d.name.clone()));
        }
        for e in s.own_exprs() {
            for x in e.preorder() {
                if let Expr::DeclInit { name, .. } = x {
                    out.insert(name.clone());
                }
            }
        }
    }
    out
}

/// Syntactic independence proof: a canonical loop with known effects that
/// writes no shared scalar and touches every array it writes only at the
/// current iteration's element.
pub fn provably_independent(s: &Stmt, store: &AnnotationStore) -> Result<(), String> {
    let cl = canonical_loop(s).ok_or("not a canonical counted loop")?;
    let fx = Effects::new(store);
    let writes = fx.stmts_writes(cl.body);
    let reads = fx.stmts_reads(cl.body);
    if writes.unknown || reads.unknown {
        return Err("body has unknown effects".into());
    }
    let private = locals(cl.body);
    let mut arrays = BTreeSet::new();
    for l in &writes.locs {
        match l {
            Loc::Var(n) if !private.contains(n) => return Err(format!("body writes shared variable `{n}`")),
            Loc::Elem(n, _) => {
                arrays.insert(n.clone());
            }
            _ => {}
        }
    }
    for a in arrays {
        for mode in [Access::Reads, Access::Writes] {
            match loop_offsets(s, &a, mode, store) {
                Some(offs) if offs.iter().all(|&o| o == 0) => {}
                _ => return Err(format!("`{a}` is accessed across iterations")),
            }
        }
    }
    Ok(())
}

fn skeleton_at(store: &AnnotationStore, pos: NodeId) -> Option<&PolcaAnnotation> {
    store.at(pos).iter().find_map(|e| match &e.ann {
        Ann::Polca(p) if p.is_skeleton() => Some(p),
        _ => None,
    })
}

fn calls_in(s: &Stmt) -> impl Iterator<Item = &str> {
    s.own_exprs()
        .into_iter()
        .flat_map(|e| e.preorder())
        .filter_map(|e| match e {
            Expr::Call { name, .. } => Some(name.as_str()),
            _ => None,
        })
}

pub fn readiness(p: &Program, store: &AnnotationStore, target: Target, io_names: &[&str]) -> Report {
    let table = NodeTable::build(p);
    let mut report = Report {
        target,
        ready: true,
        parallel: Vec::new(),
        blocking: Vec::new(),
        io: Vec::new(),
    };
    for (id, entry) in table.iter() {
        let NodeRef::Stmt(s) = entry.node else { continue };
        if target == Target::Mpi && calls_in(s).any(|c| io_names.contains(&c)) {
            report.io.push(id);
            report.blocking.push(Blocker {
                pos: id,
                reason: "statement performs I/O".into(),
            });
        }
        if !s.is_loop() || !table.enclosing_loops(id).is_empty() {
            continue;
        }
        let annotated = store.has_at(id, &StmlProperty::IterationIndependent);
        match skeleton_at(store, id) {
            _ if annotated => report.parallel.push((id, Evidence::Annotated)),
            Some(sk) => report.blocking.push(Blocker {
                pos: id,
                reason: format!(
                    "`{}` loop is not iteration independent",
                    sk.to_string().split_whitespace().next().unwrap_or("skeleton")
                ),
            }),
            None => match provably_independent(s, store) {
                Ok(()) => report.parallel.push((id, Evidence::Proved)),
                Err(why) => report.blocking.push(Blocker { pos: id, reason: why }),
            },
        }
    }
    report.ready = report.blocking.is_empty();
    report
}

/// Prints `p` with an OpenMP work-sharing pragma above every outermost
/// loop and without any other annotation.
pub fn emit_openmp(p: &Program, store: &AnnotationStore) -> Result<String, TranslateError> {
    let report = readiness(p, store, Target::Openmp, DEFAULT_IO_NAMES);
    if !report.ready {
        return Err(TranslateError::NotReady {
            target: Target::Openmp,
            blocking: report.blocking,
        });
    }
    let marked: BTreeSet<NodeId> = report.parallel.iter().map(|(id, _)| *id).collect();
    // Opaque pragmas (already present platform idioms) survive; raw pragma
    // text on the tree is honoured too, for programs loaded without a store.
    let hook = |id: NodeId, s: &Stmt| {
        let mut lines: Vec<String> = store
            .at(id)
            .iter()
            .filter_map(|e| match &e.ann {
                Ann::Opaque(t) => Some(t.clone()),
                _ => None,
            })
            .collect();
        for t in &s.pragmas {
            let head = t.split_whitespace().next().unwrap_or("");
            if head != "polca" && head != "stml" && !lines.contains(t) {
                lines.push(t.clone());
            }
        }
        if marked.contains(&id) && !lines.iter().any(|l| l == OMP_PRAGMA) {
            lines.push(OMP_PRAGMA.to_string());
        }
        lines
    };
    Ok(print_with(p, &hook))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{expand_polca, parse_pragmas};
    use crate::parser::parse;

    fn load(src: &str) -> (Program, AnnotationStore) {
        let p = parse(src).unwrap();
        let store = expand_polca(&p, &parse_pragmas(&p).unwrap()).unwrap();
        (p.without_pragmas(), store)
    }

    #[test]
    fn fold_is_blocking() {
        let (p, s) = load("#pragma polca fold F 0 v a\nfor (int i = 0; i < N; i++) a = a + v[i];");
        let r = readiness(&p, &s, Target::Openmp, DEFAULT_IO_NAMES);
        assert!(!r.ready);
        assert!(emit_openmp(&p, &s).is_err());
    }

    #[test]
    fn map_is_parallel() {
        let (p, s) = load("#pragma polca map F v c\nfor (int i = 0; i < N; i++) c[i] = f(v[i]);");
        let r = readiness(&p, &s, Target::Openmp, DEFAULT_IO_NAMES);
        assert_eq!(r.parallel, vec![(NodeId(1), Evidence::Annotated)]);
        let out = emit_openmp(&p, &s).unwrap();
        assert!(out.starts_with("#pragma omp parallel for\nfor"), "{out}");
    }

    #[test]
    fn proof_rejects_shifted_reads() {
        let (p, s) = load("for (int i = 1; i < N; i++) c[i] = c[i - 1] + 1;");
        let r = readiness(&p, &s, Target::Openmp, DEFAULT_IO_NAMES);
        assert!(!r.ready);
        let (p, s) = load("for (int i = 0; i < N; i++) { float t = v[i]; c[i] = t * t; }");
        assert!(readiness(&p, &s, Target::Openmp, DEFAULT_IO_NAMES).ready);
    }

    #[test]
    fn mpi_flags_io() {
        let (p, s) = load("for (int i = 0; i < N; i++) printf(c[i]);");
        let r = readiness(&p, &s, Target::Mpi, DEFAULT_IO_NAMES);
        assert_eq!(r.io.len(), 1);
        assert_ne!(r.io[0], NodeId(1));
        assert!("cuda".parse::<Target>().is_err());
    }
}
