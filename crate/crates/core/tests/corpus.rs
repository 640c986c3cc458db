//! Property suites over the program corpus: every builtin-rule application
//! preserves behaviour, and the analyses over-approximate what the
//! interpreter observes.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stmlforge::annotations::{Access, AnnotationStore};
use stmlforge::ast::{Expr, NodeId, Program, Stmt, StmtKind};
use stmlforge::driver::{load_source, State};
use stmlforge::exec::{equivalent, random_env, run, AccessKind, Env, Part, RunOptions, Verdict};
use stmlforge::nodes::{expr_mut, seq_mut, subtree_at, Fragment, NodeRef, NodeTable};
use stmlforge::properties::{canonical_loop, loop_offsets, Effects, LocationSet, Tri};
use stmlforge::rewrite::{app_matches, apply_match, instantiate_pattern, Span};
use stmlforge::rules::builtin_rules;

const TRIALS: usize = 100;
const DEPTH: usize = 3;

fn corpus() -> Vec<(String, State)> {
    let dir = format!("{}/tests/fixtures/corpus", env!("CARGO_MANIFEST_DIR"));
    let mut files: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files
        .into_iter()
        .map(|f| {
            let name = f.file_name().unwrap().to_string_lossy().into_owned();
            let st = load_source(&std::fs::read_to_string(&f).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
            (name, st)
        })
        .collect()
}

/// Every state reachable within `DEPTH` definite rule applications,
/// paired with the applications leaving it.
fn explore(start: &State) -> Vec<(State, State, String)> {
    let rules = builtin_rules();
    let mut edges = Vec::new();
    let mut seen = BTreeMap::new();
    seen.insert(start.text(), ());
    let mut frontier = vec![start.clone()];
    for _ in 0..DEPTH {
        let mut next = Vec::new();
        for s in &frontier {
            for m in app_matches(&s.program, &s.store, &rules).unwrap() {
                if m.verdict != Tri::True {
                    continue;
                }
                let rule = rules.iter().find(|r| r.name == m.rule).unwrap();
                let t = apply_match(&s.program, &s.store, rule, &m).unwrap();
                let after = State {
                    program: t.program,
                    store: t.store,
                };
                let label = format!("{} at {}", m.rule, m.pos);
                if seen.insert(after.text(), ()).is_none() {
                    next.push(after.clone());
                }
                edges.push((s.clone(), after, label));
            }
        }
        frontier = next;
    }
    edges
}

#[test]
fn corpus_has_twenty_programs_and_exercises_every_rule() {
    let c = corpus();
    assert!(c.len() >= 20);
    let mut used = BTreeMap::new();
    for (_, st) in &c {
        for (_, _, label) in explore(st) {
            *used.entry(label.split(' ').next().unwrap().to_string()).or_insert(0) += 1;
        }
    }
    for r in builtin_rules() {
        assert!(used.contains_key(&r.name), "{} never applied: {used:?}", r.name);
    }
}

#[test]
fn every_application_preserves_semantics() {
    let t0 = Instant::now();
    let mut checked = 0;
    for (name, st) in corpus() {
        for (before, after, label) in explore(&st) {
            match equivalent(&before.program, &after.program, None, TRIALS, 11) {
                Verdict::Pass { .. } => checked += 1,
                Verdict::Fail(cx) => panic!(
                    "{name}: {label} changed behaviour: {cx}\n--- before\n{}\n--- after\n{}",
                    before.text(),
                    after.text()
                ),
            }
        }
    }
    assert!(checked >= 30, "only {checked} applications discovered");
    assert!(t0.elapsed().as_secs() < 30);
}

fn eval_in(env: &Env, e: &Expr) -> Option<i64> {
    let p = Program::new(vec![Stmt::new(StmtKind::Return(Some(e.clone())))]);
    run(&p, env, None, RunOptions::default()).ok()?.ret.map(|v| v.as_i64())
}

fn sets_for(table: &NodeTable<'_>, store: &AnnotationStore, id: NodeId, part: Part) -> (LocationSet, LocationSet) {
    let fx = Effects::new(store);
    let NodeRef::Stmt(s) = table.node(id).unwrap() else {
        panic!("visit of a non-statement")
    };
    let header = |e: Option<&Expr>| {
        let e = e.expect("header part exists");
        (fx.expr_reads(e), fx.expr_writes(e))
    };
    match (part, &s.kind) {
        (Part::Whole, _) => (fx.stmt_reads(s), fx.stmt_writes(s)),
        (Part::Init, StmtKind::For { init, .. }) => header(init.as_ref()),
        (Part::Cond, StmtKind::For { cond, .. }) => header(cond.as_ref()),
        (Part::Step, StmtKind::For { step, .. }) => header(step.as_ref()),
        (Part::Cond, StmtKind::If { cond, .. }) => header(Some(cond)),
        other => panic!("unexpected visit {other:?}"),
    }
}

fn check_traces(name: &str, st: &State) -> usize {
    let table = NodeTable::build(&st.program);
    let mut events = 0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = random_env(&st.program, None, 8, &mut rng);
        let opts = RunOptions {
            trace: true,
            snapshots: true,
            ..RunOptions::default()
        };
        let Ok(r) = run(&st.program, &input, None, opts) else {
            continue;
        };
        for v in &r.visits {
            let (reads, writes) = sets_for(&table, &st.store, v.stmt, v.part);
            let before = v.before.as_ref().unwrap();
            for ev in &v.events {
                let set = if ev.kind == AccessKind::Read { &reads } else { &writes };
                let verdict = set.may_contain(&ev.name, ev.index, &|e| eval_in(before, e));
                assert_ne!(
                    verdict,
                    Tri::False,
                    "{name}: {:?} of {}{:?} at node {} ({:?}) not covered by {:?}",
                    ev.kind,
                    ev.name,
                    ev.index,
                    v.stmt,
                    v.part,
                    set
                );
                events += 1;
            }
        }
        // Offsets: every access inside a canonical loop sits at a declared
        // offset from the loop index.
        for (id, entry) in table.iter() {
            let NodeRef::Stmt(s) = entry.node else { continue };
            if canonical_loop(s).is_none() {
                continue;
            }
            for v in &r.visits {
                for ev in &v.events {
                    let (Some(index), Some(&(_, iv))) = (ev.index, ev.loops.iter().find(|(l, _)| *l == id)) else {
                        continue;
                    };
                    let mode = if ev.kind == AccessKind::Read {
                        Access::Reads
                    } else {
                        Access::Writes
                    };
                    if let Some(offs) = loop_offsets(s, &ev.name, mode, &st.store) {
                        assert!(
                            offs.contains(&(index - iv)),
                            "{name}: {}[{index}] at i={iv} outside offsets {offs:?} of loop {id}",
                            ev.name
                        );
                    }
                }
            }
        }
    }
    events
}

#[test]
fn traced_accesses_are_covered_by_the_analyses() {
    let mut total = 0;
    for (name, st) in corpus() {
        total += check_traces(&name, &st);
        for (_, after, label) in explore(&st) {
            total += check_traces(&format!("{name} after {label}"), &after);
        }
    }
    assert!(total > 1000, "only {total} events checked");
}

#[test]
fn matches_reinstantiate_to_the_matched_code() {
    let rules = builtin_rules();
    for (name, st) in corpus() {
        for (s, _, _) in explore(&st) {
            for m in app_matches(&s.program, &s.store, &rules).unwrap() {
                let rule = rules.iter().find(|r| r.name == m.rule).unwrap();
                let got = instantiate_pattern(rule, &s.program, &s.store, &m.bindings).unwrap();
                let expected = match m.span {
                    Span::Expr(pos) => Fragment::Expr(subtree_at(&s.program, pos).unwrap().as_expr().unwrap().clone()),
                    Span::Run { container, slot, len } => {
                        let table = NodeTable::build(&s.program);
                        let seq = table.node(container).unwrap().sequence().unwrap();
                        Fragment::Stmts(seq[slot..slot + len].to_vec())
                    }
                };
                assert_eq!(got, expected, "{name}: {} at {}", m.rule, m.pos);
            }
        }
    }
}

#[test]
fn rewrites_only_touch_the_matched_region() {
    let rules = builtin_rules();
    for (name, st) in corpus() {
        for m in app_matches(&st.program, &st.store, &rules).unwrap() {
            if m.verdict != Tri::True {
                continue;
            }
            let rule = rules.iter().find(|r| r.name == m.rule).unwrap();
            let after = apply_match(&st.program, &st.store, rule, &m).unwrap().program;
            let mut restored = after.clone();
            match m.span {
                Span::Expr(pos) => {
                    *expr_mut(&mut restored, pos).unwrap() =
                        subtree_at(&st.program, pos).unwrap().as_expr().unwrap().clone();
                }
                Span::Run { container, slot, len } => {
                    let table = NodeTable::build(&st.program);
                    let old = table.node(container).unwrap().sequence().unwrap().to_vec();
                    let seq = seq_mut(&mut restored, container).unwrap();
                    let tail = old.len() - slot - len;
                    assert_eq!(seq[..slot], old[..slot], "{name}: prefix changed");
                    assert_eq!(seq[seq.len() - tail..], old[slot + len..], "{name}: suffix changed");
                    *seq = old;
                }
            }
            assert_eq!(
                restored, st.program,
                "{name}: {} at {} edited outside its match",
                m.rule, m.pos
            );
        }
    }
}

#[test]
fn annotations_never_flip_a_decided_verdict() {
    let rules = builtin_rules();
    for (name, st) in corpus() {
        let with: BTreeMap<_, _> = app_matches(&st.program, &st.store, &rules)
            .unwrap()
            .into_iter()
            .map(|m| ((m.rule, m.pos, m.alt), m.verdict))
            .collect();
        let bare = AnnotationStore::new();
        for m in app_matches(&st.program, &bare, &rules).unwrap() {
            let key = (m.rule.clone(), m.pos, m.alt);
            match with.get(&key) {
                Some(v) => assert!(
                    m.verdict != Tri::True || *v == Tri::True,
                    "{name}: {key:?} lost its verdict"
                ),
                None => panic!("{name}: {key:?} became inapplicable once annotations were added"),
            }
        }
    }
}

#[test]
fn integer_figure1_panels_are_equivalent() {
    let p0 = load_source(
        &std::fs::read_to_string(format!(
            "{}/tests/fixtures/corpus/02_fig1_int.c",
            env!("CARGO_MANIFEST_DIR")
        ))
        .unwrap(),
    )
    .unwrap();
    let p5 =
        load_source("int c[N], v[N], a, b;\nint k = a + b;\nfor (int i = 0; i < N; i++) c[i] = k * v[i];").unwrap();
    assert!(equivalent(&p0.program, &p5.program, None, TRIALS, 3).passed());
    let mutant = load_source("int c[N], v[N], a, b;\nfor (int i = 0; i < N; i++) c[i] = a * v[i] - b * v[i];").unwrap();
    match equivalent(&p0.program, &mutant.program, None, TRIALS, 3) {
        Verdict::Fail(cx) => assert!(cx.location.starts_with("c[")),
        Verdict::Pass { .. } => panic!("mutant not detected"),
    }
}

#[test]
fn every_corpus_program_runs_on_random_inputs() {
    for (name, st) in corpus() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let input = random_env(&st.program, None, 8, &mut rng);
        if let Err(e) = run(&st.program, &input, None, RunOptions::default()) {
            panic!("{name}: {e}");
        }
    }
}
