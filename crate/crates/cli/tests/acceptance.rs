//! Acceptance run: one PASS/FAIL line per criterion, driven through the
//! `stmlforge` binary wherever a command exists for it.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use similar::{ChangeTag, TextDiff};

use stmlforge::annotations::{parse_pragma, Access, AnnotationStore};
use stmlforge::ast::{Expr, Program, Stmt, StmtKind};
use stmlforge::driver::{load_source, successors, State, Step};
use stmlforge::exec::{equivalent, random_env, run, AccessKind, Env, Part, RunOptions, Verdict, ABS_TOL, REL_TOL};
use stmlforge::metric::Metric;
use stmlforge::nodes::{NodeRef, NodeTable};
use stmlforge::parser::parse;
use stmlforge::printer::normalize_ws;
use stmlforge::properties::{canonical_loop, loop_offsets, Effects, LocationSet, Tri};
use stmlforge::rewrite::{app_matches, apply_match};
use stmlforge::rules::builtin_rules;

const FIG1_SEQUENCE: [&str; 5] = [
    "ForLoopFusion",
    "AugAdditionAssign",
    "JoinAssignments",
    "UndoDistribute",
    "LoopInvCodeMotion",
];
const FIG1_BUDGET: Duration = Duration::from_secs(1);
const SUITE_BUDGET: Duration = Duration::from_secs(30);
const TRIALS: usize = 100;
const CORPUS_MIN: usize = 20;
const BFS_DEPTH: usize = 3;
const EXHAUSTIVE_DEPTH: usize = 6;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn core_fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stmlforge"))
        .args(args)
        .env_remove("STMLFORGE_RULES")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn panel(n: usize) -> String {
    normalize_ws(&read(&core_fixture(&format!("panel{n}.c"))))
}

// ---- Figure 1 through `apply` ----------------------------------------------------

fn figure1_golden() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut file = core_fixture("fig1.c");
    let mut elapsed = Duration::ZERO;
    for (i, rule) in FIG1_SEQUENCE.iter().enumerate() {
        let path = file.to_str().unwrap().to_string();
        let listing: serde_json::Value =
            serde_json::from_str(&stdout(&cli(&["candidates", &path]))).map_err(|e| e.to_string())?;
        let pos: Vec<u64> = listing
            .as_array()
            .unwrap()
            .iter()
            .filter(|c| c["rule"] == *rule && c["verdict"] == "true")
            .map(|c| c["pos"].as_u64().unwrap())
            .collect();
        ensure(pos.len() == 1, || {
            format!("{rule}: expected one candidate, got {pos:?}")
        })?;
        let pos = pos[0].to_string();
        let t0 = Instant::now();
        let annotated = cli(&["apply", &path, "--rule", rule, "--pos", &pos]);
        let plain = cli(&["apply", &path, "--rule", rule, "--pos", &pos, "--plain"]);
        elapsed += t0.elapsed() / 2;
        ensure(annotated.status.success(), || format!("{rule}: {}", stderr(&annotated)))?;
        ensure(normalize_ws(&stdout(&plain)) == panel(i + 1), || {
            format!("after {rule}:\n{}\nexpected:\n{}", stdout(&plain), panel(i + 1))
        })?;
        file = dir.path().join(format!("p{}.c", i + 1));
        std::fs::write(&file, stdout(&annotated)).unwrap();
    }
    ensure(elapsed < FIG1_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("panels 1-5 reproduced, {elapsed:.2?} of applies"))
}

// ---- Table 1 and Listing 3 through `expand` ---------------------------------------------

fn pragma_set(lines: impl Iterator<Item = String>) -> Result<BTreeSet<String>, String> {
    let mut out = BTreeSet::new();
    for l in lines {
        for a in parse_pragma(&l, 1).map_err(|e| format!("{l}: {e}"))? {
            out.insert(a.pragma_text());
        }
    }
    Ok(out)
}

fn expansion_goldens() -> Check {
    for sk in ["map", "fold", "itn", "zipWith", "scanl"] {
        let o = cli(&["expand", core_fixture(&format!("table1/{sk}.c")).to_str().unwrap()]);
        ensure(o.status.success(), || stderr(&o))?;
        let got = pragma_set(
            stdout(&o)
                .lines()
                .filter_map(|l| l.trim().strip_prefix("#pragma "))
                .filter(|l| l.starts_with("stml"))
                .map(String::from),
        )?;
        let want = pragma_set(
            read(&core_fixture(&format!("table1/{sk}.stml")))
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(String::from),
        )?;
        ensure(got == want, || format!("{sk}: got {got:?}, expected {want:?}"))?;
    }
    let o = cli(&["expand", core_fixture("fig1.c").to_str().unwrap()]);
    ensure(
        normalize_ws(&stdout(&o)) == normalize_ws(&read(&core_fixture("listing3.c"))),
        || format!("Listing 1 expanded to:\n{}", stdout(&o)),
    )?;
    Ok("5 skeletons match; Listing 1 expands to Listing 3".into())
}

// ---- write sets ---------------------------------------------------------------------------

fn write_set_goldens() -> Check {
    let store = AnnotationStore::new();
    let fx = Effects::new(&store);
    let writes = |src: &str| -> BTreeSet<String> {
        let p = parse(src).unwrap();
        fx.stmts_writes(&p.items).locs.iter().map(ToString::to_string).collect()
    };
    let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
    ensure(writes("c = a + 3;") == set(&["c"]), || {
        format!("{:?}", writes("c = a + 3;"))
    })?;
    ensure(writes("c[i++] = a + 3;") == set(&["c[i]", "i"]), || {
        format!("{:?}", writes("c[i++] = a + 3;"))
    })?;
    let offs = |src: &str, mode| loop_offsets(&parse(src).unwrap().items[0], "c", mode, &store);
    let shifted = offs(
        "for (i = 1; i < N; i++) { c[i - 1] = i; c[i] = c[i - 1] * 2; }",
        Access::Writes,
    );
    ensure(shifted == Some(vec![-1, 0]), || format!("write offsets {shifted:?}"))?;
    let stencil = offs(
        "for (i = 0; i < N; i++) a += c[i - 1] + c[i + 1] - 2 * c[i];",
        Access::Reads,
    );
    ensure(stencil == Some(vec![-1, 0, 1]), || format!("read offsets {stencil:?}"))?;
    Ok("{c}, {c[i], i}, {-1,0}, {-1,0,1}".into())
}

// ---- corpus suites -----------------------------------------------------------------------

fn corpus() -> Vec<(String, State)> {
    let mut files: Vec<_> = std::fs::read_dir(core_fixture("corpus"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|f| {
            (
                f.file_name().unwrap().to_string_lossy().into_owned(),
                load_source(&read(&f)).unwrap(),
            )
        })
        .collect()
}

/// Every definite application reachable within `BFS_DEPTH` steps.
fn applications(start: &State) -> Vec<(State, State, String)> {
    let rules = builtin_rules();
    let mut seen = BTreeSet::from([start.text()]);
    let mut frontier = vec![start.clone()];
    let mut edges = Vec::new();
    for _ in 0..BFS_DEPTH {
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
                if seen.insert(after.text()) {
                    next.push(after.clone());
                }
                edges.push((s.clone(), after, format!("{} at {}", m.rule, m.pos)));
            }
        }
        frontier = next;
    }
    edges
}

fn semantic_preservation() -> Check {
    let t0 = Instant::now();
    let c = corpus();
    ensure(c.len() >= CORPUS_MIN, || format!("corpus has {} programs", c.len()))?;
    ensure(c.iter().any(|(n, _)| n.contains("fig1")), || {
        "Figure 1 missing from the corpus".into()
    })?;
    let mut checked = 0;
    let mut rules_seen = BTreeSet::new();
    for (name, st) in &c {
        for (before, after, label) in applications(st) {
            rules_seen.insert(label.split(' ').next().unwrap().to_string());
            if let Verdict::Fail(cx) = equivalent(&before.program, &after.program, None, TRIALS, 11) {
                return Err(format!("{name}: {label}: {cx}"));
            }
            checked += 1;
        }
    }
    let all: BTreeSet<String> = builtin_rules().into_iter().map(|r| r.name).collect();
    ensure(rules_seen == all, || {
        format!("rules never exercised: {:?}", all.difference(&rules_seen))
    })?;
    let dt = t0.elapsed();
    ensure(dt < SUITE_BUDGET, || format!("took {dt:?}"))?;
    Ok(format!(
        "{checked} applications on {} programs, {TRIALS} trials each, rel {REL_TOL:e} abs {ABS_TOL:e}, {dt:.1?}",
        c.len()
    ))
}

fn eval_in(env: &Env, e: &Expr) -> Option<i64> {
    let p = Program::new(vec![Stmt::new(StmtKind::Return(Some(e.clone())))]);
    run(&p, env, None, RunOptions::default()).ok()?.ret.map(|v| v.as_i64())
}

fn sets_for(s: &Stmt, part: Part, fx: &Effects<'_>) -> (LocationSet, LocationSet) {
    let header = |e: Option<&Expr>| {
        let e = e.expect("visited header part exists");
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

fn traces_covered(name: &str, st: &State) -> Result<usize, String> {
    let table = NodeTable::build(&st.program);
    let fx = Effects::new(&st.store);
    let mut n = 0;
    for seed in 0..3u64 {
        let input = random_env(&st.program, None, 8, &mut ChaCha8Rng::seed_from_u64(seed));
        let opts = RunOptions {
            trace: true,
            snapshots: true,
            ..RunOptions::default()
        };
        let Ok(r) = run(&st.program, &input, None, opts) else {
            continue;
        };
        for v in &r.visits {
            let NodeRef::Stmt(s) = table.node(v.stmt).unwrap() else {
                unreachable!()
            };
            let (reads, writes) = sets_for(s, v.part, &fx);
            let before = v.before.as_ref().unwrap();
            for ev in &v.events {
                let set = if ev.kind == AccessKind::Read { &reads } else { &writes };
                if set.may_contain(&ev.name, ev.index, &|e| eval_in(before, e)) == Tri::False {
                    return Err(format!(
                        "{name}: {:?} of {}{:?} at node {} escapes {set}",
                        ev.kind, ev.name, ev.index, v.stmt
                    ));
                }
                for &(lp, iv) in &ev.loops {
                    let (Some(index), NodeRef::Stmt(l)) = (ev.index, table.node(lp).unwrap()) else {
                        continue;
                    };
                    if canonical_loop(l).is_none() {
                        continue;
                    }
                    let mode = if ev.kind == AccessKind::Read {
                        Access::Reads
                    } else {
                        Access::Writes
                    };
                    if let Some(offs) = loop_offsets(l, &ev.name, mode, &st.store) {
                        if !offs.contains(&(index - iv)) {
                            return Err(format!(
                                "{name}: {}[{index}] at i={iv} outside {offs:?} of loop {lp}",
                                ev.name
                            ));
                        }
                    }
                }
                n += 1;
            }
        }
    }
    Ok(n)
}

fn trace_soundness() -> Check {
    let mut events = 0;
    let c = corpus();
    for (name, st) in &c {
        events += traces_covered(name, st)?;
        for (_, after, label) in applications(st) {
            events += traces_covered(&format!("{name} after {label}"), &after)?;
        }
    }
    ensure(events > 1000, || format!("only {events} events traced"))?;
    Ok(format!("{events} traced accesses covered"))
}

// ---- greedy derivations through `derive` -----------------------------------------------------

fn derive(args: &[&str]) -> Result<(Vec<Step>, String), String> {
    let start = core_fixture("fig1.c");
    let mut full = vec!["derive", start.to_str().unwrap()];
    full.extend_from_slice(args);
    let o = cli(&full);
    ensure(o.status.success(), || stderr(&o))?;
    let steps = stdout(&o)
        .lines()
        .map(|l| serde_json::from_str(l).map_err(|e| format!("{e}: {l}")))
        .collect::<Result<Vec<Step>, _>>()?;
    Ok((steps, stderr(&o)))
}

fn greedy_reproduction() -> Check {
    // Independent oracle: every code reachable in at most six definite
    // steps, with its distance.
    let start = load_source(&read(&core_fixture("fig1.c"))).unwrap();
    let rules = builtin_rules();
    let metric = Metric::default();
    let mut dist: BTreeMap<String, (usize, State)> = BTreeMap::from([(start.text(), (0, start.clone()))]);
    let mut frontier = vec![start];
    for d in 1..=EXHAUSTIVE_DEPTH {
        let mut next = Vec::new();
        for s in &frontier {
            for (_, succ, _) in successors(s, &rules, None).unwrap() {
                if let std::collections::btree_map::Entry::Vacant(slot) = dist.entry(succ.text()) {
                    slot.insert((d, succ.clone()));
                    next.push(succ);
                }
            }
        }
        frontier = next;
    }
    let best = dist.values().map(|(_, s)| metric.score(&s.program)).min().unwrap();
    let optimal: Vec<_> = dist
        .iter()
        .filter(|(_, (_, s))| metric.score(&s.program) == best)
        .collect();
    ensure(optimal.len() == 1 && normalize_ws(optimal[0].0) == panel(5), || {
        "panel 5 is not the unique optimum".into()
    })?;
    ensure(optimal[0].1 .0 == 5, || {
        format!("panel 5 at distance {}", optimal[0].1 .0)
    })?;

    let (steps, log) = derive(&["--oracle", "greedy", "--lookahead", "2"])?;
    ensure(steps.len() == 5, || format!("{} steps", steps.len()))?;
    ensure(log.contains("final"), || log.clone())?;
    let names: Vec<&str> = steps.iter().map(|s| s.rule.as_str()).collect();
    ensure(names == FIG1_SEQUENCE, || format!("{names:?}"))?;
    ensure(normalize_ws(&steps[4].after_text) == panel(5), || {
        steps[4].after_text.clone()
    })?;

    let (steps0, _) = derive(&["--oracle", "greedy", "--lookahead", "0"])?;
    let end = steps0
        .last()
        .map(|s| s.after_text.clone())
        .unwrap_or_else(|| read(&core_fixture("fig1.c")));
    ensure(normalize_ws(&end) != panel(5), || "lookahead 0 reached panel 5".into())?;
    let stuck = load_source(&end).unwrap();
    let here = metric.score(&stuck.program);
    let improving = successors(&stuck, &rules, None)
        .unwrap()
        .iter()
        .any(|(_, s, _)| metric.score(&s.program) < here);
    ensure(!improving, || "lookahead 0 stopped although a step improves".into())?;
    ensure(dist.contains_key(&stuck.text()), || {
        "lookahead 0 left the enumerated space".into()
    })?;
    Ok(format!(
        "L=2: 5 steps to panel 5 (unique optimum of {} codes); L=0: stops after {} step(s)",
        dist.len(),
        steps0.len()
    ))
}

// ---- oracle protocol -------------------------------------------------------------------------------

fn replay(script: &Path) -> String {
    format!("exec:{} {}", env!("CARGO_BIN_EXE_replay-oracle"), script.display())
}

fn oracle_protocol() -> Check {
    let recorded = fixture("fig1_selections.ndjson");
    let (steps, _) = derive(&["--oracle", &replay(&recorded)])?;
    let names: Vec<&str> = steps.iter().map(|s| s.rule.as_str()).collect();
    ensure(names == FIG1_SEQUENCE, || format!("{names:?}"))?;
    ensure(normalize_ws(&steps[4].after_text) == panel(5), || {
        steps[4].after_text.clone()
    })?;
    // A fresh recording of the built-in oracle is the stored script.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let rec = dir.path().join("rec.ndjson");
    derive(&[
        "--oracle",
        "greedy",
        "--lookahead",
        "2",
        "--record",
        rec.to_str().unwrap(),
    ])?;
    ensure(read(&rec) == read(&recorded), || {
        "recording differs from the stored script".into()
    })?;
    for bad in ["illegal.ndjson", "wrong_rule.ndjson"] {
        let o = cli(&[
            "derive",
            core_fixture("fig1.c").to_str().unwrap(),
            "--oracle",
            &replay(&fixture(bad)),
        ]);
        ensure(o.status.code() == Some(1), || {
            format!("{bad}: exit {:?}", o.status.code())
        })?;
        ensure(stderr(&o).contains("illegal selection"), || {
            format!("{bad}: {}", stderr(&o))
        })?;
    }
    Ok("replayed selections reproduce Figure 1; illegal selections rejected".into())
}

// ---- OpenMP backend --------------------------------------------------------------------------------

fn openmp_backend() -> Check {
    let src = fixture("panel5_map.c");
    let o = cli(&["translate", src.to_str().unwrap(), "--target", "openmp"]);
    ensure(o.status.success(), || stderr(&o))?;
    let before = read(&src);
    let after = stdout(&o);
    let diff = TextDiff::from_lines(&before, &after);
    let mut added = Vec::new();
    for ch in diff.iter_all_changes() {
        let line = ch.value().trim();
        match ch.tag() {
            ChangeTag::Insert => added.push(line.to_string()),
            ChangeTag::Delete => ensure(
                line.starts_with("#pragma polca") || line.starts_with("#pragma stml"),
                || format!("removed a code line: {line}"),
            )?,
            ChangeTag::Equal => {}
        }
    }
    ensure(added == ["#pragma omp parallel for"], || format!("added {added:?}"))?;
    let fold = cli(&[
        "translate",
        fixture("fold_sum.c").to_str().unwrap(),
        "--target",
        "openmp",
    ]);
    ensure(
        fold.status.code() == Some(1) && stderr(&fold).contains("not ready"),
        || stderr(&fold),
    )?;
    Ok("one pragma added, annotations removed; fold loop rejected".into())
}

fn main() {
    let criteria: &[Criterion] = &[
        ("figure-1 golden derivation via apply", figure1_golden),
        ("table-1 expansion and listing 3 via expand", expansion_goldens),
        ("write-set and loop-offset goldens", write_set_goldens),
        ("semantic preservation over the corpus", semantic_preservation),
        ("trace soundness over the corpus", trace_soundness),
        ("greedy oracle reproduction via derive", greedy_reproduction),
        ("oracle protocol conformance via exec stub", oracle_protocol),
        ("openmp backend and fold rejection", openmp_backend),
    ];
    let mut failed = 0;
    for &(name, check) in criteria {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS  {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL  {name}: panicked");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
