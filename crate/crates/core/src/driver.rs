//! Derivations: interactive sessions, the oracle interface (built-in
//! greedy search or an external peer over NDJSON), and the derive loop.

use std::cell::RefCell;
use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, Command, Stdio};
use std::rc::Rc;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::time::Duration;

use log::debug;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{expand_polca, parse_pragmas, Ann, AnnError, AnnotationStore, PolcaAnnotation, Warning};
use crate::ast::{NodeId, Program};
use crate::error::AstError;
use crate::metric::Metric;
use crate::parser::parse;
use crate::printer::print;
use crate::properties::Tri;
use crate::rewrite::{app_matches, apply_match, trans, RewriteError};
use crate::rules::Rule;
use crate::translate::{readiness, Target, DEFAULT_IO_NAMES};

pub const DEFAULT_BUDGET: usize = 64;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("oracle did not answer within {0:?}")]
    Timeout(Duration),
    #[error("malformed oracle message: {0}")]
    Malformed(String),
    #[error("illegal selection: {0}")]
    IllegalSelection(String),
    #[error("oracle channel failed: {0}")]
    Channel(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DriverError {
    #[error(transparent)]
    Parse(#[from] AstError),
    #[error(transparent)]
    Annotation(#[from] AnnError),
    #[error(transparent)]
    Rewrite(#[from] RewriteError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("no successor: no rule of {{{0}}} applies")]
    NoSuccessor(String),
    #[error("nothing to undo")]
    NothingToUndo,
    #[error("nothing to redo")]
    NothingToRedo,
}

/// A program together with its annotations; the program carries no
/// pragma text of its own.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct State {
    pub program: Program,
    pub store: AnnotationStore,
}

impl State {
    /// Canonical program text without annotations.
    pub fn text(&self) -> String {
        print(&self.program)
    }

    /// Canonical text with every annotation as a pragma line.
    pub fn annotated(&self) -> String {
        crate::annotations::emit_pragmas(&self.program, &self.store).unwrap_or_else(|_| self.text())
    }

    /// Annotated text as printed by `expand`: skeleton input/output lines
    /// are elided unless `keep_io` is set.
    pub fn expanded(&self, keep_io: bool) -> String {
        let keep = |e: &crate::annotations::Entry| {
            keep_io
                || !matches!(
                    e.ann,
                    Ann::Polca(PolcaAnnotation::Input(_) | PolcaAnnotation::Output(_))
                )
        };
        crate::annotations::emit_filtered(&self.program, &self.store, &keep).unwrap_or_else(|_| self.text())
    }

    pub fn platform(&self) -> Option<String> {
        self.store.iter().find_map(|(_, e)| match &e.ann {
            Ann::Polca(PolcaAnnotation::Platform(p)) => Some(p.clone()),
            _ => None,
        })
    }
}

/// Parses source text, resolves its pragmas and expands skeleton
/// annotations into properties.
pub fn load_source(src: &str) -> Result<State, DriverError> {
    let p = parse(src)?;
    let store = parse_pragmas(&p)?;
    let store = expand_polca(&p, &store)?;
    Ok(State {
        program: p.without_pragmas(),
        store,
    })
}

/// One applied rule. Texts are canonical and annotation-free.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub step: usize,
    pub rule: String,
    pub pos: NodeId,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub alt: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub forced: bool,
    pub before_text: String,
    pub after_text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

fn warning_text(w: &Warning) -> String {
    format!("node {}: dropped `{}`: {}", w.pos, w.pragma, w.reason)
}

/// Derivation log: one JSON object per line.
pub fn log_jsonl(steps: &[Step]) -> String {
    steps
        .iter()
        .map(|s| serde_json::to_string(s).expect("steps serialize") + "\n")
        .collect()
}

/// A candidate rule application with its verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CandidateInfo {
    pub rule: String,
    pub pos: NodeId,
    #[serde(skip_serializing_if = "is_zero")]
    pub alt: usize,
    pub verdict: Tri,
}

pub fn find_rule<'r>(rules: &'r [Rule], name: &str) -> Result<&'r Rule, DriverError> {
    rules
        .iter()
        .find(|r| r.name == name)
        .ok_or_else(|| DriverError::Rewrite(RewriteError::UnknownRule(name.to_string())))
}

pub fn candidates(state: &State, rules: &[Rule]) -> Result<Vec<CandidateInfo>, DriverError> {
    Ok(app_matches(&state.program, &state.store, rules)?
        .into_iter()
        .map(|m| CandidateInfo {
            rule: m.rule,
            pos: m.pos,
            alt: m.alt,
            verdict: m.verdict,
        })
        .collect())
}

/// Applies one rule; `step` numbers the resulting log entry.
pub fn apply(
    state: &State,
    rules: &[Rule],
    rule: &str,
    pos: NodeId,
    alt: usize,
    force: bool,
    step: usize,
) -> Result<(State, Step), DriverError> {
    let r = find_rule(rules, rule)?;
    let t = trans(&state.program, &state.store, r, pos, alt, force)?;
    let next = State {
        program: t.program,
        store: t.store,
    };
    let record = Step {
        step,
        rule: rule.to_string(),
        pos,
        alt,
        forced: force,
        before_text: state.text(),
        after_text: next.text(),
        warnings: t.warnings.iter().map(warning_text).collect(),
    };
    Ok((next, record))
}

/// Successors through definitely-applicable candidates of the given rules,
/// one per distinct resulting text, in candidate order.
pub fn successors(
    state: &State,
    rules: &[Rule],
    only: Option<&[String]>,
) -> Result<Vec<(CandidateInfo, State, Vec<Warning>)>, DriverError> {
    let mut out = Vec::new();
    let mut texts = BTreeSet::new();
    for m in app_matches(&state.program, &state.store, rules)? {
        if m.verdict != Tri::True || only.is_some_and(|o| !o.contains(&m.rule)) {
            continue;
        }
        let rule = find_rule(rules, &m.rule)?;
        let t = apply_match(&state.program, &state.store, rule, &m)?;
        let next = State {
            program: t.program,
            store: t.store,
        };
        if !texts.insert(next.text()) {
            continue;
        }
        out.push((
            CandidateInfo {
                rule: m.rule,
                pos: m.pos,
                alt: m.alt,
                verdict: m.verdict,
            },
            next,
            t.warnings,
        ));
    }
    Ok(out)
}

// ---- sessions -----------------------------------------------------------------

/// What is needed to rebuild a session: its source and applied steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub id: String,
    pub target: Option<String>,
    pub source: String,
    pub steps: Vec<SnapshotStep>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotStep {
    pub rule: String,
    pub pos: NodeId,
    #[serde(default)]
    pub alt: usize,
    #[serde(default)]
    pub forced: bool,
}

pub struct Session {
    pub id: String,
    pub target: Option<String>,
    source: String,
    rules: Arc<Vec<Rule>>,
    states: Vec<State>,
    steps: Vec<Step>,
    redo: Vec<(Step, State)>,
}

impl Session {
    pub fn new(
        id: impl Into<String>,
        source: &str,
        target: Option<String>,
        rules: Arc<Vec<Rule>>,
    ) -> Result<Session, DriverError> {
        let initial = load_source(source)?;
        let target = target.or_else(|| initial.platform());
        Ok(Session {
            id: id.into(),
            target,
            source: source.to_string(),
            rules,
            states: vec![initial],
            steps: Vec::new(),
            redo: Vec::new(),
        })
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn current(&self) -> &State {
        self.states.last().expect("a session always has its initial state")
    }

    pub fn initial(&self) -> &State {
        &self.states[0]
    }

    pub fn history(&self) -> &[Step] {
        &self.steps
    }

    pub fn candidates(&self) -> Result<Vec<CandidateInfo>, DriverError> {
        candidates(self.current(), &self.rules)
    }

    /// The state a candidate would produce, without applying it.
    pub fn preview(&self, c: &CandidateInfo) -> Result<State, DriverError> {
        let (next, _) = apply(self.current(), &self.rules, &c.rule, c.pos, c.alt, true, 0)?;
        Ok(next)
    }

    pub fn apply(&mut self, rule: &str, pos: NodeId, alt: usize, force: bool) -> Result<&Step, DriverError> {
        let (next, step) = apply(self.current(), &self.rules, rule, pos, alt, force, self.steps.len() + 1)?;
        self.states.push(next);
        self.steps.push(step);
        self.redo.clear();
        Ok(self.steps.last().expect("just pushed"))
    }

    pub fn undo(&mut self) -> Result<Step, DriverError> {
        let step = self.steps.pop().ok_or(DriverError::NothingToUndo)?;
        let state = self.states.pop().expect("one state per step");
        self.redo.push((step.clone(), state));
        Ok(step)
    }

    pub fn redo(&mut self) -> Result<&Step, DriverError> {
        let (step, state) = self.redo.pop().ok_or(DriverError::NothingToRedo)?;
        self.steps.push(step);
        self.states.push(state);
        Ok(self.steps.last().expect("just pushed"))
    }

    pub fn export_log(&self) -> String {
        log_jsonl(&self.steps)
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            id: self.id.clone(),
            target: self.target.clone(),
            source: self.source.clone(),
            steps: self
                .steps
                .iter()
                .map(|s| SnapshotStep {
                    rule: s.rule.clone(),
                    pos: s.pos,
                    alt: s.alt,
                    forced: s.forced,
                })
                .collect(),
        }
    }

    /// Rebuilds a session by replaying its steps from the source.
    pub fn restore(snap: &Snapshot, rules: Arc<Vec<Rule>>) -> Result<Session, DriverError> {
        let mut s = Session::new(snap.id.clone(), &snap.source, snap.target.clone(), rules)?;
        for st in &snap.steps {
            s.apply(&st.rule, st.pos, st.alt, st.forced)?;
        }
        Ok(s)
    }
}

// ---- oracles --------------------------------------------------------------------

/// A successor code offered to the oracle.
#[derive(Debug, Clone)]
pub struct Offer {
    pub code_id: String,
    pub code: String,
    /// Rules definitely applicable to this code.
    pub rules: Vec<String>,
    pub state: State,
    pub via: CandidateInfo,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub code_id: String,
    pub rule: Option<String>,
}

pub trait Oracle {
    fn select_rule(&mut self, offers: &[Offer]) -> Result<Selection, OracleError>;
    fn is_final(&mut self, code_id: &str, state: &State, target: &str) -> Result<bool, OracleError>;
}

impl<O: Oracle + ?Sized> Oracle for &mut O {
    fn select_rule(&mut self, offers: &[Offer]) -> Result<Selection, OracleError> {
        (**self).select_rule(offers)
    }

    fn is_final(&mut self, code_id: &str, state: &State, target: &str) -> Result<bool, OracleError> {
        (**self).is_final(code_id, state, target)
    }
}

/// Checks that a selection names an offered code and one of its rules.
pub fn validate(offers: &[Offer], sel: &Selection) -> Result<usize, OracleError> {
    let i = offers
        .iter()
        .position(|o| o.code_id == sel.code_id)
        .ok_or_else(|| OracleError::IllegalSelection(format!("code `{}` was not offered", sel.code_id)))?;
    match &sel.rule {
        Some(r) if !offers[i].rules.contains(r) => Err(OracleError::IllegalSelection(format!(
            "rule `{r}` is not applicable to code `{}` (offered: {})",
            sel.code_id,
            offers[i].rules.join(", ")
        ))),
        None if !offers[i].rules.is_empty() => Err(OracleError::IllegalSelection(format!(
            "no rule chosen for code `{}` although {} apply",
            sel.code_id,
            offers[i].rules.join(", ")
        ))),
        _ => Ok(i),
    }
}

type Successors = Vec<(String, State)>;

/// Built-in oracle: minimizes `metric` over derivations of bounded depth.
pub struct Greedy {
    rules: Arc<Vec<Rule>>,
    pub lookahead: usize,
    pub metric: Metric,
    succ: RefCell<HashMap<String, Rc<Successors>>>,
}

impl Greedy {
    pub fn new(rules: Arc<Vec<Rule>>, lookahead: usize, metric: Metric) -> Greedy {
        Greedy {
            rules,
            lookahead,
            metric,
            succ: RefCell::new(HashMap::new()),
        }
    }

    fn next_states(&self, s: &State) -> Rc<Vec<(String, State)>> {
        let key = s.text();
        if let Some(v) = self.succ.borrow().get(&key) {
            return v.clone();
        }
        let v: Vec<(String, State)> = successors(s, &self.rules, None)
            .map(|v| v.into_iter().map(|(c, st, _)| (c.rule, st)).collect())
            .unwrap_or_default();
        let v = Rc::new(v);
        self.succ.borrow_mut().insert(key, v.clone());
        v
    }

    /// Least metric over `s` and its extensions of depth at most `depth`,
    /// not revisiting states on the current path.
    pub fn best(&self, s: &State, depth: usize, path: &mut Vec<String>) -> i64 {
        let mut best = self.metric.score(&s.program);
        if depth == 0 {
            return best;
        }
        for (_, next) in self.next_states(s).iter() {
            let t = next.text();
            if path.contains(&t) {
                continue;
            }
            path.push(t);
            best = best.min(self.best(next, depth - 1, path));
            path.pop();
        }
        best
    }

    fn score(&self, s: &State, depth: usize) -> i64 {
        self.best(s, depth, &mut vec![s.text()])
    }
}

impl Oracle for Greedy {
    fn select_rule(&mut self, offers: &[Offer]) -> Result<Selection, OracleError> {
        let mut chosen: Option<(i64, &Offer)> = None;
        for o in offers {
            let sc = self.score(&o.state, self.lookahead);
            debug!("greedy: {} via {} scores {sc}", o.code_id, o.via.rule);
            if chosen.is_none_or(|(b, _)| sc < b) {
                chosen = Some((sc, o));
            }
        }
        let (_, o) = chosen.ok_or_else(|| OracleError::Malformed("empty offer".into()))?;
        let mut rule: Option<(i64, &String)> = None;
        for r in &o.rules {
            let sc = self
                .next_states(&o.state)
                .iter()
                .filter(|(via, _)| via == r)
                .map(|(_, s)| self.score(s, self.lookahead.saturating_sub(1)))
                .min()
                .unwrap_or(i64::MAX);
            if rule.is_none_or(|(b, _)| sc < b) {
                rule = Some((sc, r));
            }
        }
        Ok(Selection {
            code_id: o.code_id.clone(),
            rule: rule.map(|(_, r)| r.clone()),
        })
    }

    fn is_final(&mut self, _code_id: &str, state: &State, target: &str) -> Result<bool, OracleError> {
        let now = self.metric.score(&state.program);
        if self.score(state, self.lookahead + 1) < now {
            return Ok(false);
        }
        let target = target.parse().unwrap_or(Target::Openmp);
        Ok(readiness(&state.program, &state.store, target, DEFAULT_IO_NAMES).ready)
    }
}

// ---- external peers ---------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct WireCandidate {
    pub code_id: String,
    pub code: String,
    pub rules: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    SelectRule {
        candidates: Vec<WireCandidate>,
    },
    IsFinal {
        code_id: String,
        code: String,
        target: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Response {
    Selected { code_id: String, rule: Option<String> },
    Final { value: bool },
}

/// An oracle speaking newline-delimited JSON over a byte stream.
pub struct LineOracle {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
    pub timeout: Duration,
}

impl LineOracle {
    pub fn new(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
        timeout: Duration,
    ) -> LineOracle {
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        LineOracle {
            writer: Box::new(writer),
            lines: rx,
            child: None,
            timeout,
        }
    }

    /// Starts `cmd` through the shell and talks to it over stdio.
    pub fn spawn(cmd: &str, timeout: Duration) -> Result<LineOracle, OracleError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(cmd)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| OracleError::Channel(format!("cannot start `{cmd}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut o = LineOracle::new(stdout, stdin, timeout);
        o.child = Some(child);
        Ok(o)
    }

    /// Connects to a peer listening on `addr`.
    pub fn connect(addr: &str, timeout: Duration) -> Result<LineOracle, OracleError> {
        let s = std::net::TcpStream::connect(addr)
            .map_err(|e| OracleError::Channel(format!("cannot connect to {addr}: {e}")))?;
        let r = s.try_clone().map_err(|e| OracleError::Channel(e.to_string()))?;
        Ok(LineOracle::new(r, s, timeout))
    }

    fn query(&mut self, req: &Request) -> Result<Response, OracleError> {
        let line = serde_json::to_string(req).expect("requests serialize");
        writeln!(self.writer, "{line}")
            .and_then(|_| self.writer.flush())
            .map_err(|e| OracleError::Channel(e.to_string()))?;
        let reply = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(l)) => l,
            Ok(Err(e)) => return Err(OracleError::Channel(e.to_string())),
            Err(RecvTimeoutError::Timeout) => return Err(OracleError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => return Err(OracleError::Channel("peer closed the stream".into())),
        };
        serde_json::from_str(&reply).map_err(|e| OracleError::Malformed(format!("{e}: {reply}")))
    }
}

impl Drop for LineOracle {
    fn drop(&mut self) {
        if let Some(c) = &mut self.child {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

impl Oracle for LineOracle {
    fn select_rule(&mut self, offers: &[Offer]) -> Result<Selection, OracleError> {
        let req = Request::SelectRule {
            candidates: offers
                .iter()
                .map(|o| WireCandidate {
                    code_id: o.code_id.clone(),
                    code: o.code.clone(),
                    rules: o.rules.clone(),
                })
                .collect(),
        };
        match self.query(&req)? {
            Response::Selected { code_id, rule } => Ok(Selection { code_id, rule }),
            other => Err(OracleError::Malformed(format!("expected a selection, got {other:?}"))),
        }
    }

    fn is_final(&mut self, code_id: &str, state: &State, target: &str) -> Result<bool, OracleError> {
        let req = Request::IsFinal {
            code_id: code_id.to_string(),
            code: state.annotated(),
            target: target.to_string(),
        };
        match self.query(&req)? {
            Response::Final { value } => Ok(value),
            other => Err(OracleError::Malformed(format!(
                "expected a final verdict, got {other:?}"
            ))),
        }
    }
}

// ---- derivations -------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "detail", rename_all = "kebab-case")]
pub enum Outcome {
    Final,
    BudgetExhausted,
    /// No rule of the requested set applies and the oracle did not accept
    /// the code as final.
    Stalled(String),
}

#[derive(Debug, Clone)]
pub struct Derivation {
    pub steps: Vec<Step>,
    pub outcome: Outcome,
    pub last: State,
}

pub struct Deriver<'r> {
    pub rules: &'r [Rule],
    pub budget: usize,
    pub target: String,
}

impl<'r> Deriver<'r> {
    pub fn new(rules: &'r [Rule]) -> Deriver<'r> {
        Deriver {
            rules,
            budget: DEFAULT_BUDGET,
            target: "openmp".into(),
        }
    }

    fn applicable(&self, s: &State) -> Result<Vec<String>, DriverError> {
        let mut names: Vec<String> = Vec::new();
        for c in candidates(s, self.rules)? {
            if c.verdict == Tri::True && !names.contains(&c.rule) {
                names.push(c.rule);
            }
        }
        // Keep rule-library order.
        names.sort_by_key(|n| self.rules.iter().position(|r| &r.name == n));
        Ok(names)
    }

    /// One step: offers every successor through `rule_set` (skipping codes
    /// already visited) and returns the chosen one with the next rule.
    pub fn new_code(
        &self,
        state: &State,
        rule_set: &[String],
        oracle: &mut dyn Oracle,
        seen: &BTreeSet<String>,
        step: usize,
    ) -> Result<(Offer, Option<String>), DriverError> {
        let mut offers = Vec::new();
        for (c, next, _) in successors(state, self.rules, Some(rule_set))? {
            let text = next.text();
            if seen.contains(&text) {
                continue;
            }
            offers.push(Offer {
                code_id: format!("s{step}c{}", offers.len()),
                code: next.annotated(),
                rules: self.applicable(&next)?,
                state: next,
                via: c,
            });
        }
        if offers.is_empty() {
            return Err(DriverError::NoSuccessor(rule_set.join(", ")));
        }
        let sel = oracle.select_rule(&offers)?;
        let i = validate(&offers, &sel)?;
        Ok((offers.swap_remove(i), sel.rule))
    }

    pub fn derive(&self, start: &State, oracle: &mut dyn Oracle) -> Result<Derivation, DriverError> {
        let mut state = start.clone();
        let mut seen = BTreeSet::from([state.text()]);
        let mut rule_set: Vec<String> = self.rules.iter().map(|r| r.name.clone()).collect();
        let mut steps = Vec::new();
        for n in 0..=self.budget {
            if oracle.is_final(&format!("s{n}"), &state, &self.target)? {
                return Ok(Derivation {
                    steps,
                    outcome: Outcome::Final,
                    last: state,
                });
            }
            if n == self.budget {
                break;
            }
            let (offer, next_rule) = match self.new_code(&state, &rule_set, oracle, &seen, n + 1) {
                Ok(x) => x,
                Err(DriverError::NoSuccessor(set)) => {
                    return Ok(Derivation {
                        steps,
                        outcome: Outcome::Stalled(format!("no rule of {{{set}}} applies")),
                        last: state,
                    })
                }
                Err(e) => return Err(e),
            };
            let step = Step {
                step: n + 1,
                rule: offer.via.rule.clone(),
                pos: offer.via.pos,
                alt: offer.via.alt,
                forced: false,
                before_text: state.text(),
                after_text: offer.state.text(),
                warnings: Vec::new(),
            };
            debug!("step {}: {} at {}", step.step, step.rule, step.pos);
            seen.insert(step.after_text.clone());
            steps.push(step);
            state = offer.state;
            rule_set = next_rule.into_iter().collect();
        }
        Ok(Derivation {
            steps,
            outcome: Outcome::BudgetExhausted,
            last: state,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::builtin_rules;

    const PANEL0: &str = "float c[N], v[N], a, b;
for (int i = 0; i < N; i++)
    c[i] = a * v[i];
for (int i = 0; i < N; i++)
    c[i] += b * v[i];
";

    struct First;

    impl Oracle for First {
        fn select_rule(&mut self, offers: &[Offer]) -> Result<Selection, OracleError> {
            Ok(Selection {
                code_id: offers[0].code_id.clone(),
                rule: offers[0].rules.first().cloned(),
            })
        }
        fn is_final(&mut self, _: &str, _: &State, _: &str) -> Result<bool, OracleError> {
            Ok(false)
        }
    }

    #[test]
    fn undo_redo_restores_text() {
        let mut s = Session::new("t", PANEL0, None, Arc::new(builtin_rules())).unwrap();
        let c = s.candidates().unwrap();
        let fusion = c.iter().find(|c| c.rule == "ForLoopFusion").unwrap().clone();
        s.apply(&fusion.rule, fusion.pos, 0, false).unwrap();
        let after = s.current().text();
        s.undo().unwrap();
        assert_eq!(s.current().text(), s.initial().text());
        s.redo().unwrap();
        assert_eq!(s.current().text(), after);
        let back = Session::restore(&s.snapshot(), Arc::new(builtin_rules())).unwrap();
        assert_eq!(back.current().text(), after);
    }

    #[test]
    fn illegal_selection_is_rejected() {
        let rules = builtin_rules();
        let d = Deriver::new(&rules);
        let start = load_source(PANEL0).unwrap();
        struct Bad;
        impl Oracle for Bad {
            fn select_rule(&mut self, _: &[Offer]) -> Result<Selection, OracleError> {
                Ok(Selection {
                    code_id: "nope".into(),
                    rule: None,
                })
            }
            fn is_final(&mut self, _: &str, _: &State, _: &str) -> Result<bool, OracleError> {
                Ok(false)
            }
        }
        let err = d.derive(&start, &mut Bad).unwrap_err();
        assert!(
            matches!(err, DriverError::Oracle(OracleError::IllegalSelection(_))),
            "{err}"
        );
    }

    #[test]
    fn budget_and_cycle_guard() {
        let rules = builtin_rules();
        let mut d = Deriver::new(&rules);
        d.budget = 2;
        let start = load_source(PANEL0).unwrap();
        let r = d.derive(&start, &mut First).unwrap();
        assert_eq!(r.outcome, Outcome::BudgetExhausted);
        assert_eq!(r.steps.len(), 2);
    }

    #[test]
    fn empty_rule_set_stalls() {
        let rules = builtin_rules();
        let d = Deriver::new(&rules);
        let start = load_source("x = 1;").unwrap();
        let err = d.new_code(&start, &["ForLoopFusion".to_string()], &mut First, &BTreeSet::new(), 1);
        assert!(matches!(err, Err(DriverError::NoSuccessor(_))));
    }
}
