//! Pieces shared by the `stmlforge` binary, the HTTP service and the tests:
//! rule loading, the JSON views both front ends print, and the mapping of
//! failures onto exit codes.

use std::io::Write;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use similar::TextDiff;

use stmlforge::annotations::{ingest_external, parse_external, AnnError};
use stmlforge::driver::{
    apply, candidates, load_source, DriverError, Offer, Oracle, OracleError, Response, Selection, State, Step,
};
use stmlforge::properties::Tri;
use stmlforge::rewrite::RewriteError;
use stmlforge::rules::{builtin_rules, load_rules_dir, Rule, RuleError};
use stmlforge::translate::TranslateError;
use stmlforge::{AstError, NodeId};

pub mod service;

/// Directory of `*.stml` rule files replacing the builtin library.
pub const RULES_ENV: &str = "STMLFORGE_RULES";

pub fn load_rules() -> anyhow::Result<Vec<Rule>> {
    match std::env::var_os(RULES_ENV) {
        Some(dir) => {
            load_rules_dir(Path::new(&dir)).with_context(|| format!("loading rules from {}", Path::new(&dir).display()))
        }
        None => Ok(builtin_rules()),
    }
}

/// Reads and loads a source file, merging external properties if given.
pub fn load_file(path: &Path, props: Option<&Path>) -> anyhow::Result<State> {
    let src = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut st = load_source(&src).with_context(|| path.display().to_string())?;
    if let Some(pp) = props {
        let json = std::fs::read_to_string(pp).with_context(|| format!("reading {}", pp.display()))?;
        let extra = parse_external(&st.program, &json)?;
        let (store, warnings) = ingest_external(&st.store, &extra);
        for w in warnings {
            eprintln!("warning: node {}: ignored `{}`: {}", w.pos, w.pragma, w.reason);
        }
        st.store = store;
    }
    Ok(st)
}

pub fn unified_diff(before: &str, after: &str) -> String {
    TextDiff::from_lines(before, after)
        .unified_diff()
        .context_radius(2)
        .header("before", "after")
        .to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateView {
    pub rule: String,
    pub pos: NodeId,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub alt: usize,
    pub verdict: Tri,
    /// Unified diff of the canonical text; absent for inapplicable
    /// candidates.
    pub preview_diff: Option<String>,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PragmaView {
    pub pos: NodeId,
    pub text: String,
}

/// What both `apply --json` and the service report about a state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateView {
    pub code: String,
    pub pragmas: Vec<PragmaView>,
    pub candidates: Vec<CandidateView>,
    pub history: Vec<Step>,
}

pub fn candidate_views(state: &State, rules: &[Rule]) -> Result<Vec<CandidateView>, DriverError> {
    let before = state.text();
    let mut out = Vec::new();
    for c in candidates(state, rules)? {
        let preview_diff = match c.verdict {
            Tri::False => None,
            _ => match apply(state, rules, &c.rule, c.pos, c.alt, true, 0) {
                Ok((next, _)) => Some(unified_diff(&before, &next.text())),
                Err(DriverError::Rewrite(RewriteError::NotApplicable { .. })) => None,
                Err(e) => return Err(e),
            },
        };
        out.push(CandidateView {
            rule: c.rule,
            pos: c.pos,
            alt: c.alt,
            verdict: c.verdict,
            preview_diff,
        });
    }
    Ok(out)
}

pub fn pragma_views(state: &State) -> Vec<PragmaView> {
    state
        .store
        .anchors()
        .flat_map(|pos| {
            state
                .store
                .pragma_lines(pos, &|_| true)
                .into_iter()
                .map(move |text| PragmaView { pos, text })
        })
        .collect()
}

pub fn state_view(state: &State, history: &[Step], rules: &[Rule]) -> Result<StateView, DriverError> {
    Ok(StateView {
        code: state.text(),
        pragmas: pragma_views(state),
        candidates: candidate_views(state, rules)?,
        history: history.to_vec(),
    })
}

/// The one JSON rendering used by every front end.
pub fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("views serialize") + "\n"
}

/// Wraps an oracle and writes each of its answers as one protocol line, so
/// a derivation can be replayed later by a scripted peer.
pub struct Recorder<O, W> {
    pub inner: O,
    pub out: W,
}

impl<O: Oracle, W: Write> Recorder<O, W> {
    fn record(&mut self, r: &Response) -> Result<(), OracleError> {
        let line = serde_json::to_string(r).expect("responses serialize");
        writeln!(self.out, "{line}").map_err(|e| OracleError::Channel(e.to_string()))
    }
}

impl<O: Oracle, W: Write> Oracle for Recorder<O, W> {
    fn select_rule(&mut self, offers: &[Offer]) -> Result<Selection, OracleError> {
        let sel = self.inner.select_rule(offers)?;
        self.record(&Response::Selected {
            code_id: sel.code_id.clone(),
            rule: sel.rule.clone(),
        })?;
        Ok(sel)
    }

    fn is_final(&mut self, code_id: &str, state: &State, target: &str) -> Result<bool, OracleError> {
        let value = self.inner.is_final(code_id, state, target)?;
        self.record(&Response::Final { value })?;
        Ok(value)
    }
}

/// Exit status for a failure: 1 when the input or a peer is at fault, 2
/// for anything else.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if let Some(d) = cause.downcast_ref::<DriverError>() {
            return match d {
                DriverError::Rewrite(RewriteError::Instantiate { .. }) => 2,
                _ => 1,
            };
        }
        if cause.is::<AstError>()
            || cause.is::<AnnError>()
            || cause.is::<RuleError>()
            || cause.is::<TranslateError>()
            || cause.is::<OracleError>()
            || cause.is::<UserError>()
            || cause.is::<std::io::Error>()
        {
            return 1;
        }
    }
    2
}

/// A usage mistake detected by the front end itself.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UserError(pub String);
