//! Scripted oracle peer: answers each request on stdin with the next line
//! of a recorded script, checking that the answer fits the request.

use std::io::{BufRead, Write};
use std::process::ExitCode;

use anyhow::{bail, Context};

use stmlforge::driver::{Request, Response};

fn run(script: &str) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(script).with_context(|| format!("reading {script}"))?;
    let mut answers = text.lines().filter(|l| !l.trim().is_empty()).enumerate();
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout().lock();
    for line in stdin.lock().lines() {
        let line = line?;
        let req: Request = serde_json::from_str(&line).with_context(|| format!("bad request: {line}"))?;
        let Some((n, answer)) = answers.next() else {
            bail!("script exhausted at request: {line}");
        };
        let resp: Response = serde_json::from_str(answer).with_context(|| format!("script line {}", n + 1))?;
        match (&req, &resp) {
            (Request::SelectRule { .. }, Response::Selected { .. })
            | (Request::IsFinal { .. }, Response::Final { .. }) => {}
            _ => bail!("script line {} does not answer {line}", n + 1),
        }
        writeln!(stdout, "{answer}")?;
        stdout.flush()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let Some(script) = std::env::args().nth(1) else {
        eprintln!("usage: replay-oracle <script.ndjson>");
        return ExitCode::from(1);
    };
    match run(&script) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("replay-oracle: {e:#}");
            ExitCode::from(1)
        }
    }
}
