use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use stmlforge::annotations::{emit_pragmas, parse_pragmas, Access};
use stmlforge::driver::{apply, log_jsonl, Deriver, Greedy, LineOracle, Oracle, Outcome, DEFAULT_BUDGET};
use stmlforge::metric::Metric;
use stmlforge::nodes::{NodeRef, NodeTable};
use stmlforge::printer::print_stmts;
use stmlforge::properties::{canonical_loop, loop_offsets, Effects};
use stmlforge::rules::print_rules;
use stmlforge::translate::{emit_openmp, readiness, Evidence, Target, DEFAULT_IO_NAMES};
use stmlforge::NodeId;

use stmlforge_cli::service::{serve, AppState};
use stmlforge_cli::{candidate_views, exit_code, load_file, load_rules, state_view, to_json, Recorder, UserError};

#[derive(Parser)]
#[command(
    name = "stmlforge",
    version,
    about = "Annotation-gated source-to-source transformation of C loops"
)]
struct Cli {
    /// JSON file of externally inferred properties to merge.
    #[arg(long, global = true)]
    props: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the canonical form, annotations included.
    Parse { file: PathBuf },
    /// Expand skeleton annotations into properties.
    Expand {
        file: PathBuf,
        /// Keep the skeletons' input/output lines.
        #[arg(long)]
        keep_io: bool,
    },
    /// Report read/write sets, loop offsets and readiness.
    Analyze {
        file: PathBuf,
        #[arg(long, default_value = "openmp")]
        target: String,
    },
    /// List rule applications with their verdicts.
    Candidates { file: PathBuf },
    /// Apply one rule and print the resulting code.
    Apply {
        file: PathBuf,
        #[arg(long)]
        rule: String,
        #[arg(long)]
        pos: u32,
        #[arg(long, default_value_t = 0)]
        alt: usize,
        /// Apply even when the conditions could not be decided.
        #[arg(long)]
        force: bool,
        /// Print the code without annotations.
        #[arg(long, conflicts_with = "json")]
        plain: bool,
        /// Print the resulting state as the service reports it.
        #[arg(long)]
        json: bool,
    },
    /// Run a derivation driven by an oracle; prints the step log.
    Derive {
        file: PathBuf,
        /// `greedy`, `exec:<command>` or `tcp:<host:port>`.
        #[arg(long, default_value = "greedy")]
        oracle: String,
        #[arg(long, default_value_t = 2)]
        lookahead: usize,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: usize,
        #[arg(long, default_value = "openmp")]
        target: String,
        /// Seconds to wait for each oracle answer.
        #[arg(long, default_value_t = 30)]
        timeout: u64,
        /// Write the oracle's answers here, one protocol line each.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Write the final code here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit parallel code for a target platform.
    Translate {
        file: PathBuf,
        #[arg(long, default_value = "openmp")]
        target: String,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Print the loaded rule library.
    Rules,
    /// Serve the session API over HTTP.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Persist sessions as JSON snapshots in this directory.
        #[arg(long)]
        state_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let props = cli.props.as_deref();
    match cli.cmd {
        Cmd::Parse { file } => {
            let src = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let p = stmlforge::parse(&src)?;
            let store = parse_pragmas(&p)?;
            emit(None, &emit_pragmas(&p.without_pragmas(), &store)?)
        }
        Cmd::Expand { file, keep_io } => emit(None, &load_file(&file, props)?.expanded(keep_io)),
        Cmd::Analyze { file, target } => {
            let st = load_file(&file, props)?;
            let target: Target = target.parse()?;
            emit(None, &analyze(&st, target))
        }
        Cmd::Candidates { file } => {
            let st = load_file(&file, props)?;
            emit(None, &to_json(&candidate_views(&st, &load_rules()?)?))
        }
        Cmd::Apply {
            file,
            rule,
            pos,
            alt,
            force,
            plain,
            json,
        } => {
            let st = load_file(&file, props)?;
            let rules = load_rules()?;
            let (next, step) = apply(&st, &rules, &rule, NodeId(pos), alt, force, 1)?;
            for w in &step.warnings {
                eprintln!("warning: {w}");
            }
            let text = if json {
                to_json(&state_view(&next, std::slice::from_ref(&step), &rules)?)
            } else if plain {
                next.text()
            } else {
                next.annotated()
            };
            emit(None, &text)
        }
        Cmd::Derive {
            file,
            oracle,
            lookahead,
            budget,
            target,
            timeout,
            record,
            out,
        } => {
            let st = load_file(&file, props)?;
            let rules = load_rules()?;
            let timeout = Duration::from_secs(timeout);
            let mut inner: Box<dyn Oracle> = if oracle == "greedy" {
                Box::new(Greedy::new(Arc::new(rules.clone()), lookahead, Metric::default()))
            } else if let Some(cmd) = oracle.strip_prefix("exec:") {
                Box::new(LineOracle::spawn(cmd, timeout)?)
            } else if let Some(addr) = oracle.strip_prefix("tcp:") {
                Box::new(LineOracle::connect(addr, timeout)?)
            } else {
                bail!(UserError(format!(
                    "unknown oracle `{oracle}` (expected greedy, exec:<cmd> or tcp:<addr>)"
                )));
            };
            let mut deriver = Deriver::new(&rules);
            deriver.budget = budget;
            deriver.target = target;
            let d = match record {
                Some(path) => {
                    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                    let mut rec = Recorder {
                        inner: inner.as_mut(),
                        out: BufWriter::new(f),
                    };
                    let d = deriver.derive(&st, &mut rec);
                    rec.out.flush()?;
                    d?
                }
                None => deriver.derive(&st, inner.as_mut())?,
            };
            emit(None, &log_jsonl(&d.steps))?;
            match &d.outcome {
                Outcome::Final => eprintln!("final after {} steps", d.steps.len()),
                Outcome::BudgetExhausted => eprintln!("budget of {budget} steps exhausted"),
                Outcome::Stalled(why) => eprintln!("stalled after {} steps: {why}", d.steps.len()),
            }
            if let Some(p) = out {
                emit(Some(&p), &d.last.annotated())?;
            }
            Ok(())
        }
        Cmd::Translate { file, target, out } => {
            let st = load_file(&file, props)?;
            match target.parse::<Target>()? {
                Target::Openmp => emit(out.as_deref(), &emit_openmp(&st.program, &st.store)?),
                Target::Mpi => {
                    let r = readiness(&st.program, &st.store, Target::Mpi, DEFAULT_IO_NAMES);
                    bail!(UserError(format!(
                        "no backend emits mpi code; readiness: {}",
                        if r.ready { "ready" } else { "not ready" }
                    )))
                }
            }
        }
        Cmd::Rules => emit(None, &print_rules(&load_rules()?)),
        Cmd::Serve { port, host, state_dir } => {
            let rules = load_rules()?;
            let app = match state_dir {
                Some(dir) => AppState::load(rules, dir)?,
                None => AppState::new(rules, None),
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(Arc::new(app), (host, port).into()))
        }
    }
}

fn analyze(st: &stmlforge::driver::State, target: Target) -> String {
    let table = NodeTable::build(&st.program);
    let fx = Effects::new(&st.store);
    let mut out = String::new();
    for (id, entry) in table.iter() {
        let NodeRef::Stmt(s) = entry.node else { continue };
        let head = print_stmts(std::slice::from_ref(s));
        let head = head.lines().next().unwrap_or("").trim();
        let _ = writeln!(out, "node {id}: {head}");
        for line in st.store.pragma_lines(id, &|_| true) {
            let _ = writeln!(out, "  #pragma {line}");
        }
        let reads = fx.stmt_reads(s);
        let writes = fx.stmt_writes(s);
        let _ = writeln!(out, "  reads: {reads}");
        let _ = writeln!(out, "  writes: {writes}");
        if let Some(cl) = canonical_loop(s) {
            let arrays: BTreeSet<&str> = reads.elems().chain(writes.elems()).map(|(n, _)| n).collect();
            let _ = writeln!(out, "  loop over {}", cl.var);
            for a in arrays {
                for (mode, word) in [(Access::Reads, "reads"), (Access::Writes, "writes")] {
                    match loop_offsets(s, a, mode, &st.store) {
                        Some(o) if o.is_empty() => {}
                        Some(o) => {
                            let o: Vec<String> = o.iter().map(i64::to_string).collect();
                            let _ = writeln!(out, "  {word} {a} in {{{}}}", o.join(", "));
                        }
                        None => {
                            let _ = writeln!(out, "  {word} {a} at unknown offsets");
                        }
                    }
                }
            }
        }
    }
    let r = readiness(&st.program, &st.store, target, DEFAULT_IO_NAMES);
    let _ = writeln!(
        out,
        "readiness for {target}: {}",
        if r.ready { "ready" } else { "not ready" }
    );
    for (id, ev) in &r.parallel {
        let how = match ev {
            Evidence::Annotated => "annotated",
            Evidence::Proved => "proved",
        };
        let _ = writeln!(out, "  parallel loop at node {id} ({how})");
    }
    for b in &r.blocking {
        let _ = writeln!(out, "  blocked at node {}: {}", b.pos, b.reason);
    }
    out
}
