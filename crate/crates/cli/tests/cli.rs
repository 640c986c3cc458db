//! Command-line behaviour: output forms, exit codes and configuration.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use stmlforge::driver::Step;
use stmlforge::rules::{builtin_rules, print_rules};

fn core_fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn stmlforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stmlforge"))
        .args(args)
        .env_remove("STMLFORGE_RULES")
        .output()
        .unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn parse_prints_a_fixed_point() {
    let first = stmlforge(&["parse", &core_fixture("fig1.c")]);
    assert!(first.status.success());
    let dir = tempfile::tempdir().unwrap();
    let again = write(dir.path(), "again.c", &text(&first.stdout));
    let second = stmlforge(&["parse", again.to_str().unwrap()]);
    assert_eq!(text(&second.stdout), text(&first.stdout));
    assert!(text(&first.stdout).contains("#pragma polca map BODY1 v c\nfor"));
}

#[test]
fn user_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let broken = write(dir.path(), "broken.c", "for (int i = 0; i < N; i++ c[i] = 0;");
    let o = stmlforge(&["parse", broken.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("syntax error"), "{}", text(&o.stderr));

    let o = stmlforge(&["parse", "/definitely/not/here.c"]);
    assert_eq!(o.status.code(), Some(1));

    let fig1 = core_fixture("fig1.c");
    let o = stmlforge(&["apply", &fig1, "--rule", "ForLoopFusion", "--pos", "3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        text(&o.stderr).contains("not applicable at node 3"),
        "{}",
        text(&o.stderr)
    );
    assert!(o.stdout.is_empty());

    let o = stmlforge(&["apply", &fig1, "--rule", "Nonexistent", "--pos", "4"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("unknown rule"));

    let o = stmlforge(&["derive", &fig1, "--oracle", "psychic"]);
    assert_eq!(o.status.code(), Some(1));

    let o = stmlforge(&["translate", &fig1, "--target", "cuda"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("unknown target"));
}

#[test]
fn candidates_list_verdicts_and_previews() {
    let o = stmlforge(&["candidates", &core_fixture("panel1.c")]);
    assert!(o.status.success());
    let list: Vec<Value> = serde_json::from_str(&text(&o.stdout)).unwrap();
    let aug = list.iter().find(|c| c["rule"] == "AugAdditionAssign").unwrap();
    assert_eq!(aug["verdict"], "true");
    let diff = aug["preview_diff"].as_str().unwrap();
    assert!(
        diff.contains("-    c[i] += b * v[i];\n+    c[i] = c[i] + b * v[i];"),
        "{diff}"
    );
}

#[test]
fn derive_respects_the_budget() {
    let o = stmlforge(&["derive", &core_fixture("fig1.c"), "--budget", "2"]);
    assert!(o.status.success());
    let steps: Vec<Step> = text(&o.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(steps.len(), 2);
    assert_eq!(steps[0].after_text, steps[1].before_text);
    assert!(text(&o.stderr).contains("budget"));
}

#[test]
fn derive_writes_the_final_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("final.c");
    let o = stmlforge(&["derive", &core_fixture("fig1.c"), "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let got = std::fs::read_to_string(out).unwrap();
    assert!(got.contains("float k = a + b;"), "{got}");
}

#[test]
fn silent_oracle_times_out() {
    let o = stmlforge(&[
        "derive",
        &core_fixture("fig1.c"),
        "--oracle",
        "exec:exec sleep 5",
        "--timeout",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("did not answer"), "{}", text(&o.stderr));
}

#[test]
fn malformed_oracle_reply_is_reported() {
    let o = stmlforge(&[
        "derive",
        &core_fixture("fig1.c"),
        "--oracle",
        "exec:read request; echo not-json",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("malformed"), "{}", text(&o.stderr));
}

#[test]
fn external_properties_feed_readiness() {
    let dir = tempfile::tempdir().unwrap();
    let src = write(
        dir.path(),
        "call.c",
        "float c[N], v[N];\nfor (int i = 0; i < N; i++)\n    c[i] = f(v[i]);\n",
    );
    let src = src.to_str().unwrap();
    assert_eq!(stmlforge(&["translate", src]).status.code(), Some(1));
    let props = write(dir.path(), "props.json", r#"[{"line": 2, "property": "pure f"}]"#);
    let o = stmlforge(&["--props", props.to_str().unwrap(), "translate", src]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(text(&o.stdout).contains("#pragma omp parallel for"));
    let bad = write(dir.path(), "bad.json", r#"[{"line": 2, "property": "frobnicates f"}]"#);
    assert_eq!(
        stmlforge(&["--props", bad.to_str().unwrap(), "analyze", src])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn analyze_reports_sets_offsets_and_readiness() {
    let dir = tempfile::tempdir().unwrap();
    let src = write(
        dir.path(),
        "shift.c",
        "float c[N];\nfor (int i = 1; i < N; i++)\n    c[i] = c[i - 1] + 1;\n",
    );
    let o = stmlforge(&["analyze", src.to_str().unwrap()]);
    assert!(o.status.success());
    let out = text(&o.stdout);
    assert!(out.contains("reads c in {-1}"), "{out}");
    assert!(out.contains("writes c in {0}"), "{out}");
    assert!(out.contains("readiness for openmp: not ready"), "{out}");
}

#[test]
fn rules_directory_replaces_the_builtin_library() {
    let dir = tempfile::tempdir().unwrap();
    let only = builtin_rules()
        .into_iter()
        .find(|r| r.name == "AugAdditionAssign")
        .unwrap();
    write(dir.path(), "aug.stml", &print_rules(&[only]));
    let run = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_stmlforge"))
            .args(args)
            .env("STMLFORGE_RULES", dir.path())
            .output()
            .unwrap()
    };
    let o = run(&["candidates", &core_fixture("fig1.c")]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let list: Vec<Value> = serde_json::from_str(&text(&o.stdout)).unwrap();
    assert!(!list.is_empty());
    assert!(list.iter().all(|c| c["rule"] == "AugAdditionAssign"));

    write(dir.path(), "broken.stml", "rule Broken { pattern: {");
    let o = run(&["rules"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn internal_failures_map_to_two() {
    assert_eq!(stmlforge_cli::exit_code(&anyhow::anyhow!("invariant violated")), 2);
    let user: anyhow::Error = stmlforge_cli::UserError("bad flag".into()).into();
    assert_eq!(stmlforge_cli::exit_code(&user), 1);
}
