//! Discovering validation cases in a repository and evaluating gates.

use std::fs;
use std::path::Path;

use agentizer_core::validation::{CaseOutcome, CaseResult, GateReport, Matcher, Provenance, ValidationCase};
use sha2::{Digest, Sha256};

use crate::runlog::Clock;
use crate::sandbox::{self, ExecRequest, SandboxPolicy};
use crate::tools::download::sha256_file;
use crate::tools::nonempty;

/// Discovered cases kept per repository, in discovery order.
pub const MAX_DISCOVERED: usize = 8;

fn test_scripts(root: &Path) -> Vec<ValidationCase> {
    let Ok(entries) = fs::read_dir(root.join("tests")) else {
        return Vec::new();
    };
    let mut names: Vec<String> = entries
        .flatten()
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".sh"))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|n| ValidationCase {
            id: format!("test:tests/{n}"),
            input: format!("sh tests/{n}"),
            expected: Matcher::ExitCode { code: 0 },
            provenance: Provenance::RepoTestSuite,
            gates: None,
        })
        .collect()
}

fn make_test(root: &Path) -> Option<ValidationCase> {
    let text = fs::read_to_string(root.join("Makefile")).ok()?;
    text.lines().any(|l| l.starts_with("test:")).then(|| ValidationCase {
        id: "test:make".into(),
        input: "make test".into(),
        expected: Matcher::ExitCode { code: 0 },
        provenance: Provenance::RepoTestSuite,
        gates: None,
    })
}

fn pytest(root: &Path) -> Option<ValidationCase> {
    let has_tests = |dir: &Path| {
        fs::read_dir(dir).is_ok_and(|d| {
            d.flatten().any(|e| {
                let n = e.file_name().to_string_lossy().into_owned();
                n.starts_with("test_") && n.ends_with(".py")
            })
        })
    };
    (has_tests(root) || has_tests(&root.join("tests"))).then(|| ValidationCase {
        id: "test:pytest".into(),
        input: "python3 -m pytest -q".into(),
        expected: Matcher::ExitCode { code: 0 },
        provenance: Provenance::RepoTestSuite,
        gates: None,
    })
}

/// A fenced block: opening line number (1-based), info string, body.
pub fn fences(text: &str) -> Vec<(usize, String, String)> {
    let mut out = Vec::new();
    let mut open: Option<(usize, String, String)> = None;
    for (i, line) in text.lines().enumerate() {
        let t = line.trim_start();
        match open.take() {
            None => {
                if let Some(info) = t.strip_prefix("```") {
                    open = Some((i + 1, info.trim().to_string(), String::new()));
                }
            }
            Some((start, info, mut body)) => {
                if t.starts_with("```") {
                    out.push((start, info, body));
                } else {
                    body.push_str(line);
                    body.push('\n');
                    open = Some((start, info, body));
                }
            }
        }
    }
    out
}

/// README fences whose info string mentions `example`. A directly following
/// fence tagged `expected` gives the exact output; otherwise success is exit 0.
fn readme_examples(root: &Path) -> Vec<ValidationCase> {
    let Ok(text) = fs::read_to_string(root.join("README.md")) else {
        return Vec::new();
    };
    let blocks = fences(&text);
    let mut out = Vec::new();
    for (i, (line, info, body)) in blocks.iter().enumerate() {
        if !info.split_whitespace().any(|w| w == "example") || body.trim().is_empty() {
            continue;
        }
        let expected = match blocks.get(i + 1) {
            Some((_, next, want)) if next.split_whitespace().any(|w| w == "expected") => Matcher::ExactText {
                text: want.trim().to_string(),
            },
            _ => Matcher::ExitCode { code: 0 },
        };
        out.push(ValidationCase {
            id: format!("example:README.md:{line}"),
            input: body.trim_end().to_string(),
            expected,
            provenance: Provenance::RepoExample,
            gates: None,
        });
    }
    out
}

/// Test suites first, then README examples, capped.
pub fn discover(root: &Path) -> Vec<ValidationCase> {
    let mut cases = test_scripts(root);
    cases.extend(make_test(root));
    cases.extend(pytest(root));
    cases.extend(readme_examples(root));
    cases.truncate(MAX_DISCOVERED);
    cases
}

pub fn evaluate_case(case: &ValidationCase, policy: &SandboxPolicy) -> CaseResult {
    let mut transcript = String::new();
    let mut stdout = String::new();
    let mut exit = None;
    if !case.input.trim().is_empty() {
        let out = sandbox::run(policy, &ExecRequest::new(&case.input));
        transcript = out.transcript(&case.input);
        exit = out.exit_code;
        stdout = out.stdout;
    }
    let (pass, verdict) = match &case.expected {
        Matcher::ExactText { text } => (
            stdout.trim() == text.trim(),
            format!("expected stdout {:?}, got {:?}", text.trim(), stdout.trim()),
        ),
        Matcher::FileExistsNonempty { path } => match policy.resolve(path) {
            Ok(p) => (nonempty(&p), format!("expected non-empty {path}")),
            Err(e) => (false, e.to_string()),
        },
        Matcher::ExitCode { code } => (exit == Some(*code), format!("expected exit {code}, got {exit:?}")),
        Matcher::Digest { path, sha256 } => {
            let got = match path {
                Some(p) => policy
                    .resolve(p)
                    .ok()
                    .and_then(|p| sha256_file(&p).ok())
                    .unwrap_or_default(),
                None => hex::encode(Sha256::digest(stdout.as_bytes())),
            };
            (got.eq_ignore_ascii_case(sha256), format!("expected sha256 {sha256}, got {got}"))
        }
    };
    transcript.push_str(&format!("{}: {verdict}\n", if pass { "pass" } else { "FAIL" }));
    CaseResult {
        case_id: case.id.clone(),
        outcome: if pass { CaseOutcome::Pass } else { CaseOutcome::Fail },
        transcript,
    }
}

/// Conjunction of every case, each run in the sandbox.
pub fn evaluate_gate<'a>(
    cases: impl IntoIterator<Item = &'a ValidationCase>,
    policy: &SandboxPolicy,
    clock: &Clock,
) -> GateReport {
    let results = cases.into_iter().map(|c| evaluate_case(c, policy)).collect();
    GateReport::from_results(results, clock.now())
}
