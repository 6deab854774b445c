//! Criterion checks shared by the topic tests and the acceptance report.
//! Each check returns `Ok(detail)` or `Err(reason)`.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use agentizer::a2a::router::{route, RemoteAgent};
use agentizer::a2a::service::read_service_log;
use agentizer::a2a::{serve, Client, Service, ServiceHandle};
use agentizer::bench::{run_suite, BenchOptions};
use agentizer::engine::{Engine, EngineConfig};
use agentizer::knowledge::build_ckg;
use agentizer::pipeline::{agentize, load_history, AgentizeOptions, AgentizeReport};
use agentizer::planner::{self, PlannerKind, ScriptedPlanner};
use agentizer::runlog::{Event, Record, RunLog};
use agentizer::sandbox::{self, ExecRequest, Network, SandboxPolicy};
use agentizer::tools::{PathLocks, Registry, ToolContext};
use agentizer::validation::evaluate_gate;
use agentizer::workspace::{read_doc, Workspace};
use agentizer::Error;
use agentizer_core::a2a::{
    A2ARequest, A2AResponse, AgentCard, AgentSkill, ArtifactRef, Binding, FieldSchema, FieldType, OutputSource,
    ResponseStatus, RouteError, SkillBacking, PROTOCOL_VERSION,
};
use agentizer_core::bench::{compute_ecr, compute_tpr, Percentage, TaskRecord, TaskResult};
use agentizer_core::graph::dispatch_parallel;
use agentizer_core::knowledge::{CodeKnowledgeGraph, UsageKb};
use agentizer_core::planner::TokenUsage;
use agentizer_core::validation::{CaseOutcome, Matcher, Provenance, ValidationCase};
use agentizer_core::{EnvState, Goal, GoalOrigin, Node, NodeState, Operation, ResourceCaps, TaskGraph, Trajectory};
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use serde_json::{json, Value};

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if let false = $cond {
            return Err(format!($($fmt)+));
        }
    };
}

pub const RANDOM_CASES: u32 = 1000;
pub const FUZZ_MIN: usize = 500;
pub const TIMEOUT_SLACK: f64 = 1.5;
pub const E2E_BUDGET: Duration = Duration::from_secs(60);
pub const MAX_RETRIES: u32 = 10;
pub const MAX_STEPS: u32 = 200;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn repo(name: &str) -> PathBuf {
    fixtures().join("repos").join(name)
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_agentizer")
}

fn err<E: std::fmt::Display>(what: &str) -> impl FnOnce(E) -> String + '_ {
    move |e| format!("{what}: {e}")
}

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn run_prop<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Check
where
    S::Value: std::fmt::Debug,
{
    runner(cases)
        .run(&strategy, test)
        .map(|()| format!("{cases} cases"))
        .map_err(|e| e.to_string())
}

pub fn agentize_into(name: &str, dir: &Path) -> agentizer::Result<AgentizeReport> {
    let opts = AgentizeOptions {
        workspace: Some(dir.to_path_buf()),
        ..Default::default()
    };
    agentize(&repo(name), &opts)
}

pub fn card_schema() -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/a2a-card-schema/agent-card.schema.json");
    serde_json::from_str(&fs::read_to_string(path).expect("card schema")).expect("schema is JSON")
}

pub fn card_schema_errors(doc: &Value) -> Vec<String> {
    let validator = jsonschema::validator_for(&card_schema()).expect("schema compiles");
    validator.iter_errors(doc).map(|e| format!("{} at {}", e, e.instance_path())).collect()
}

// ---------------------------------------------------------------- metrics

fn half_up_hundredths(k: u64, n: u64) -> u64 {
    (20_000 * k + n) / (2 * n)
}

fn fmt_hundredths(h: u64) -> String {
    format!("{}.{:02}", h / 100, h % 100)
}

fn records(passed: usize, failed_quality: usize, failed_exec: usize) -> Vec<TaskRecord> {
    let mut out = Vec::new();
    let mut push = |result, n| {
        for _ in 0..n {
            out.push(TaskRecord {
                task_id: format!("t{}", out.len()),
                repo: "r".into(),
                query: "q".into(),
                expected: Matcher::ExitCode { code: 0 },
                result,
                tokens: TokenUsage::default(),
                diagnostic: None,
            });
        }
    };
    push(TaskResult::Passed, passed);
    push(TaskResult::FailedQuality, failed_quality);
    push(TaskResult::FailedExecution, failed_exec);
    out
}

/// 40 of 54 tasks executed and 28 passed; the two small shares are 3 and 1
/// task out of 54.
pub fn metric_arithmetic() -> Check {
    let tasks = records(28, 12, 14);
    let ecr = compute_ecr(&tasks).map_err(err("ecr"))?.to_string();
    let tpr = compute_tpr(&tasks).map_err(err("tpr"))?.to_string();
    let small = Percentage::ratio(3, 54).to_string();
    let tiny = Percentage::ratio(1, 54).to_string();
    let reported = ["74.07", "51.85", "5.56", "1.85"];
    let oracle: Vec<String> = [(40, 54), (28, 54), (3, 54), (1, 54)]
        .iter()
        .map(|&(k, n)| fmt_hundredths(half_up_hundredths(k, n)))
        .collect();
    let got = [ecr, tpr, small, tiny];
    for i in 0..4 {
        ensure!(got[i] == oracle[i], "computed {} but the oracle gives {}", got[i], oracle[i]);
        ensure!(got[i] == reported[i], "computed {} but the reported figure is {}", got[i], reported[i]);
    }
    Ok(format!("ECR {} TPR {} / {} / {}", got[0], got[1], got[2], got[3]))
}

// ---------------------------------------------------------------- end to end

pub fn run_cli(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(bin()).args(args).output().expect("run agentizer");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

pub fn check_card_file(path: &Path) -> Result<AgentCard, String> {
    let text = fs::read_to_string(path).map_err(err("card"))?;
    let doc: Value = serde_json::from_str(&text).map_err(err("card json"))?;
    let errors = card_schema_errors(&doc);
    ensure!(errors.is_empty(), "card violates the schema: {}", errors.join("; "));
    let card: AgentCard = serde_json::from_value(doc).map_err(err("card"))?;
    card.validate().map_err(err("card"))?;
    Ok(card)
}

/// `agentize` through the CLI on the image repositories, offline.
pub fn e2e_fixtures(scratch: &Path) -> Check {
    let start = Instant::now();
    let mut skills = Vec::new();
    for name in ["resize-repo", "stylize-repo", "caption-repo"] {
        let ws = scratch.join(name);
        let (code, _, stderr) = run_cli(&["agentize", repo(name).to_str().unwrap(), "--workspace", ws.to_str().unwrap()]);
        ensure!(code == 0, "{name}: exit {code}: {stderr}");
        let card = check_card_file(&ws.join(".agentizer/agent-card"))?;
        let env: EnvState = read_doc(&ws.join(".agentizer/env-state.json")).map_err(err("env-state"))?;
        ensure!(env.is_finished(), "{name}: environment not finished");
        skills.extend(card.skills.iter().map(|s| s.id.clone()));
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < E2E_BUDGET, "took {elapsed:?}");
    // Without --allow-network every sandboxed command runs with network
    // access denied; the kernel enforces it where Landlock is available.
    let default_net = EngineConfig::default().network;
    ensure!(default_net == Network::Denied, "default network policy is {default_net:?}");
    Ok(format!(
        "3 cards valid, skills {skills:?}, {:.1}s, network denied (enforced: {})",
        elapsed.as_secs_f64(),
        sandbox::confinement_supported()
    ))
}

fn suite_path() -> PathBuf {
    fixtures().join("bench/suite.json")
}

pub fn bench_suite(scratch: &Path) -> Check {
    let opts = BenchOptions {
        workdir: Some(scratch.to_path_buf()),
        ..Default::default()
    };
    let run = run_suite(&suite_path(), &opts).map_err(err("bench"))?;
    let r = &run.report;
    let n = r.tasks.len() as u64;
    let executed = r.tasks.iter().filter(|t| matches!(t.result, TaskResult::Passed | TaskResult::FailedQuality | TaskResult::Executed)).count() as u64;
    let passed = r.tasks.iter().filter(|t| t.result == TaskResult::Passed).count() as u64;
    ensure!(n == 4, "suite has {n} tasks");
    ensure!(r.ecr.to_string() == fmt_hundredths(half_up_hundredths(executed, n)), "ECR {} disagrees with the task results", r.ecr);
    ensure!(r.tpr.to_string() == fmt_hundredths(half_up_hundredths(passed, n)), "TPR {} disagrees with the task results", r.tpr);
    let diags: Vec<String> = r.tasks.iter().filter_map(|t| t.diagnostic.clone()).collect();
    ensure!(r.ecr.to_string() == "100.00" && r.tpr.to_string() == "100.00", "ECR {} TPR {}: {diags:?}", r.ecr, r.tpr);
    ensure!(r.total_tokens == TokenUsage::default(), "tokens {:?}", r.total_tokens);
    Ok(format!("ECR {} TPR {} tokens ({}, {})", r.ecr, r.tpr, r.total_tokens.input, r.total_tokens.output))
}

/// The suite with absolute repository paths and task `wrong` expecting a
/// text it will not print.
pub fn suite_with_wrong_matcher(dir: &Path, wrong: &str) -> PathBuf {
    let mut suite: Value = serde_json::from_str(&fs::read_to_string(suite_path()).unwrap()).unwrap();
    for t in suite["tasks"].as_array_mut().unwrap() {
        let rel = t["repo"].as_str().unwrap().to_string();
        t["repo"] = json!(fixtures().join("bench").join(rel).to_str().unwrap());
        if t["task-id"] == wrong {
            t["matcher"] = json!({"kind": "exact-text", "text": "not what the skill prints"});
            t.as_object_mut().unwrap().remove("check");
        }
    }
    let path = dir.join("suite.json");
    fs::write(&path, serde_json::to_string_pretty(&suite).unwrap()).unwrap();
    path
}

// ---------------------------------------------------------------- scheduler

fn gnode(i: usize) -> Node {
    let goal = Goal::new(format!("g{i}"), format!("goal {i}"), GoalOrigin::TodoDerived).unwrap();
    Node::new(format!("n{i:02}"), i as u64, goal)
}

fn closure(n: usize, edges: &BTreeSet<(usize, usize)>) -> Vec<Vec<bool>> {
    let mut r = vec![vec![false; n]; n];
    for &(a, b) in edges {
        r[a][b] = true;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if r[i][k] && r[k][j] {
                    r[i][j] = true;
                }
            }
        }
    }
    r
}

fn nid(i: usize) -> String {
    format!("n{i:02}")
}

fn nidx(id: &str) -> usize {
    id[1..].parse().unwrap()
}

/// Random edge attempts: cycle attempts must be rejected, everything else
/// accepted, and the graph stays acyclic.
pub fn scheduler_acyclicity() -> Check {
    let strategy = (1usize..14, prop::collection::vec((0usize..14, 0usize..14), 0..40));
    let rejected = std::cell::Cell::new(0usize);
    let res = run_prop(RANDOM_CASES, strategy, |(n, attempts)| {
        let mut g = TaskGraph::new(gnode(0));
        for i in 1..n {
            g.add_node(gnode(i)).unwrap();
        }
        let mut accepted = BTreeSet::new();
        for (a, b) in attempts {
            let (a, b) = (a % n, b % n);
            let mut trial = accepted.clone();
            trial.insert((a, b));
            let cycles = a == b || closure(n, &trial)[b][a];
            let res = g.add_edge(&nid(a), &nid(b));
            prop_assert_eq!(res.is_err(), cycles, "edge {}->{}", a, b);
            if cycles {
                rejected.set(rejected.get() + 1);
            } else {
                accepted.insert((a, b));
            }
        }
        let r = closure(n, &accepted);
        prop_assert!((0..n).all(|i| !r[i][i]));
        prop_assert_eq!(g.topological_order().len(), n);
        let got: BTreeSet<(usize, usize)> = g.edges.iter().map(|(a, b)| (nidx(a), nidx(b))).collect();
        prop_assert_eq!(got, accepted);
        Ok(())
    })?;
    ensure!(rejected.get() > 0, "no cycle attempt was generated");
    Ok(format!("{res}, {} cycle attempts rejected", rejected.get()))
}

/// Random DAGs run to completion by the dispatcher: every node starts only
/// after all its predecessors finished, and the topological order respects
/// every edge.
pub fn scheduler_order() -> Check {
    let strategy = (
        1usize..14,
        prop::collection::vec((0usize..14, 0usize..14), 0..40),
        1usize..5,
        prop::collection::vec(0u32..3, 14),
    );
    run_prop(RANDOM_CASES, strategy, |(n, attempts, par, demands)| {
        let mut g = TaskGraph::new(gnode(0).with_demand("gpu", demands[0]));
        for (i, &d) in demands.iter().enumerate().take(n).skip(1) {
            g.add_node(gnode(i).with_demand("gpu", d)).unwrap();
        }
        for (a, b) in attempts {
            let _ = g.add_edge(&nid(a % n), &nid(b % n));
        }
        let edges: Vec<(usize, usize)> = g.edges.iter().map(|(a, b)| (nidx(a), nidx(b))).collect();
        let order: Vec<usize> = g.topological_order().iter().map(|s| nidx(s)).collect();
        let pos: BTreeMap<usize, usize> = order.iter().enumerate().map(|(p, &i)| (i, p)).collect();
        prop_assert_eq!(pos.len(), n);
        for &(a, b) in &edges {
            prop_assert!(pos[&a] < pos[&b]);
        }
        let caps = ResourceCaps::new(par).unwrap().with_capacity("gpu", 2).unwrap();
        let mut finished_round: BTreeMap<usize, usize> = BTreeMap::new();
        let mut round = 0;
        while finished_round.len() < n {
            let ready = g.ready_set(&|_| true);
            prop_assert!(!ready.is_empty(), "stuck with {} of {} done", finished_round.len(), n);
            let batch = dispatch_parallel(&g, &ready, &caps);
            prop_assert!(!batch.is_empty() && batch.len() <= par);
            for id in &batch {
                let i = nidx(id);
                for &(a, b) in &edges {
                    if b == i {
                        prop_assert!(finished_round.get(&a).is_some_and(|&r| r < round), "{} started before {}", b, a);
                    }
                }
                let node = g.node_mut(id).unwrap();
                node.transition_state(NodeState::Running).unwrap();
                node.transition_state(NodeState::Done).unwrap();
                finished_round.insert(i, round);
            }
            round += 1;
        }
        Ok(())
    })
}

/// A repository whose plan fans out into `steps`, with `after` edges
/// `(from, to)`. Each step writes `out/<k>.txt` holding its predecessors'
/// files followed by its own number.
pub fn write_dag_repo(dir: &Path, steps: usize, edges: &[(usize, usize)]) {
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join("README.md"), "# dag\n\nA repository that only runs its plan.\n").unwrap();
    fs::create_dir_all(dir.join("tests")).unwrap();
    let all: Vec<String> = (0..steps).map(|k| format!("test -s out/{k}.txt")).collect();
    fs::write(dir.join("tests/outputs.sh"), format!("#!/bin/sh\n{}\n", all.join(" && "))).unwrap();
    let name = |k: usize| format!("Step {k}");
    let followups: Vec<Value> = (0..steps)
        .map(|k| {
            let after: Vec<String> = edges.iter().filter(|e| e.1 == k).map(|e| name(e.0)).collect();
            json!({"text": name(k), "after": after, "check": {"kind": "artifact-exists", "arg": format!("out/{k}.txt")}})
        })
        .collect();
    let mut entries = vec![
        json!({"pattern": "To agentize the given repo", "kind": "synthesize-operation",
               "response": {"operation": {"tool": "read-file", "arguments": {"path": "README.md"}}}}),
        json!({"pattern": "To agentize the given repo", "kind": "derive-followups", "response": {"followups": followups}}),
    ];
    for k in 0..steps {
        let preds: Vec<String> = edges.iter().filter(|e| e.1 == k).map(|e| format!("out/{}.txt", e.0)).collect();
        let cat = if preds.is_empty() { String::new() } else { format!("cat {}; ", preds.join(" ")) };
        let script = format!("mkdir -p out && {{ {cat}echo {k}; }} > out/{k}.tmp && mv out/{k}.tmp out/{k}.txt");
        entries.push(json!({"pattern": name(k), "kind": "synthesize-operation",
            "response": {"operation": {"tool": "exec-script", "arguments": {"script": script, "produces": [format!("out/{k}.txt")]}}}}));
    }
    fs::write(dir.join("agentizer.plan.json"), serde_json::to_string_pretty(&json!({"entries": entries})).unwrap()).unwrap();
}

/// Trajectory id, status, nodes (id, goal, state), edges and gate outcomes.
pub type TrajectoryShape = (String, String, Vec<(String, String, NodeState)>, BTreeSet<(String, String)>, Vec<(String, String)>);

/// What must not depend on the degree of parallelism.
#[derive(Debug, PartialEq)]
pub struct RunShape {
    pub env: EnvState,
    pub trajectories: Vec<TrajectoryShape>,
    pub gate: Vec<(String, String)>,
    pub outputs: BTreeMap<String, String>,
}

pub struct DagRun {
    pub shape: RunShape,
    pub log: Vec<Record>,
    pub history: Vec<Trajectory>,
}

pub fn run_dag(repo: &Path, ws_dir: &Path, parallelism: usize) -> Result<DagRun, String> {
    let ws = Workspace::prepare(repo, Some(ws_dir)).map_err(err("workspace"))?;
    let planner = planner::build(PlannerKind::Scripted, ws.root(), None).map_err(err("planner"))?;
    let mut config = EngineConfig::default();
    config.caps.default_parallelism = parallelism;
    let engine = Engine::new(ws.clone(), planner, config).map_err(err("engine"))?;
    let setup = engine.setup().map_err(err("setup"))?;
    let mut env = engine.env_state();
    env.workspace_root.clear();
    let history = load_history(&ws).map_err(err("history"))?;
    let mut trajectories: Vec<_> = history
        .iter()
        .map(|t| {
            let nodes = t.graph.nodes.values().map(|n| (n.id.clone(), n.goal.text.clone(), n.state)).collect();
            let edges = t.graph.edges.iter().cloned().collect();
            let gate = t
                .gate
                .iter()
                .flat_map(|g| g.per_case.iter().map(|c| (c.case_id.clone(), format!("{:?}", c.outcome))))
                .collect();
            (t.id.clone(), format!("{:?}", t.status), nodes, edges, gate)
        })
        .collect();
    trajectories.sort();
    let gate = setup.gate.per_case.iter().map(|c| (c.case_id.clone(), format!("{:?}", c.outcome))).collect();
    let mut outputs = BTreeMap::new();
    if let Ok(dir) = fs::read_dir(ws.root().join("out")) {
        for e in dir.flatten() {
            outputs.insert(e.file_name().to_string_lossy().into_owned(), fs::read_to_string(e.path()).unwrap_or_default());
        }
    }
    let log = RunLog::read(&ws.run_log()).map_err(err("run log"))?;
    Ok(DagRun {
        shape: RunShape {
            env,
            trajectories,
            gate,
            outputs,
        },
        log,
        history,
    })
}

/// Audit a run log: within each trajectory, a node starts only after every
/// predecessor's last completion.
pub fn audit_order(run: &DagRun) -> Result<usize, String> {
    let mut checked = 0;
    for t in &run.history {
        let pos = |node: &str, ev: Event| -> Vec<usize> {
            run.log
                .iter()
                .enumerate()
                .filter(|(_, r)| r.trajectory.as_deref() == Some(&t.id) && r.node_id == node && r.event == ev)
                .map(|(i, _)| i)
                .collect()
        };
        for (a, b) in &t.graph.edges {
            let done = pos(a, Event::Done);
            for s in pos(b, Event::Started) {
                ensure!(done.iter().any(|&d| d < s), "{}: {b} started at record {s} before {a} was done", t.id);
                checked += 1;
            }
        }
    }
    Ok(checked)
}

/// Expected file contents for the DAG: each file lists, depth first, its
/// predecessors' contents, then its own number.
pub fn dag_oracle(steps: usize, edges: &[(usize, usize)]) -> BTreeMap<String, String> {
    fn content(k: usize, edges: &[(usize, usize)], memo: &mut BTreeMap<usize, String>) -> String {
        if let Some(c) = memo.get(&k) {
            return c.clone();
        }
        let mut preds: Vec<usize> = edges.iter().filter(|e| e.1 == k).map(|e| e.0).collect();
        preds.sort();
        preds.dedup();
        let mut s: String = preds.iter().map(|&p| content(p, edges, memo)).collect();
        s.push_str(&format!("{k}\n"));
        memo.insert(k, s.clone());
        s
    }
    let mut memo = BTreeMap::new();
    (0..steps).map(|k| (format!("{k}.txt"), content(k, edges, &mut memo))).collect()
}

fn concurrent_starts(run: &DagRun) -> bool {
    let mut running = 0usize;
    for r in &run.log {
        match r.event {
            Event::Started => {
                running += 1;
                if running >= 2 {
                    return true;
                }
            }
            Event::Done | Event::Failed => running = running.saturating_sub(1),
            _ => {}
        }
    }
    false
}

fn compare_dag(scratch: &Path, label: &str, steps: usize, edges: &[(usize, usize)]) -> Result<(bool, usize), String> {
    let repo = scratch.join(format!("{label}-repo"));
    write_dag_repo(&repo, steps, edges);
    let serial = run_dag(&repo, &scratch.join(format!("{label}-serial")), 1)?;
    let parallel = run_dag(&repo, &scratch.join(format!("{label}-parallel")), 4)?;
    ensure!(serial.shape == parallel.shape, "{label}: serial and parallel runs differ:\n{:#?}\nvs\n{:#?}", serial.shape, parallel.shape);
    let oracle = dag_oracle(steps, edges);
    ensure!(parallel.shape.outputs == oracle, "{label}: outputs {:?}, expected {:?}", parallel.shape.outputs, oracle);
    let audited = audit_order(&serial)? + audit_order(&parallel)?;
    Ok((concurrent_starts(&parallel), audited))
}

pub const DAG_FIXTURES: u32 = 8;

/// Serial and four-wide runs agree on the diamond and on random DAGs.
pub fn parallel_equals_serial(scratch: &Path) -> Check {
    let diamond = [(0, 1), (0, 2), (1, 3), (2, 3)];
    let (overlap, mut audited) = compare_dag(scratch, "diamond", 4, &diamond)?;
    ensure!(overlap, "the diamond's middle steps never ran concurrently");
    let strategy = (2usize..7, prop::collection::vec((0usize..7, 0usize..7), 0..10));
    let mut runner = runner(DAG_FIXTURES);
    let mut n = 0;
    for case in 0..DAG_FIXTURES {
        let (steps, raw) = strategy.new_tree(&mut runner).map_err(err("strategy"))?.current();
        let edges: Vec<(usize, usize)> = raw
            .into_iter()
            .map(|(a, b)| (a % steps, b % steps))
            .filter(|(a, b)| a < b)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        audited += compare_dag(scratch, &format!("dag{case}"), steps, &edges)?.1;
        n += 1;
    }
    Ok(format!("diamond + {n} random DAGs equal; {audited} edge starts audited"))
}

/// The order audit over real engine runs.
pub fn engine_order_audit(scratch: &Path) -> Check {
    let edges = [(0, 2), (1, 2), (2, 3), (0, 4), (4, 5), (3, 5)];
    let repo = scratch.join("audit-repo");
    write_dag_repo(&repo, 6, &edges);
    let run = run_dag(&repo, &scratch.join("audit-ws"), 4)?;
    let n = audit_order(&run)?;
    ensure!(n >= edges.len(), "only {n} edge starts seen");
    Ok(format!("{n} edge starts after their predecessors"))
}

// ---------------------------------------------------------------- budget

pub fn budget(scratch: &Path) -> Check {
    let ws = scratch.join("fail");
    let res = agentize_into("fail-repo", &ws);
    let retries = match res {
        Err(Error::RetriesExhausted { retries, .. }) => retries,
        Err(e) => return Err(format!("unexpected error {e}")),
        Ok(_) => return Err("the always-failing repository was agentized".into()),
    };
    let log = RunLog::read(&ws.join(".agentizer/run.log")).map_err(err("run log"))?;
    let trajectory_retries = log.iter().filter(|r| r.event == Event::TrajectoryRetry).count();
    let executions = log.iter().filter(|r| r.event == Event::Started).count();
    ensure!(retries == MAX_RETRIES, "gave up after {retries} retries");
    ensure!(trajectory_retries == MAX_RETRIES as usize, "{trajectory_retries} trajectory retries logged");
    ensure!(executions <= MAX_STEPS as usize, "{executions} node executions");
    let env: EnvState = read_doc(&ws.join(".agentizer/env-state.json")).map_err(err("env-state"))?;
    ensure!(!env.is_finished(), "environment marked finished");
    Ok(format!("{trajectory_retries} trajectory retries, {executions} node executions"))
}

// ---------------------------------------------------------------- gate

/// Gate reports over file checks equal the conjunction computed directly
/// from the files.
pub fn gate_conjunction(scratch: &Path) -> Check {
    let dir = scratch.join("gate");
    fs::create_dir_all(&dir).map_err(err("mkdir"))?;
    let files = ["full-a", "full-b", "empty", "missing", "../outside"];
    fs::write(dir.join("full-a"), "x").unwrap();
    fs::write(dir.join("full-b"), "y").unwrap();
    fs::write(dir.join("empty"), "").unwrap();
    let policy = SandboxPolicy::new(&dir, Duration::from_secs(5), Network::Denied).map_err(err("policy"))?;
    let clock = agentizer::runlog::Clock::logical();
    let direct = |f: &str| !f.starts_with("..") && fs::metadata(dir.join(f)).is_ok_and(|m| m.len() > 0);
    run_prop(RANDOM_CASES, prop::collection::vec(0usize..5, 0..12), |picks| {
        let cases: Vec<ValidationCase> = picks
            .iter()
            .enumerate()
            .map(|(i, &p)| ValidationCase {
                id: format!("c{i}"),
                input: String::new(),
                expected: Matcher::FileExistsNonempty { path: files[p].into() },
                provenance: Provenance::Synthesized,
                gates: None,
            })
            .collect();
        let report = evaluate_gate(&cases, &policy, &clock);
        let expected: Vec<bool> = picks.iter().map(|&p| direct(files[p])).collect();
        let got: Vec<bool> = report.per_case.iter().map(|c| c.outcome == CaseOutcome::Pass).collect();
        prop_assert_eq!(&got, &expected);
        prop_assert_eq!(report.passed, expected.iter().all(|&b| b));
        Ok(())
    })
}

/// Finished appears only behind a passing repository gate.
pub fn finished_requires_gate(scratch: &Path) -> Check {
    let mut env = EnvState::new("x");
    ensure!(env.finish(false).is_err() && !env.is_finished(), "finish(false) accepted");
    let ok = agentize_into("caption-repo", &scratch.join("finished")).map_err(err("caption"))?;
    ensure!(ok.gate.passed && ok.workspace.root().join(".agentizer/env-state.json").exists(), "gate not passed");
    let env: EnvState = read_doc(&ok.workspace.env_state()).map_err(err("env"))?;
    ensure!(env.is_finished(), "passing repository not finished");
    let cases: Vec<ValidationCase> = read_doc(&ok.workspace.system_tests()).map_err(err("system tests"))?;
    let policy = SandboxPolicy::new(ok.workspace.root(), Duration::from_secs(30), Network::Denied).unwrap();
    let regate = evaluate_gate(&cases, &policy, &agentizer::runlog::Clock::logical());
    ensure!(regate.passed, "recorded system tests fail on the finished workspace");
    let failing = scratch.join("unfinished");
    let _ = agentize_into("fail-repo", &failing);
    let env: EnvState = read_doc(&failing.join(".agentizer/env-state.json")).map_err(err("env"))?;
    ensure!(!env.is_finished(), "failing repository finished");
    Ok(format!("{} system tests pass on the finished workspace; failing repo is {:?}", cases.len(), env.status))
}

// ---------------------------------------------------------------- a2a

fn ident() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9]{0,6}(-[a-z0-9]{1,5}){0,2}"
}

fn field_type() -> impl Strategy<Value = FieldType> {
    prop::sample::select(vec![FieldType::String, FieldType::Path, FieldType::Integer, FieldType::Number, FieldType::Boolean])
}

fn schema() -> impl Strategy<Value = BTreeMap<String, FieldSchema>> {
    prop::collection::btree_map(ident(), (field_type(), any::<bool>()).prop_map(|(ty, required)| FieldSchema { ty, required }), 1..4)
}

fn skill() -> impl Strategy<Value = AgentSkill> {
    (ident(), "[ -~]{0,30}", "\\PC{0,40}", schema(), schema(), ident()).prop_map(|(id, name, description, input, output, cap)| {
        let first_in = input.keys().next().unwrap().clone();
        let invocation = format!("sh run.sh {}", input.keys().map(|k| format!("{{{k}}}")).collect::<Vec<_>>().join(" "));
        let outputs = output
            .keys()
            .enumerate()
            .map(|(i, k)| {
                let src = if i % 2 == 0 { OutputSource::Stdout } else { OutputSource::Input { field: first_in.clone() } };
                (k.clone(), src)
            })
            .collect();
        AgentSkill {
            id,
            name: if name.trim().is_empty() { "skill".into() } else { name },
            description,
            input_schema: input,
            output_schema: output,
            backing: SkillBacking {
                capability: format!("cap:{cap}"),
                invocation,
                outputs,
            },
        }
    })
}

fn card() -> impl Strategy<Value = AgentCard> {
    (ident(), ident(), "[0-9]\\.[0-9]{1,2}\\.[0-9]", "\\PC{0,60}", prop::collection::vec(skill(), 1..4), ident(), 1u16..)
        .prop_map(|(agent, repo, version, description, mut skills, host, port)| {
            let mut seen = BTreeSet::new();
            skills.retain(|s| seen.insert(s.id.clone()));
            AgentCard {
                agent_name: agent,
                repo,
                version,
                description,
                skills,
                endpoint: format!("http://{host}:{port}"),
                protocol_version: PROTOCOL_VERSION.into(),
            }
        })
}

fn json_value() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::from),
        any::<i64>().prop_map(Value::from),
        any::<u64>().prop_map(Value::from),
        (-1e12f64..1e12).prop_map(Value::from),
        "\\PC{0,12}".prop_map(Value::from),
    ];
    leaf.prop_recursive(3, 24, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(Value::from),
            prop::collection::btree_map(ident(), inner, 0..4).prop_map(|m| Value::Object(m.into_iter().collect())),
        ]
    })
}

fn request() -> impl Strategy<Value = A2ARequest> {
    ("[A-Za-z0-9._-]{1,20}", ident(), prop::collection::btree_map(ident(), json_value(), 0..4), prop::option::of("\\PC{0,30}"))
        .prop_map(|(task_id, skill_id, input, context)| A2ARequest {
            task_id,
            skill_id,
            input: Value::Object(input.into_iter().collect()),
            context,
        })
}

fn response() -> impl Strategy<Value = A2AResponse> {
    (
        "[A-Za-z0-9._-]{1,20}",
        prop::sample::select(vec![ResponseStatus::Completed, ResponseStatus::Failed, ResponseStatus::Rejected]),
        prop::collection::btree_map(ident(), json_value(), 0..4),
        prop::collection::vec(("[0-9a-f]{12}", ident()).prop_map(|(token, name)| ArtifactRef { token, name }), 0..3),
        "\\PC{1,30}",
        (0u64..1 << 40, 0u64..1 << 40),
    )
        .prop_map(|(task_id, status, output, artifacts, diagnostic, (i, o))| {
            let completed = status == ResponseStatus::Completed;
            A2AResponse {
                task_id,
                status,
                output: completed.then(|| Value::Object(output.into_iter().collect())),
                artifacts: if completed { artifacts } else { Vec::new() },
                diagnostic: (!completed).then_some(diagnostic),
                usage: TokenUsage { input: i, output: o },
            }
        })
}

fn round_trip<T>(v: &T) -> Result<(), TestCaseError>
where
    T: serde::Serialize + serde::de::DeserializeOwned + PartialEq + std::fmt::Debug,
{
    let compact: T = serde_json::from_str(&serde_json::to_string(v).unwrap()).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(&compact, v);
    let pretty: T = serde_json::from_str(&agentizer::workspace::to_document(v)).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(&pretty, v);
    Ok(())
}

pub fn a2a_round_trips() -> Check {
    let cards = run_prop(RANDOM_CASES, card(), |c| {
        prop_assert!(c.validate().is_ok(), "{:?}", c.validate());
        let doc = serde_json::to_value(&c).unwrap();
        let errors = card_schema_errors(&doc);
        prop_assert!(errors.is_empty(), "{:?}", errors);
        round_trip(&c)
    })?;
    let requests = run_prop(RANDOM_CASES, request(), |r| round_trip(&r))?;
    let responses = run_prop(RANDOM_CASES, response(), |r| round_trip(&r))?;
    Ok(format!("cards {cards}, requests {requests}, responses {responses}"))
}

/// Requests that fail validation, against the caption agent's single skill
/// `caption-image(image-path: path)`.
pub fn invalid_requests() -> Vec<A2ARequest> {
    let mut out = Vec::new();
    let mut push = |task: String, skill: &str, input: Value| {
        out.push(A2ARequest {
            task_id: task,
            skill_id: skill.into(),
            input,
            context: None,
        })
    };
    let bad_values = [json!(null), json!(1), json!(2.5), json!(true), json!([]), json!({}), json!(""), json!("   "), json!(["samples/square.pgm"])];
    let escapes = ["../x", "../../etc/passwd", "/etc/passwd", "samples/../../x", "./../x", "a/b/../../../c", "/", "..", "samples/../..", "\u{0}"];
    let mut i = 0;
    let mut next = || {
        i += 1;
        format!("bad-{i}")
    };
    for v in &bad_values {
        push(next(), "caption-image", json!({ "image-path": v }));
    }
    for e in escapes {
        push(next(), "caption-image", json!({ "image-path": e }));
    }
    push(next(), "caption-image", json!({}));
    push(next(), "caption-image", json!({"image": "samples/square.pgm"}));
    push(next(), "caption-image", json!("samples/square.pgm"));
    push(next(), "caption-image", json!(null));
    push(next(), "caption-image", json!(["samples/square.pgm"]));
    for s in ["", "caption", "Caption-Image", "caption-image ", "resize-image", "../caption-image"] {
        push(next(), s, json!({"image-path": "samples/square.pgm"}));
    }
    push(String::new(), "caption-image", json!({"image-path": "samples/square.pgm"}));
    push("   ".into(), "caption-image", json!({"image-path": "samples/square.pgm"}));
    out
}

pub fn a2a_rejection(scratch: &Path) -> Check {
    let r = agentize_into("caption-repo", &scratch.join("reject")).map_err(err("caption"))?;
    let service = Service::open(r.workspace.clone(), Duration::from_secs(30)).map_err(err("service"))?;
    let fixed = invalid_requests();
    let counter = std::cell::Cell::new(0u32);
    let generated = run_prop(RANDOM_CASES, (ident(), json_value()), |(k, v)| {
        // Random inputs that are not a single non-blank string path.
        let input = match (&v, k.as_str()) {
            (Value::String(s), _) if !s.trim().is_empty() => json!({ "image-path": [s] }),
            (_, "image-path") => json!({ "image-path": v }),
            _ => json!({ "image-path": v, k.as_str(): 1 }),
        };
        let resp = service.handle(&A2ARequest {
            task_id: {
                counter.set(counter.get() + 1);
                format!("gen-{}", counter.get())
            },
            skill_id: "caption-image".into(),
            input,
            context: None,
        });
        prop_assert_eq!(resp.status, ResponseStatus::Rejected);
        Ok(())
    });
    let generated_note = match generated {
        Ok(n) => n,
        Err(e) => return Err(format!("generated invalid request accepted: {e}")),
    };
    for req in &fixed {
        let resp = service.handle(req);
        ensure!(resp.status == ResponseStatus::Rejected, "{req:?} was {:?}", resp.status);
        ensure!(resp.check(&r.card.skills[0]).is_ok(), "malformed rejection {resp:?}");
    }
    ensure!(service.executions() == 0, "{} executions after invalid requests", service.executions());
    let log = read_service_log(&r.workspace).map_err(err("service log"))?;
    ensure!(log.iter().all(|e| e.event != "exec"), "service log records an execution");
    let valid = A2ARequest {
        task_id: "ok".into(),
        skill_id: "caption-image".into(),
        input: json!({"image-path": "samples/square.pgm"}),
        context: None,
    };
    let first = service.handle(&valid);
    ensure!(first.status == ResponseStatus::Completed && service.executions() == 1, "valid request: {first:?}");
    let again = service.handle(&valid);
    ensure!(again.status == ResponseStatus::Rejected && service.executions() == 1, "duplicate task id: {again:?}");
    Ok(format!("{} fixed + {generated_note} generated invalid requests rejected with 0 executions", fixed.len()))
}

// ---------------------------------------------------------------- router

pub struct Agents {
    pub handles: Vec<ServiceHandle>,
    pub remotes: Vec<RemoteAgent>,
    pub reports: BTreeMap<String, AgentizeReport>,
}

impl Agents {
    pub fn service(&self, agent: &str) -> &Service {
        let i = self.remotes.iter().position(|r| r.card.agent_name == agent).expect("agent");
        self.handles[i].service()
    }
}

pub fn start_agents(scratch: &Path, names: &[&str]) -> Result<Agents, String> {
    let client = Client::new(Duration::from_secs(30));
    let mut agents = Agents {
        handles: Vec::new(),
        remotes: Vec::new(),
        reports: BTreeMap::new(),
    };
    for name in names {
        let r = agentize_into(&format!("{name}-repo"), &scratch.join(name)).map_err(err(name))?;
        let service = Arc::new(Service::open(r.workspace.clone(), Duration::from_secs(30)).map_err(err("service"))?);
        let handle = serve(service, "127.0.0.1", 0, 2).map_err(err("serve"))?;
        let card = client.fetch_card(&handle.url()).map_err(err("card"))?;
        ensure!(card == r.card, "{name}: served card differs from the emitted one");
        agents.remotes.push(RemoteAgent { endpoint: handle.url(), card });
        agents.handles.push(handle);
        agents.reports.insert(name.to_string(), r);
    }
    Ok(agents)
}

pub fn router_planner() -> ScriptedPlanner {
    ScriptedPlanner::load(&fixtures().join("router/router.plan.json")).expect("router plan")
}

/// Caption the PGM image produced by inverting `path`: the oracle for the
/// stylize-then-caption route.
pub fn inverted_caption(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap();
    let tokens: Vec<u64> = text
        .lines()
        .map(|l| l.split('#').next().unwrap())
        .flat_map(str::split_whitespace)
        .skip(1)
        .map(|t| t.parse().unwrap())
        .collect();
    let (w, h, max) = (tokens[0], tokens[1], tokens[2]);
    let sum: u64 = tokens[3..3 + (w * h) as usize].iter().map(|v| max - v).sum();
    let n = w * h;
    let mean = (2 * sum + n) / (2 * n);
    let tone = if 3 * mean < max {
        "dark"
    } else if 3 * mean < 2 * max {
        "mid-tone"
    } else {
        "bright"
    };
    format!("a {w}x{h} grayscale image, mostly {tone} (mean brightness {mean})")
}

pub fn router_two_step(scratch: &Path) -> Check {
    let agents = start_agents(scratch, &["resize", "stylize", "caption"])?;
    let client = Client::new(Duration::from_secs(30));
    let planner = router_planner();
    let task = "stylize then caption this image";
    let outcome = route(task, &agents.remotes, Some(&planner), &json!({}), &client, "two-step").map_err(err("route"))?;
    let skills: Vec<(&str, &str)> = outcome.plan.steps.iter().map(|s| (s.agent.as_str(), s.skill.as_str())).collect();
    ensure!(skills == [("stylize", "stylize-image"), ("caption", "caption-image")], "plan {skills:?}");
    ensure!(
        outcome.plan.steps[1].inputs.get("image-path") == Some(&Binding::Step { step: 0, field: "image-path".into() }),
        "caption is not bound to the stylize output"
    );
    ensure!(outcome.steps.len() == 2 && outcome.response.status == ResponseStatus::Completed, "{:?}", outcome.response);
    let expected = inverted_caption(&repo("stylize-repo").join("samples/square.pgm"));
    let caption = outcome.response.output.as_ref().and_then(|o| o["caption"].as_str()).unwrap_or_default();
    ensure!(caption == expected, "caption {caption:?}, expected {expected:?}");
    // The caption agent received the stylized file itself.
    let produced = fs::read(agents.reports["stylize"].workspace.root().join("out/square-stylized.pgm")).map_err(err("stylized"))?;
    let inbox = agents.reports["caption"].workspace.inbox();
    let received: Vec<Vec<u8>> = walk_files(&inbox).iter().map(|p| fs::read(p).unwrap()).collect();
    ensure!(received.contains(&produced), "caption inbox lacks the stylized image");
    let counts = (agents.service("resize").executions(), agents.service("stylize").executions(), agents.service("caption").executions());
    ensure!(counts == (0, 1, 1), "executions (resize, stylize, caption) = {counts:?}");
    Ok(format!("stylize -> caption bound by artifact; {caption:?}"))
}

pub fn router_short_circuit(scratch: &Path) -> Check {
    let agents = start_agents(scratch, &["resize", "stylize", "caption"])?;
    let stylize_ws = agents.reports["stylize"].workspace.root().to_path_buf();
    fs::write(stylize_ws.join("stylize.sh"), "#!/bin/sh\necho 'stylize: injected failure' >&2\nexit 1\n").map_err(err("break"))?;
    let client = Client::new(Duration::from_secs(30));
    let planner = router_planner();
    let res = route("resize, stylize, then caption this image", &agents.remotes, Some(&planner), &json!({}), &client, "short");
    match res {
        Err(RouteError::DownstreamFailure { step: 1, diagnostic }) => {
            ensure!(diagnostic.contains("injected failure"), "diagnostic {diagnostic:?}");
        }
        other => return Err(format!("expected a failure at step 1, got {other:?}")),
    }
    let counts = (agents.service("resize").executions(), agents.service("stylize").executions(), agents.service("caption").executions());
    ensure!(counts == (1, 1, 0), "executions (resize, stylize, caption) = {counts:?}");
    let caption_log = read_service_log(&agents.reports["caption"].workspace).unwrap_or_default();
    ensure!(caption_log.is_empty(), "caption agent saw {} records", caption_log.len());
    Ok("step 2 failed; step 3 never received a request".into())
}

fn walk_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    if let Ok(rd) = fs::read_dir(dir) {
        for e in rd.flatten() {
            let p = e.path();
            if p.is_dir() {
                out.extend(walk_files(&p));
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

// ---------------------------------------------------------------- sandbox

/// Every file under `root` (symlinks not followed) with its content, minus
/// the `skip` subtree.
pub fn snapshot(root: &Path, skip: &Path) -> BTreeMap<PathBuf, Option<Vec<u8>>> {
    let mut out = BTreeMap::new();
    fn go(dir: &Path, skip: &Path, out: &mut BTreeMap<PathBuf, Option<Vec<u8>>>) {
        let Ok(rd) = fs::read_dir(dir) else { return };
        for e in rd.flatten() {
            let p = e.path();
            if p.starts_with(skip) {
                continue;
            }
            let ft = e.file_type().unwrap();
            if ft.is_dir() {
                out.insert(p.clone(), None);
                go(&p, skip, out);
            } else if ft.is_symlink() {
                out.insert(p.clone(), Some(fs::read_link(&p).unwrap().to_string_lossy().as_bytes().to_vec()));
            } else {
                out.insert(p.clone(), Some(fs::read(&p).unwrap_or_default()));
            }
        }
    }
    go(root, skip, &mut out);
    out
}

/// Path arguments built from traversal pieces. `..` runs stay within four
/// levels so that even a broken sandbox could only write into the
/// monitored tree.
pub fn traversal_corpus(outer: &Path) -> Vec<String> {
    let pieces = ["..", ".", "x", "", "link-out", "link-in", "sub", "...", "%2e%2e", ".. ", "a b"];
    let mut out = BTreeSet::new();
    for a in pieces {
        for b in pieces {
            for c in ["..", "x", "f.txt", "link-out"] {
                out.insert(format!("{a}/{b}/{c}"));
            }
        }
    }
    for depth in 1..=4 {
        let up = vec![".."; depth].join("/");
        for tail in ["f.txt", "outside/f.txt", "a/b/c", "ws/../f", "secret"] {
            out.insert(format!("{up}/{tail}"));
            out.insert(format!("sub/{up}/{tail}"));
            out.insert(format!("./{up}/{tail}"));
        }
    }
    for tail in ["f.txt", "outside/f.txt", "outside/new/dir/f", "ws2/x"] {
        out.insert(format!("{}/{tail}", outer.display()));
        out.insert(format!("{}//{tail}", outer.display()));
        out.insert(format!("{}/a/b/c/ws/../../../../{tail}", outer.display()));
    }
    out.into_iter().filter(|s| !s.trim().is_empty()).collect()
}

fn lexical_inside(ws: &Path, raw: &str) -> bool {
    let mut parts: Vec<String> = if raw.starts_with('/') {
        Vec::new()
    } else {
        ws.iter().skip(1).map(|c| c.to_string_lossy().into_owned()).collect()
    };
    for seg in raw.split('/') {
        match seg {
            "" | "." => {}
            ".." => {
                if parts.pop().is_none() {
                    return false;
                }
            }
            s => parts.push(s.to_string()),
        }
    }
    let full: PathBuf = std::iter::once("/".to_string()).chain(parts).collect();
    full.starts_with(ws)
}

/// Traversal attempts through path resolution, the write-file tool and raw
/// scripts, plus timeouts. Nothing outside the workspace may change.
pub fn sandbox_fuzz(scratch: &Path) -> Check {
    let outer = fs::canonicalize(scratch).unwrap().join("fuzz");
    let ws_dir = outer.join("a/b/c/ws");
    fs::create_dir_all(ws_dir.join("sub")).unwrap();
    fs::create_dir_all(outer.join("outside")).unwrap();
    fs::write(outer.join("outside/secret"), "keep").unwrap();
    fs::write(outer.join("a/b/f.txt"), "keep").unwrap();
    std::os::unix::fs::symlink(outer.join("outside"), ws_dir.join("link-out")).unwrap();
    std::os::unix::fs::symlink(ws_dir.join("sub"), ws_dir.join("link-in")).unwrap();
    let ws = Workspace::open(&ws_dir).map_err(err("ws"))?;
    let policy = SandboxPolicy::new(ws.root(), Duration::from_secs(10), Network::Denied).map_err(err("policy"))?;
    let before = snapshot(&outer, ws.root());
    let registry = Registry::standard();
    let locks = PathLocks::default();
    let cx = ToolContext {
        ws: &ws,
        policy: &policy,
        node_id: "fuzz",
        locks: &locks,
        todo: None,
        env: None,
    };
    let corpus = traversal_corpus(&outer);
    let mut refused = 0;
    for raw in &corpus {
        let resolved = policy.resolve(raw);
        let goes_through_out_link = raw.split('/').any(|s| s == "link-out");
        if let Ok(p) = &resolved {
            ensure!(p.starts_with(ws.root()), "{raw:?} resolved to {}", p.display());
            ensure!(lexical_inside(ws.root(), raw), "{raw:?} accepted though it leaves the workspace");
            ensure!(!goes_through_out_link || !p.exists() || fs::canonicalize(p).unwrap().starts_with(ws.root()), "{raw:?} follows link-out");
        } else {
            refused += 1;
        }
        let op = Operation::new("write-file").arg("path", raw.as_str()).arg("content", "pwned");
        let result = registry.invoke(&op, &cx);
        if resolved.is_err() {
            ensure!(!result.is_success(), "write-file accepted {raw:?}");
        }
        let q = agentizer_core::a2a::shell_quote(raw);
        let script = format!("mkdir -p \"$(dirname {q})\" 2>/dev/null; echo pwned > {q}; echo pwned >> {q}");
        sandbox::run(&policy, &ExecRequest::new(script));
    }
    let after = snapshot(&outer, ws.root());
    let changed: Vec<String> = before
        .keys()
        .chain(after.keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|k| before.get(*k) != after.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    ensure!(changed.is_empty(), "writes outside the workspace: {changed:?}");

    let limits = [100u64, 150, 200, 250, 300, 400, 500, 600];
    let scripts = [
        "sleep 5",
        "while :; do :; done",
        "sleep 5 & sleep 5",
        "(sleep 5 &); sleep 5",
        "sh -c 'sleep 5'",
        "trap '' TERM; sleep 5",
    ];
    let mut timeouts = 0;
    let mut worst: f64 = 0.0;
    for (i, script) in scripts.iter().enumerate() {
        for (j, ms) in limits.iter().enumerate() {
            if (i + j) % 2 == 1 {
                continue;
            }
            let mut p = policy.clone();
            p.wall_clock_limit = Duration::from_millis(*ms);
            let out = sandbox::run(&p, &ExecRequest::new(*script));
            let ratio = out.elapsed.as_secs_f64() / (*ms as f64 / 1000.0);
            ensure!(out.timed_out && !out.success(), "{script:?} with {ms}ms did not time out");
            ensure!(ratio <= TIMEOUT_SLACK, "{script:?} with {ms}ms took {:?}", out.elapsed);
            worst = worst.max(ratio);
            timeouts += 1;
        }
    }
    let total = corpus.len() + timeouts;
    ensure!(total >= FUZZ_MIN, "only {total} fuzz cases");
    Ok(format!(
        "{} traversal cases ({refused} refused), {timeouts} timeouts (worst {:.2}x), 0 outside writes, confined: {}",
        corpus.len(),
        worst,
        sandbox::confinement_supported()
    ))
}

// ---------------------------------------------------------------- knowledge

pub const KNOWLEDGE_REPOS: [&str; 5] = ["hello-repo", "resize-repo", "stylize-repo", "caption-repo", "fail-repo"];

/// Canonical form of a graph without ids: entities by content, edges by the
/// content of their ends. Two graphs with equal canonical forms are
/// isomorphic under an id renaming.
pub fn canonical(g: &CodeKnowledgeGraph) -> (Vec<String>, Vec<String>) {
    let key = |id: &str| {
        let e = &g.entities[id];
        format!("{:?}|{}|{:?}|{}|{:?}", e.kind, e.name, e.location, e.summary, e.command)
    };
    let mut ents: Vec<String> = g.entities.keys().map(|id| key(id)).collect();
    ents.sort();
    let mut edges: Vec<String> = g.edges.iter().map(|e| format!("{:?}:{}->{}", e.relation, key(&e.from), key(&e.to))).collect();
    edges.sort();
    (ents, edges)
}

pub fn knowledge_integrity(scratch: &Path) -> Check {
    let mut summary = Vec::new();
    for name in KNOWLEDGE_REPOS {
        let g = build_ckg(&repo(name));
        g.check().map_err(|e| format!("{name}: {e}"))?;
        let caps = g.count(agentizer_core::knowledge::EntityKind::Capability);
        if name != "fail-repo" {
            ensure!(caps >= 1, "{name}: no capability found");
            let r = agentize_into(name, &scratch.join(format!("kn-{name}"))).map_err(err(name))?;
            let stored: CodeKnowledgeGraph = read_doc(&r.workspace.ckg()).map_err(err("ckg"))?;
            stored.check().map_err(|e| format!("{name} stored graph: {e}"))?;
            let kb: UsageKb = read_doc(&r.workspace.usage_kb()).map_err(err("kb"))?;
            kb.check(&stored).map_err(|e| format!("{name} kb: {e}"))?;
            ensure!(kb.covers(&stored), "{name}: a capability has no usage answer");
            ensure!(!kb.degraded, "{name}: usage knowledge is degraded");
            for s in &r.card.skills {
                s.check_backing(&stored).map_err(|e| format!("{name}: {e}"))?;
            }
        }
        summary.push(format!("{name}:{}e/{}c", g.entities.len(), caps));
    }
    Ok(summary.join(" "))
}

pub fn knowledge_rebuild(scratch: &Path) -> Check {
    let mut n = 0;
    for name in KNOWLEDGE_REPOS {
        let a = Workspace::prepare(&repo(name), Some(&scratch.join(format!("iso-a-{name}")))).map_err(err("copy"))?;
        let b = Workspace::prepare(&repo(name), Some(&scratch.join(format!("iso-b/deeper/{name}")))).map_err(err("copy"))?;
        let (ga, gb) = (build_ckg(a.root()), build_ckg(b.root()));
        ensure!(canonical(&ga) == canonical(&gb), "{name}: rebuilt graphs are not isomorphic");
        ensure!(ga == gb, "{name}: rebuilt graph ids differ");
        ensure!(build_ckg(a.root()) == ga, "{name}: rebuilding in place differs");
        n += 1;
    }
    Ok(format!("{n} repositories rebuild to isomorphic graphs"))
}
