//! The setup engine: drives trajectories of setup nodes over a workspace.
//!
//! Each trajectory runs in rounds. A round takes the ready nodes in queue
//! order, dispatches a resource-feasible subset concurrently, and applies the
//! results in dispatch order, so a run is reproducible for a fixed planner,
//! seed and clock regardless of the parallelism setting.

use std::collections::{BTreeSet, VecDeque};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use agentizer_core::graph::{dispatch_parallel, ResourceCaps, RunLimits};
use agentizer_core::node::REPO_GOAL_TEXT;
use agentizer_core::planner::{
    goals_from_drafts, FollowupDraft, Planner, PlannerError, PlannerRequest, PlannerResponse, RequestKind,
    UsageLedger,
};
use agentizer_core::todo::TodoList;
use agentizer_core::validation::{
    reflect_and_retry, union, CaseOutcome, CaseResult, GateReport, RetryDecision, ValidationCase, ValidationSet,
};
use agentizer_core::{
    Context, ContextItem, EnvState, Goal, GoalOrigin, IdGen, Node, NodeState, Operation, Trajectory,
    TrajectoryStatus,
};

use crate::planner::summary::{repo_summary, DEFAULT_CAP};
use crate::runlog::{Clock, Event, RunLog};
use crate::sandbox::{Network, SandboxPolicy};
use crate::tools::{todo::verify_item, PathLocks, Registry, ToolContext, ToolErrorKind, ToolResult, SPAWN_TRAJECTORY};
use crate::validation::{discover, evaluate_gate};
use crate::workspace::{read_doc, write_atomic, write_doc, Workspace};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub seed: u64,
    pub limits: RunLimits,
    pub caps: ResourceCaps,
    pub network: Network,
    /// Wall-clock limit for one sandboxed command.
    pub exec_timeout: Duration,
    /// Logical timestamps instead of wall time.
    pub logical_clock: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            limits: RunLimits::default(),
            caps: ResourceCaps::default(),
            network: Network::Denied,
            exec_timeout: Duration::from_secs(300),
            logical_clock: false,
        }
    }
}

/// Result of driving one trajectory to a verdict.
#[derive(Debug, Clone)]
pub struct Driven {
    /// The last trajectory of the chain (fresh retries replace it).
    pub trajectory: Trajectory,
    pub passed: bool,
    pub retries: u32,
    /// Ids of every trajectory in the chain, oldest first.
    pub chain: Vec<String>,
    pub report: GateReport,
}

#[derive(Debug, Clone)]
pub struct SetupOutcome {
    /// `None` when an already finished workspace was only re-verified.
    pub root: Option<Trajectory>,
    pub retries: u32,
    pub steps: u32,
    pub system_tests: Vec<ValidationCase>,
    pub gate: GateReport,
    pub reverified: bool,
}

struct Execution {
    operation: Option<Operation>,
    result: ToolResult,
    drafts: Vec<FollowupDraft>,
    children: Vec<String>,
}

impl Execution {
    fn failed(operation: Option<Operation>, kind: ToolErrorKind, why: impl Into<String>) -> Self {
        let mut result = ToolResult::failure(kind, why);
        result.retryable = true;
        Self {
            operation,
            result,
            drafts: Vec::new(),
            children: Vec::new(),
        }
    }
}

pub struct Engine {
    ws: Workspace,
    planner: Arc<dyn Planner>,
    registry: Registry,
    policy: SandboxPolicy,
    config: EngineConfig,
    ids: IdGen,
    log: RunLog,
    locks: PathLocks,
    todo: Mutex<TodoList>,
    env: Mutex<EnvState>,
    usage: Mutex<UsageLedger>,
    steps: AtomicU32,
    summary: String,
}

fn find_by_text(traj: &Trajectory, text: &str) -> Option<String> {
    let text = text.trim();
    traj.graph
        .nodes
        .values()
        .filter(|n| n.goal.text == text)
        .min_by_key(|n| n.ordinal)
        .map(|n| n.id.clone())
}

impl Engine {
    pub fn new(ws: Workspace, planner: Arc<dyn Planner>, config: EngineConfig) -> Result<Self> {
        let policy = SandboxPolicy::new(ws.root(), config.exec_timeout, config.network)
            .map_err(|e| Error::io(ws.root(), e))?;
        let clock = if config.logical_clock { Clock::logical() } else { Clock::Wall };
        let log = RunLog::open(&ws.run_log(), clock)?;
        let registry = Registry::standard();
        write_doc(&ws.tool_catalog(), &registry.catalog())?;
        let env = read_doc::<EnvState>(&ws.env_state())
            .unwrap_or_else(|_| EnvState::new(ws.root().to_string_lossy()));
        let todo = read_doc::<TodoList>(&ws.todo()).unwrap_or_default();
        let summary = repo_summary(ws.root(), DEFAULT_CAP);
        Ok(Self {
            ids: IdGen::new(config.seed),
            ws,
            planner,
            registry,
            policy,
            config,
            log,
            locks: PathLocks::default(),
            todo: Mutex::new(todo),
            env: Mutex::new(env),
            usage: Mutex::new(UsageLedger::default()),
            steps: AtomicU32::new(0),
            summary,
        })
    }

    pub fn workspace(&self) -> &Workspace {
        &self.ws
    }

    pub fn policy(&self) -> &SandboxPolicy {
        &self.policy
    }

    pub fn planner(&self) -> &Arc<dyn Planner> {
        &self.planner
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn ids(&self) -> IdGen {
        self.ids
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn repo_summary(&self) -> &str {
        &self.summary
    }

    /// Node executions started so far.
    pub fn steps(&self) -> u32 {
        self.steps.load(Ordering::SeqCst)
    }

    pub fn usage(&self) -> UsageLedger {
        self.usage.lock().expect("usage lock").clone()
    }

    pub fn env_state(&self) -> EnvState {
        self.env.lock().expect("env lock").clone()
    }

    pub fn todo_list(&self) -> TodoList {
        self.todo.lock().expect("todo lock").clone()
    }

    /// One planner call with usage attribution and reply validation.
    pub fn ask(
        &self,
        kind: RequestKind,
        goal: &Goal,
        context: &Context,
        attribution: &str,
    ) -> std::result::Result<PlannerResponse, PlannerError> {
        let request = PlannerRequest {
            kind,
            goal: goal.clone(),
            context: context.clone(),
            repo_summary: self.summary.clone(),
        };
        let resp = self.planner.respond(&request)?;
        self.usage.lock().expect("usage lock").record_response(&resp, attribution);
        resp.validate_for(kind).map_err(PlannerError::Malformed)?;
        Ok(resp)
    }

    fn take_step(&self) -> Result<()> {
        let max = self.config.limits.max_steps;
        self.steps
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |s| (s < max).then_some(s + 1))
            .map(|_| ())
            .map_err(|_| Error::StepBudgetExceeded { max_steps: max })
    }

    pub fn new_trajectory(&self, id: String, goal: Goal, context: Context, parent: Option<String>) -> Trajectory {
        let root = Node::new(self.ids.node(&id, 0), 0, goal.clone());
        let traj = Trajectory::new(id.clone(), goal.clone(), root.clone(), context, parent);
        self.log.append(Some(&id), &root.id, Event::Created, goal.text);
        traj
    }

    /// Validation cases for a fresh trajectory. The repository trajectory
    /// prefers the repo's own tests and examples and must end up with at
    /// least one case; others take whatever the planner proposes.
    pub fn init_validation_set(&self, traj: &mut Trajectory, root: bool) -> Result<()> {
        let mut cases = if root { discover(self.ws.root()) } else { Vec::new() };
        if cases.is_empty() {
            match self.ask(RequestKind::GenerateValidation, &traj.goal, &traj.context, &traj.id) {
                Ok(resp) => cases = resp.validation_cases,
                Err(e) if root => {
                    self.log.append(Some(&traj.id), &traj.graph.root, Event::Gate, e.to_string());
                }
                Err(_) => {}
            }
        }
        if root && cases.is_empty() {
            return Err(Error::SynthesisFailed {
                goal: traj.goal.text.clone(),
            });
        }
        traj.validation = ValidationSet::new(traj.id.clone(), cases);
        write_doc(&self.ws.trajectory_validation(&traj.id), &traj.validation)
    }

    pub fn persist(&self, traj: &Trajectory) -> Result<()> {
        write_doc(&self.ws.trajectory(&traj.id), traj)?;
        write_doc(&self.ws.trajectory_validation(&traj.id), &traj.validation)?;
        write_atomic(&self.ws.trajectory_dot(&traj.id), traj.graph.to_dot().as_bytes())?;
        self.persist_state()
    }

    pub fn persist_state(&self) -> Result<()> {
        write_doc(&self.ws.env_state(), &*self.env.lock().expect("env lock"))?;
        write_doc(&self.ws.todo(), &*self.todo.lock().expect("todo lock"))?;
        write_doc(&self.ws.usage(), &*self.usage.lock().expect("usage lock"))
    }

    fn input_exists(&self, p: &str) -> bool {
        self.policy.resolve(p).is_ok_and(|p| p.exists())
    }

    /// Run, gate, reflect and retry until the trajectory passes or the retry
    /// budget is spent. Failed nodes are resumed in place; a gate failure
    /// with every node done starts a fresh trajectory carrying the context.
    pub fn drive(&self, mut traj: Trajectory) -> Result<Driven> {
        let parent_key = traj.parent.clone().unwrap_or_else(|| "repo".into()) + "/" + &traj.goal.id;
        let mut chain = vec![traj.id.clone()];
        let mut retries = 0;
        loop {
            let failures = self.run_trajectory(&mut traj)?;
            let report = evaluate_gate(&traj.validation.cases, &self.policy, self.log.clock());
            let verdict = if report.passed { "passed" } else { "failed" };
            self.log.append(
                Some(&traj.id),
                &traj.graph.root,
                Event::Gate,
                format!("{verdict}: {} cases, {} failed nodes", report.per_case.len(), failures.len()),
            );
            traj.gate = Some(report.clone());
            if report.passed && traj.graph.all_done() {
                traj.status = TrajectoryStatus::Passed;
                self.persist(&traj)?;
                return Ok(Driven {
                    trajectory: traj,
                    passed: true,
                    retries,
                    chain,
                    report,
                });
            }
            let mut reflect = report.clone();
            for (node, why) in &failures {
                reflect.per_case.push(CaseResult {
                    case_id: format!("node:{node}"),
                    outcome: CaseOutcome::Fail,
                    transcript: why.clone(),
                });
            }
            reflect.passed = false;
            let failed: Vec<String> = traj
                .graph
                .nodes
                .values()
                .filter(|n| n.state == NodeState::Failed)
                .map(|n| n.id.clone())
                .collect();
            match reflect_and_retry(&mut traj, &reflect, &self.config.limits, retries).expect("report is failing") {
                RetryDecision::GiveUp { report } => {
                    traj.status = TrajectoryStatus::Failed;
                    self.persist(&traj)?;
                    return Ok(Driven {
                        trajectory: traj,
                        passed: false,
                        retries,
                        chain,
                        report,
                    });
                }
                RetryDecision::Retry => {
                    retries += 1;
                    if !failed.is_empty() {
                        for id in &failed {
                            self.log.append(Some(&traj.id), id, Event::Retried, format!("retry {retries}"));
                        }
                        self.persist(&traj)?;
                        continue;
                    }
                    traj.status = TrajectoryStatus::Failed;
                    self.persist(&traj)?;
                    let id = self.ids.trajectory(&parent_key, retries as u64);
                    self.log.append(
                        Some(&id),
                        &traj.graph.root,
                        Event::TrajectoryRetry,
                        format!("retry {retries} replaces {}", traj.id),
                    );
                    let mut fresh = self.new_trajectory(id, traj.goal.clone(), traj.context.clone(), traj.parent.clone());
                    fresh.validation = ValidationSet::new(fresh.id.clone(), traj.validation.cases.clone());
                    chain.push(fresh.id.clone());
                    traj = fresh;
                }
            }
        }
    }

    /// Execute rounds until no runnable node is left. Returns the failed
    /// nodes with their diagnostics.
    fn run_trajectory(&self, traj: &mut Trajectory) -> Result<Vec<(String, String)>> {
        let mut failures = Vec::new();
        let mut queue: VecDeque<String> = traj
            .graph
            .topological_order()
            .into_iter()
            .filter(|id| traj.graph.nodes[id].state == NodeState::Pending)
            .collect();
        loop {
            queue.retain(|id| {
                traj.graph.node(id).is_some_and(|n| n.state == NodeState::Pending) && !traj.graph.blocked(id)
            });
            if queue.is_empty() {
                return Ok(failures);
            }
            let ready_set: BTreeSet<String> = traj.graph.ready_set(&|p| self.input_exists(p)).into_iter().collect();
            let ready: Vec<String> = queue.iter().filter(|id| ready_set.contains(*id)).cloned().collect();
            if ready.is_empty() {
                return Err(Error::Livelock {
                    trajectory: traj.id.clone(),
                    queued: queue.len(),
                });
            }
            let selected = dispatch_parallel(&traj.graph, &ready, &self.config.caps);
            for id in ready.iter().filter(|id| !selected.contains(id)) {
                self.log.append(Some(&traj.id), id, Event::Deferred, "capacity");
            }
            let mut jobs = Vec::new();
            for id in &selected {
                self.take_step()?;
                let len = traj.context.len();
                let node = traj.graph.node_mut(id).expect("selected from graph");
                let t = node.transition_state(NodeState::Running).expect("ready nodes are pending");
                node.context = len;
                self.log.transition(&traj.id, &t, "");
                let cases: Vec<ValidationCase> = traj.validation.gating(&node.goal.text).cloned().collect();
                jobs.push((node.clone(), cases));
            }
            let snapshot = traj.context.clone();
            let traj_id = traj.id.clone();
            let results: Vec<Result<Execution>> = if jobs.len() == 1 {
                vec![self.execute(&traj_id, &jobs[0].0, &snapshot, &jobs[0].1)]
            } else {
                std::thread::scope(|s| {
                    let handles: Vec<_> = jobs
                        .iter()
                        .map(|(node, cases)| s.spawn(|| self.execute(&traj_id, node, &snapshot, cases)))
                        .collect();
                    handles.into_iter().map(|h| h.join().expect("node worker panicked")).collect()
                })
            };
            let mut created = Vec::new();
            let mut fatal = None;
            for ((node, _), res) in jobs.iter().zip(results) {
                let exec = match res {
                    Ok(e) => e,
                    Err(e) => {
                        let why = e.to_string();
                        fatal.get_or_insert(e);
                        Execution::failed(None, ToolErrorKind::ExecutionFailed, why)
                    }
                };
                if let Some(why) = exec.result.diagnostic.clone().filter(|_| !exec.result.is_success()) {
                    failures.push((node.id.clone(), why));
                }
                match self.apply(traj, &node.id, exec) {
                    Ok(ids) => created.extend(ids),
                    Err(e) => {
                        fatal.get_or_insert(e);
                    }
                }
            }
            if let Some(e) = fatal {
                self.persist(traj)?;
                return Err(e);
            }
            let (front, back): (Vec<String>, Vec<String>) = queue
                .into_iter()
                .filter(|id| !selected.contains(id))
                .partition(|id| ready_set.contains(id));
            queue = front.into_iter().chain(back).chain(created).collect();
            self.persist(traj)?;
        }
    }

    fn execute(&self, traj_id: &str, node: &Node, context: &Context, cases: &[ValidationCase]) -> Result<Execution> {
        if node.delegate {
            return self.execute_delegate(traj_id, node, context, cases);
        }
        let op = match self.ask(RequestKind::SynthesizeOperation, &node.goal, context, &node.id) {
            Ok(resp) => resp.operation.expect("validated"),
            Err(e) => return Ok(Execution::failed(None, ToolErrorKind::Precondition, e.to_string())),
        };
        let cx = ToolContext {
            ws: &self.ws,
            policy: &self.policy,
            node_id: &node.id,
            locks: &self.locks,
            todo: Some(&self.todo),
            env: Some(&self.env),
        };
        let mut result = self.registry.invoke(&op, &cx);
        if !result.is_success() {
            return Ok(Execution {
                operation: Some(op),
                result,
                drafts: Vec::new(),
                children: Vec::new(),
            });
        }
        let after = context.merge(&result.context_increment);
        let drafts = match self.ask(RequestKind::DeriveFollowups, &node.goal, &after, &node.id) {
            Ok(resp) => resp.unique_followups(),
            Err(e) => {
                let mut failed = Execution::failed(Some(op), ToolErrorKind::Precondition, e.to_string());
                failed.result.context_increment = result.context_increment;
                return Ok(failed);
            }
        };
        if drafts.is_empty() && !cases.is_empty() {
            let report = evaluate_gate(cases, &self.policy, self.log.clock());
            if !report.passed {
                let transcripts: Vec<&str> = report.failures().map(|f| f.transcript.as_str()).collect();
                let increment = std::mem::take(&mut result.context_increment);
                result = ToolResult::failure(
                    ToolErrorKind::ExecutionFailed,
                    format!("gate for {:?} failed:\n{}", node.goal.text, transcripts.join("\n")),
                );
                result.retryable = true;
                result.context_increment = increment;
            }
        }
        Ok(Execution {
            operation: Some(op),
            result,
            drafts,
            children: Vec::new(),
        })
    }

    /// Run the node's goal as a sub-trajectory on a snapshot of the context
    /// and hand back what it added.
    fn execute_delegate(&self, traj_id: &str, node: &Node, context: &Context, cases: &[ValidationCase]) -> Result<Execution> {
        let key = format!("{}#{}", node.id, node.attempts);
        let child_id = self.ids.trajectory(&key, 0);
        let mut child = self.new_trajectory(child_id, node.goal.clone(), context.clone(), Some(traj_id.to_string()));
        self.init_validation_set(&mut child, false)?;
        let driven = self.drive(child)?;
        let op = Operation::new(SPAWN_TRAJECTORY)
            .arg("goal", node.goal.text.as_str())
            .arg("trajectory", driven.trajectory.id.as_str())
            .because("goal has siblings; run it in its own trajectory");
        let mut result = if driven.passed {
            ToolResult::success()
        } else {
            let failures: Vec<String> = driven.report.failures().map(|f| f.transcript.clone()).collect();
            ToolResult::failure(
                ToolErrorKind::ExecutionFailed,
                format!("sub-trajectory {} failed:\n{}", driven.trajectory.id, failures.join("\n")),
            )
        };
        result.retryable = !driven.passed;
        result.context_increment = driven.trajectory.context.since(context.len()).to_vec();
        if driven.passed && !cases.is_empty() {
            let report = evaluate_gate(cases, &self.policy, self.log.clock());
            if !report.passed {
                let increment = std::mem::take(&mut result.context_increment);
                let transcripts: Vec<&str> = report.failures().map(|f| f.transcript.as_str()).collect();
                result = ToolResult::failure(ToolErrorKind::ExecutionFailed, transcripts.join("\n"));
                result.context_increment = increment;
            }
        }
        Ok(Execution {
            operation: Some(op),
            result,
            drafts: Vec::new(),
            children: driven.chain,
        })
    }

    /// Merge one execution into the trajectory. Returns the created nodes.
    fn apply(&self, traj: &mut Trajectory, node_id: &str, exec: Execution) -> Result<Vec<String>> {
        let Execution {
            operation,
            mut result,
            drafts,
            children,
        } = exec;
        let increment: Vec<ContextItem> = result
            .context_increment
            .iter()
            .cloned()
            .map(|i| i.from_node(node_id))
            .collect();
        traj.context.extend(increment);
        traj.children.extend(children);
        let goal = traj.graph.nodes[node_id].goal.clone();
        if result.is_success() {
            self.env.lock().expect("env lock").complete_goal(goal.id.clone());
            let item = self.todo.lock().expect("todo lock").item(&goal.id).cloned();
            if let Some(item) = item {
                let cx = ToolContext {
                    ws: &self.ws,
                    policy: &self.policy,
                    node_id,
                    locks: &self.locks,
                    todo: Some(&self.todo),
                    env: Some(&self.env),
                };
                match verify_item(&item, &cx) {
                    Ok(()) => {
                        let mut todo = self.todo.lock().expect("todo lock");
                        todo.set_status(&goal.id, agentizer_core::todo::TodoStatus::Done);
                    }
                    Err(why) => {
                        result = ToolResult::failure(ToolErrorKind::ExecutionFailed, format!("todo check failed: {why}"));
                    }
                }
            }
        }
        let node = traj.graph.node_mut(node_id).expect("applied node exists");
        node.operation = operation;
        if !result.is_success() {
            let t = node.transition_state(NodeState::Failed).expect("running -> failed");
            self.log.transition(&traj.id, &t, result.diagnostic.clone().unwrap_or_default());
            return Ok(Vec::new());
        }
        self.env.lock().expect("env lock").record_artifacts(result.descriptors.iter().cloned());
        let goals = goals_from_drafts(&self.ids, &goal, &drafts);
        node.followups = goals.clone();
        let tool = node.operation.as_ref().map(|o| o.tool.clone()).unwrap_or_default();
        let t = node.transition_state(NodeState::Done).expect("running -> done");
        self.log.transition(&traj.id, &t, tool);
        if goals.is_empty() {
            return Ok(Vec::new());
        }
        self.todo.lock().expect("todo lock").revise(&goal, &goals, &drafts);
        // One follow-up continues inline; several fan out to sub-trajectories.
        let delegate = goals.len() >= 2;
        let mut created = Vec::new();
        for (g, draft) in goals.iter().zip(&drafts) {
            if let Some(existing) = find_by_text(traj, &g.text) {
                if traj.graph.nodes[&existing].state == NodeState::Pending && traj.graph.add_edge(node_id, &existing).is_ok() {
                    self.log.append(Some(&traj.id), &existing, Event::Created, format!("also after {node_id}"));
                }
                continue;
            }
            let ordinal = traj.graph.next_ordinal();
            let id = self.ids.node(&traj.id, ordinal);
            let mut n = Node::new(id.clone(), ordinal, g.clone());
            n.delegate = delegate;
            n.resource_demands = draft.demands.clone();
            self.config.caps.check_demand(&n)?;
            traj.graph.add_node(n)?;
            traj.graph.add_edge(node_id, &id)?;
            self.log.append(Some(&traj.id), &id, Event::Created, g.text.clone());
            created.push(id);
        }
        for (g, draft) in goals.iter().zip(&drafts) {
            let Some(target) = find_by_text(traj, &g.text) else { continue };
            for before in &draft.after {
                match find_by_text(traj, before) {
                    Some(src) if src != target => traj.graph.add_edge(&src, &target)?,
                    Some(_) => {}
                    None => self.log.append(
                        Some(&traj.id),
                        &target,
                        Event::Created,
                        format!("ignoring unknown predecessor {before:?}"),
                    ),
                }
            }
        }
        Ok(created)
    }

    /// Set up the repository: drive the repository trajectory, then record
    /// the system tests. A workspace that already finished is only
    /// re-verified.
    pub fn setup(&self) -> Result<SetupOutcome> {
        if self.env_state().is_finished() {
            if let Ok(cases) = read_doc::<Vec<ValidationCase>>(&self.ws.system_tests()) {
                let gate = evaluate_gate(&cases, &self.policy, self.log.clock());
                self.log.append(None, "repo", Event::Gate, format!("re-verify passed={}", gate.passed));
                if gate.passed {
                    return Ok(SetupOutcome {
                        root: None,
                        retries: 0,
                        steps: 0,
                        system_tests: cases,
                        gate,
                        reverified: true,
                    });
                }
            }
            let mut env = self.env.lock().expect("env lock");
            env.status = agentizer_core::EnvStatus::InProgress;
        }
        let goal = Goal::new(self.ids.goal("repo", 0), REPO_GOAL_TEXT, GoalOrigin::RepoRoot).expect("non-empty goal");
        let id = self.ids.trajectory("repo", 0);
        let mut traj = self.new_trajectory(id, goal, Context::new(), None);
        self.init_validation_set(&mut traj, true)?;
        let driven = self.drive(traj)?;
        if !driven.passed {
            self.env.lock().expect("env lock").fail();
            self.persist_state()?;
            return Err(Error::RetriesExhausted {
                retries: driven.retries,
                report: Box::new(driven.report),
            });
        }
        let discovered = ValidationSet::new("discovered", discover(self.ws.root()));
        let system_tests = union([&discovered, &driven.trajectory.validation]);
        write_doc(&self.ws.system_tests(), &system_tests)?;
        self.persist_state()?;
        Ok(SetupOutcome {
            root: Some(driven.trajectory),
            retries: driven.retries,
            steps: self.steps(),
            system_tests,
            gate: driven.report,
            reverified: false,
        })
    }

    /// Mark the environment finished; only legal after the repository gate
    /// passed.
    pub fn finish(&self, gate_passed: bool) -> Result<()> {
        self.env
            .lock()
            .expect("env lock")
            .finish(gate_passed)
            .map_err(|e| Error::Other(e.to_string()))?;
        self.persist_state()
    }
}
