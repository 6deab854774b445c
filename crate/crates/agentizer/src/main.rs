use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use agentizer::a2a::router::{route, RemoteAgent};
use agentizer::a2a::{serve, Client, Service, DEFAULT_ENDPOINT};
use agentizer::bench::{render_table, run_suite, BenchOptions};
use agentizer::engine::EngineConfig;
use agentizer::pipeline::{agentize, AgentizeOptions};
use agentizer::planner::{self, PlannerKind, ScriptedPlanner};
use agentizer::sandbox::Network;
use agentizer::workspace::{read_doc, to_document, write_atomic, Workspace};
use agentizer::{Error, Result};
use agentizer_core::graph::{ResourceCaps, RunLimits};
use agentizer_core::knowledge::UsageKb;
use agentizer_core::planner::Planner;
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "agentizer", version, about = "Turn a code repository into a servable repository agent")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Planner backend.
    #[arg(long, global = true, value_enum, default_value = "scripted")]
    planner: PlannerKind,
    /// Plan file for the scripted planner (default: <repo>/agentizer.plan.json).
    #[arg(long, global = true)]
    plan_file: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 200)]
    max_steps: u32,
    #[arg(long, global = true, default_value_t = 10)]
    max_retries: u32,
    /// Work on a copy of the repository in this directory.
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Setup nodes run concurrently per round.
    #[arg(long, global = true, default_value_t = 1)]
    parallelism: usize,
    /// Per-command wall-clock limit in seconds.
    #[arg(long, global = true, default_value_t = 300)]
    exec_timeout: u64,
    /// Let sandboxed commands use the network.
    #[arg(long, global = true)]
    allow_network: bool,
    /// Write a machine-readable report here.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Set up a repository and emit its agent card.
    Agentize {
        repo: PathBuf,
        /// Endpoint advertised in the agent card.
        #[arg(long, default_value = DEFAULT_ENDPOINT)]
        endpoint: String,
    },
    /// Serve a finished workspace over HTTP.
    Serve {
        workspace: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 4)]
        workers: usize,
    },
    /// Answer a usage question from a workspace's knowledge base.
    Ask { workspace: PathBuf, query: String },
    /// Plan and run a task across several agents.
    Route {
        /// Agent endpoints, comma separated or repeated.
        #[arg(long, value_delimiter = ',', required = true)]
        cards: Vec<String>,
        task: String,
        /// JSON object with inputs for the first step.
        #[arg(long, default_value = "{}")]
        input: String,
    },
    /// Run a benchmark suite.
    Bench { suite: PathBuf },
}

impl Cli {
    fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            seed: self.seed,
            limits: RunLimits {
                max_steps: self.max_steps,
                max_retries: self.max_retries,
            },
            caps: ResourceCaps {
                default_parallelism: self.parallelism.max(1),
                ..ResourceCaps::default()
            },
            network: if self.allow_network { Network::Allowed } else { Network::Denied },
            exec_timeout: Duration::from_secs(self.exec_timeout.max(1)),
            logical_clock: false,
        }
    }

    fn write_report(&self, doc: &str) -> Result<()> {
        match &self.report {
            Some(p) => write_atomic(p, doc.as_bytes()),
            None => Ok(()),
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Agentize { repo, endpoint } => {
            if !repo.is_dir() {
                return Err(Error::Usage(format!("{} is not a directory", repo.display())));
            }
            let opts = AgentizeOptions {
                planner: cli.planner,
                plan_file: cli.plan_file.clone(),
                workspace: cli.workspace.clone(),
                engine: cli.engine_config(),
                endpoint: endpoint.clone(),
            };
            let r = agentize(repo, &opts)?;
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            if r.setup.reverified {
                println!("workspace already finished; system tests re-verified");
            }
            println!(
                "agentized {} in {} node executions, {} retries; {} skills; card at {}",
                r.card.repo,
                r.steps,
                r.setup.retries,
                r.card.skills.len(),
                r.workspace.agent_card().display()
            );
            let summary = serde_json::json!({
                "workspace": r.workspace.root(),
                "reverified": r.setup.reverified,
                "retries": r.setup.retries,
                "node-executions": r.steps,
                "gate": r.gate,
                "skills": r.card.skills.iter().map(|s| &s.id).collect::<Vec<_>>(),
                "usage": r.usage,
                "warnings": r.warnings,
            });
            cli.write_report(&to_document(&summary))
        }
        Command::Serve {
            workspace,
            port,
            host,
            workers,
        } => {
            let ws = Workspace::open(workspace)?;
            let service = Arc::new(Service::open(ws, Duration::from_secs(cli.exec_timeout.max(1)))?);
            let handle = serve(service, host, *port, *workers)?;
            let advertised = handle.service().card().endpoint.clone();
            println!("serving {} at {} (card advertises {advertised})", handle.service().card().agent_name, handle.url());
            handle.wait();
            Ok(())
        }
        Command::Ask { workspace, query } => {
            let ws = Workspace::open(workspace)?;
            let kb: UsageKb = read_doc(&ws.usage_kb())
                .map_err(|_| Error::Precondition("workspace has no usage knowledge base; run agentize first".into()))?;
            match kb.answer_query(query) {
                Some(t) => {
                    println!("{}", t.answer);
                    if let Some(cmd) = &t.invocation {
                        println!("\ncommand: {cmd}");
                    }
                    cli.write_report(&to_document(t))
                }
                None => Err(Error::Other(format!("no answer for {query:?} in the knowledge base"))),
            }
        }
        Command::Route { cards, task, input } => {
            let input: serde_json::Value =
                serde_json::from_str(input).map_err(|e| Error::Usage(format!("--input is not JSON: {e}")))?;
            let client = Client::new(Duration::from_secs(cli.exec_timeout.max(1)));
            let mut agents = Vec::new();
            for url in cards {
                agents.push(RemoteAgent {
                    endpoint: url.clone(),
                    card: client.fetch_card(url)?,
                });
            }
            let planner: Option<Arc<dyn Planner>> = match (cli.planner, &cli.plan_file) {
                (PlannerKind::Scripted, Some(p)) => Some(Arc::new(ScriptedPlanner::load(p)?)),
                (PlannerKind::Scripted, None) => None,
                (PlannerKind::Llm, _) => Some(planner::build(PlannerKind::Llm, std::path::Path::new("."), None)?),
            };
            let run_id = format!(
                "route-{}-{}",
                std::process::id(),
                std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_millis())
                    .unwrap_or_default()
            );
            let outcome = route(task, &agents, planner.as_deref(), &input, &client, &run_id)
                .map_err(|e| Error::Other(format!("route failed: {e}")))?;
            for (i, s) in outcome.plan.steps.iter().enumerate() {
                println!("step {i}: {}/{}", s.agent, s.skill);
            }
            println!("{}", to_document(&outcome.response));
            cli.write_report(&to_document(&serde_json::json!({
                "plan": outcome.plan,
                "steps": outcome.steps,
                "response": outcome.response,
            })))
        }
        Command::Bench { suite } => {
            let opts = BenchOptions {
                agentize: AgentizeOptions {
                    planner: cli.planner,
                    plan_file: cli.plan_file.clone(),
                    workspace: None,
                    engine: cli.engine_config(),
                    endpoint: DEFAULT_ENDPOINT.into(),
                },
                workdir: cli.workspace.clone(),
            };
            let run = run_suite(suite, &opts)?;
            print!("{}", render_table(&run.report));
            cli.write_report(&to_document(&run.report))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
