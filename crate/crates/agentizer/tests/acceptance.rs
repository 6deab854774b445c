//! One PASS/FAIL line per acceptance criterion. Tolerances live in
//! `common`: RANDOM_CASES, FUZZ_MIN, TIMEOUT_SLACK, E2E_BUDGET, MAX_RETRIES
//! and MAX_STEPS.

mod common;

use common::*;

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

#[test]
fn acceptance() {
    let scratch = tempfile::tempdir().unwrap();
    let dir = |name: &str| {
        let d = scratch.path().join(name);
        std::fs::create_dir_all(&d).unwrap();
        d
    };
    let criteria: Vec<Criterion> = vec![
        ("metrics: 40/54, 28/54, 3/54, 1/54 as percentages", Box::new(metric_arithmetic)),
        ("e2e: agentize three fixture repos offline within 60s", Box::new(|| e2e_fixtures(&dir("e2e")))),
        ("e2e: bench suite ECR 100.00 TPR 100.00 tokens (0, 0)", Box::new(|| bench_suite(&dir("bench")))),
        ("scheduler: acyclicity kept, cycle attempts rejected", Box::new(scheduler_acyclicity)),
        ("scheduler: execution order respects every edge", Box::new(scheduler_order)),
        ("scheduler: engine run logs respect every edge", Box::new(|| engine_order_audit(&dir("audit")))),
        ("scheduler: parallel (N=4) equals serial", Box::new(|| parallel_equals_serial(&dir("dag")))),
        ("budget: stop after 10 trajectory retries, <= 200 executions", Box::new(|| budget(&dir("budget")))),
        ("gate: report equals the conjunction of cases", Box::new(|| gate_conjunction(&dir("gate")))),
        ("gate: finished only behind a passing repo gate", Box::new(|| finished_requires_gate(&dir("finished")))),
        ("a2a: card/request/response round-trips", Box::new(a2a_round_trips)),
        ("a2a: invalid requests rejected with zero executions", Box::new(|| a2a_rejection(&dir("reject")))),
        ("a2a: router runs the 2-step plan with binding", Box::new(|| router_two_step(&dir("router")))),
        ("a2a: middle-step failure short-circuits", Box::new(|| router_short_circuit(&dir("short")))),
        ("sandbox: traversal/timeout fuzz, no outside writes", Box::new(|| sandbox_fuzz(&dir("fuzz")))),
        ("knowledge: integrity and capability coverage", Box::new(|| knowledge_integrity(&dir("kn")))),
        ("knowledge: rebuild is isomorphic", Box::new(|| knowledge_rebuild(&dir("iso")))),
    ];
    let mut failed = Vec::new();
    for (name, check) in &criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}  [{detail}]"),
            Err(why) => {
                println!("FAIL  {name}  [{why}]");
                failed.push(*name);
            }
        }
    }
    println!("{} of {} criteria pass", criteria.len() - failed.len(), criteria.len());
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
