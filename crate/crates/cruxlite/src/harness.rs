//! Test discovery, dependency-ordered execution, and reporting: the
//! runner behind the `cruxlite verify` command.
//!
//! Discovery turns a program into a [`RunPlan`]: every `#[test]` and
//! `#[spec_for(..)]` function becomes a job, ordered so that each spec
//! precedes every job that enables it (directly or through any function
//! it calls). Running the plan verifies specs first — serially, so each
//! can use the summaries of the specs before it — then executes tests,
//! optionally on several worker threads. The resulting [`TestReport`]
//! renders as human-readable text or as a stable JSON document; both
//! derive from the same data, and identical inputs with an identical
//! configuration produce byte-identical JSON.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde_json::{json, Value};

use crate::compose::{self, SummaryMap};
use crate::exec::{self, RunStats, TestOutcome, Verdict};
use crate::ir::{Program, Rvalue, StmtKind};

// ---- Plans ------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum JobKind {
    /// A `#[spec_for(..)]` function: verified, then turned into a summary.
    Spec,
    /// A `#[test]` function: executed and discharged.
    Test,
}

impl JobKind {
    pub fn name(self) -> &'static str {
        match self {
            JobKind::Spec => "spec",
            JobKind::Test => "test",
        }
    }
}

/// One unit of work in a run.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Job {
    /// Name of the test or spec function.
    pub function: String,
    pub kind: JobKind,
    /// Spec functions this job enables anywhere in its static call
    /// closure, in first-encounter order. Their summaries must exist
    /// before the job runs.
    pub requires: Vec<String>,
}

/// An ordered job list: every job's required specs appear earlier.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct RunPlan {
    pub jobs: Vec<Job>,
}

/// Build the plan for a program: collect test and spec jobs, resolve
/// which specs each enables, and order them so required specs come
/// first. Jobs that do not constrain each other keep their source order.
///
/// Errors: an `enable_spec` naming a function that does not exist or is
/// not a spec, and cyclic enablement among specs.
pub fn discover(prog: &Program) -> Result<RunPlan, String> {
    let mut jobs: Vec<Job> = Vec::new();
    for f in &prog.functions {
        let kind = if f.spec_target().is_some() {
            JobKind::Spec
        } else if f.is_test() {
            JobKind::Test
        } else {
            continue;
        };
        jobs.push(Job {
            function: f.name.clone(),
            kind,
            requires: enabled_specs(prog, &f.name)?,
        });
    }
    Ok(RunPlan {
        jobs: order_jobs(jobs)?,
    })
}

/// Spec names enabled by `enable_spec` statements anywhere in the static
/// call closure of `root`, in first-encounter order (breadth-first over
/// calls, statement order within a function).
fn enabled_specs(prog: &Program, root: &str) -> Result<Vec<String>, String> {
    let mut out: Vec<String> = Vec::new();
    let mut seen_specs: BTreeSet<&str> = BTreeSet::new();
    let mut visited: BTreeSet<&str> = BTreeSet::new();
    let mut queue: VecDeque<&str> = VecDeque::new();
    queue.push_back(root);
    while let Some(name) = queue.pop_front() {
        if !visited.insert(name) {
            continue;
        }
        // Calls to unknown functions are a sort-check diagnostic, not a
        // discovery error; they simply contribute nothing here.
        let Some(f) = prog.func(name) else { continue };
        for b in &f.blocks {
            for s in &b.stmts {
                match &s.kind {
                    StmtKind::EnableSpec(spec) => match prog.func(spec) {
                        None => {
                            return Err(format!(
                                "enable_spec {spec} in `{}`: no such function",
                                f.name
                            ))
                        }
                        Some(sf) if sf.spec_target().is_none() => {
                            return Err(format!(
                                "enable_spec {spec} in `{}`: `{spec}` is not a spec",
                                f.name
                            ))
                        }
                        Some(_) => {
                            if seen_specs.insert(spec) {
                                out.push(spec.clone());
                            }
                        }
                    },
                    StmtKind::Assign(_, Rvalue::Call(callee, _)) => queue.push_back(callee),
                    _ => {}
                }
            }
        }
    }
    Ok(out)
}

/// Order jobs so that every required spec precedes its dependents, while
/// jobs without a constraint between them keep source order: walk jobs
/// in source order and emit each one's unmet requirements first.
fn order_jobs(jobs: Vec<Job>) -> Result<Vec<Job>, String> {
    let index: BTreeMap<&str, usize> = jobs
        .iter()
        .enumerate()
        .map(|(i, j)| (j.function.as_str(), i))
        .collect();
    let mut state = vec![VisitState::Fresh; jobs.len()];
    let mut order: Vec<usize> = Vec::with_capacity(jobs.len());
    let mut path: Vec<usize> = Vec::new();
    for i in 0..jobs.len() {
        visit(i, &jobs, &index, &mut state, &mut order, &mut path)?;
    }
    Ok(order.into_iter().map(|i| jobs[i].clone()).collect())
}

#[derive(Clone, Copy, PartialEq)]
enum VisitState {
    Fresh,
    InProgress,
    Done,
}

fn visit(
    i: usize,
    jobs: &[Job],
    index: &BTreeMap<&str, usize>,
    state: &mut Vec<VisitState>,
    order: &mut Vec<usize>,
    path: &mut Vec<usize>,
) -> Result<(), String> {
    match state[i] {
        VisitState::Done => return Ok(()),
        VisitState::InProgress => {
            let start = path.iter().position(|&p| p == i).expect("on the path");
            let names: Vec<&str> = path[start..]
                .iter()
                .chain([&i])
                .map(|&p| jobs[p].function.as_str())
                .collect();
            return Err(format!("cyclic spec enablement: {}", names.join(" -> ")));
        }
        VisitState::Fresh => {}
    }
    state[i] = VisitState::InProgress;
    path.push(i);
    for r in &jobs[i].requires {
        let &k = index
            .get(r.as_str())
            .expect("every enabled spec was validated to be a spec job");
        visit(k, jobs, index, state, order, path)?;
    }
    path.pop();
    state[i] = VisitState::Done;
    order.push(i);
    Ok(())
}

// ---- Running ----------------------------------------------------------------

/// Configuration for one `run` call.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub exec: exec::Config,
    /// Worker threads for test jobs. Specs always run serially, in plan
    /// order, because later ones may need earlier summaries. `0` and `1`
    /// both mean serial; results are identical at any thread count.
    pub jobs: usize,
    /// Count `Vacuous` verdicts as passing for the exit code. The
    /// verdict itself is reported unchanged either way.
    pub allow_vacuous: bool,
    /// Extract summaries without verifying the specs. Spec jobs report
    /// `Trusted` and prove nothing.
    pub trust_specs: bool,
    /// When set, run only the named jobs plus the specs they need
    /// (transitively). Names not in the plan are ignored here; the CLI
    /// rejects them before building a config.
    pub filter: Option<BTreeSet<String>>,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            exec: exec::Config::default(),
            jobs: 1,
            allow_vacuous: false,
            trust_specs: false,
            filter: None,
        }
    }
}

/// How one job ended.
#[derive(Clone, PartialEq, Debug)]
pub enum JobStatus {
    /// The job ran to a verdict.
    Finished(TestOutcome),
    /// A summary this job needs was never produced.
    Skipped { reason: String },
    /// The spec's summary was extracted without verification
    /// (`trust_specs`); nothing was proved.
    Trusted,
}

#[derive(Clone, PartialEq, Debug)]
pub struct JobResult {
    pub job: Job,
    pub status: JobStatus,
}

/// Everything a run produced, in plan order.
#[derive(Clone, PartialEq, Debug)]
pub struct TestReport {
    pub results: Vec<JobResult>,
    /// Process exit code: 0 when every job proved (vacuous counts as
    /// passing only when configured), 1 for refuted or vacuous verdicts,
    /// 2 for engine errors. 3 is reserved for usage and parse errors,
    /// which never produce a report.
    pub exit_code: i32,
}

/// Execute a plan: verify specs in order, collecting summaries, then run
/// tests (in parallel when `config.jobs > 1`). A spec that fails — or is
/// itself skipped — blocks every job that requires it, which reports
/// `Skipped` with the cause. Results always come back in plan order, and
/// parallel runs produce exactly the serial report.
pub fn run(prog: &Program, plan: &RunPlan, config: &RunConfig) -> TestReport {
    let selected = select_jobs(plan, config.filter.as_ref());
    let mut statuses: Vec<Option<JobStatus>> = vec![None; selected.len()];

    // Phase 1: specs, serial. `spec_state` records why a spec produced
    // no summary, phrased for its dependents' skip reasons.
    let mut summaries = SummaryMap::new();
    let mut spec_state: BTreeMap<String, String> = BTreeMap::new();
    for (i, job) in selected.iter().enumerate() {
        if job.kind != JobKind::Spec {
            continue;
        }
        let name = job.function.as_str();
        let status = if let Some(reason) = unmet(&job.requires, &summaries, &spec_state) {
            spec_state.insert(name.to_string(), "was skipped".to_string());
            JobStatus::Skipped { reason }
        } else if config.trust_specs {
            match compose::extract_unverified(prog, name, &summaries, &config.exec) {
                Ok(summary) => {
                    summaries.insert(name.to_string(), summary);
                    JobStatus::Trusted
                }
                Err(e) => {
                    spec_state.insert(name.to_string(), format!("failed extraction: {e}"));
                    JobStatus::Finished(engine_error_outcome(name, e))
                }
            }
        } else {
            match compose::verify_spec(prog, name, &summaries, &config.exec) {
                Ok(out) => {
                    match out.summary {
                        Some(summary) => {
                            summaries.insert(name.to_string(), summary);
                        }
                        None => {
                            spec_state
                                .insert(name.to_string(), verdict_phrase(&out.outcome.verdict));
                        }
                    }
                    JobStatus::Finished(out.outcome)
                }
                Err(e) => {
                    spec_state.insert(name.to_string(), format!("failed: {e}"));
                    JobStatus::Finished(engine_error_outcome(name, e))
                }
            }
        };
        statuses[i] = Some(status);
    }

    // Phase 2: tests, parallel over a shared cursor. Slot `k` of the
    // scratch vector belongs to the k-th test regardless of which worker
    // claims it, so assembly order never depends on scheduling.
    let test_idx: Vec<usize> = selected
        .iter()
        .enumerate()
        .filter(|(_, j)| j.kind == JobKind::Test)
        .map(|(i, _)| i)
        .collect();
    let workers = config.jobs.max(1).min(test_idx.len().max(1));
    if workers <= 1 {
        for &i in &test_idx {
            statuses[i] = Some(run_test_job(
                prog,
                selected[i],
                &summaries,
                &spec_state,
                config,
            ));
        }
    } else {
        let slots: Vec<Mutex<Option<JobStatus>>> =
            test_idx.iter().map(|_| Mutex::new(None)).collect();
        let cursor = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let k = cursor.fetch_add(1, Ordering::Relaxed);
                    if k >= test_idx.len() {
                        break;
                    }
                    let status =
                        run_test_job(prog, selected[test_idx[k]], &summaries, &spec_state, config);
                    *slots[k].lock().expect("no poisoned slot") = Some(status);
                });
            }
        });
        for (k, &i) in test_idx.iter().enumerate() {
            statuses[i] = slots[k].lock().expect("no poisoned slot").take();
        }
    }

    let results: Vec<JobResult> = selected
        .into_iter()
        .zip(statuses)
        .map(|(job, status)| JobResult {
            job: job.clone(),
            status: status.expect("every selected job ran"),
        })
        .collect();
    let exit_code = exit_code_of(&results, config.allow_vacuous);
    TestReport { results, exit_code }
}

/// The jobs to run under a filter: the named ones plus every spec they
/// transitively require, in plan order.
fn select_jobs<'p>(plan: &'p RunPlan, filter: Option<&BTreeSet<String>>) -> Vec<&'p Job> {
    let Some(names) = filter else {
        return plan.jobs.iter().collect();
    };
    let by_name: BTreeMap<&str, &Job> = plan
        .jobs
        .iter()
        .map(|j| (j.function.as_str(), j))
        .collect();
    let mut needed: BTreeSet<&str> = BTreeSet::new();
    let mut stack: Vec<&Job> = Vec::new();
    for j in &plan.jobs {
        if names.contains(&j.function) {
            needed.insert(j.function.as_str());
            stack.push(j);
        }
    }
    while let Some(j) = stack.pop() {
        for r in &j.requires {
            if needed.insert(r.as_str()) {
                stack.push(by_name[r.as_str()]);
            }
        }
    }
    plan.jobs
        .iter()
        .filter(|j| needed.contains(j.function.as_str()))
        .collect()
}

fn run_test_job(
    prog: &Program,
    job: &Job,
    summaries: &SummaryMap,
    spec_state: &BTreeMap<String, String>,
    config: &RunConfig,
) -> JobStatus {
    if let Some(reason) = unmet(&job.requires, summaries, spec_state) {
        return JobStatus::Skipped { reason };
    }
    JobStatus::Finished(exec::run_test(
        prog,
        &job.function,
        summaries,
        &config.exec,
    ))
}

fn unmet(
    requires: &[String],
    summaries: &SummaryMap,
    spec_state: &BTreeMap<String, String>,
) -> Option<String> {
    for r in requires {
        if !summaries.contains_key(r) {
            let why = spec_state
                .get(r)
                .cloned()
                .unwrap_or_else(|| "produced no summary".to_string());
            return Some(format!("required spec `{r}` {why}"));
        }
    }
    None
}

fn verdict_phrase(v: &Verdict) -> String {
    match v {
        Verdict::Proven => unreachable!("proved specs always yield a summary"),
        Verdict::Refuted { .. } => "was refuted".to_string(),
        Verdict::Vacuous => "was vacuous".to_string(),
        Verdict::EngineError(_) => "hit an engine error".to_string(),
    }
}

fn engine_error_outcome(name: &str, detail: String) -> TestOutcome {
    TestOutcome {
        test: name.to_string(),
        verdict: Verdict::EngineError(detail),
        stats: RunStats::default(),
        obligations: Vec::new(),
        trace: Vec::new(),
    }
}

fn exit_code_of(results: &[JobResult], allow_vacuous: bool) -> i32 {
    let mut code = 0;
    for r in results {
        let c = match &r.status {
            JobStatus::Skipped { .. } | JobStatus::Trusted => 0,
            JobStatus::Finished(o) => match &o.verdict {
                Verdict::Proven => 0,
                Verdict::Refuted { .. } => 1,
                Verdict::Vacuous => {
                    if allow_vacuous {
                        0
                    } else {
                        1
                    }
                }
                Verdict::EngineError(_) => 2,
            },
        };
        code = code.max(c);
    }
    code
}

// ---- Rendering --------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ReportFormat {
    Human,
    Json,
}

/// Render a report. Both formats are pure functions of the report data:
/// re-rendering the same report always yields the same text.
pub fn render_report(report: &TestReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Human => render_human(report),
        ReportFormat::Json => render_json(report),
    }
}

/// Unit-test-runner-style text: one line per job, counterexamples and
/// traces indented under the jobs they belong to, and a summary line.
pub fn render_human(report: &TestReport) -> String {
    let mut out = String::new();
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    for r in &report.results {
        let head = format!("{} {}", r.job.kind.name(), r.job.function);
        match &r.status {
            JobStatus::Skipped { reason } => line(format!("SKIP    {head}: {reason}")),
            JobStatus::Trusted => line(format!(
                "TRUST   {head}: summary extracted without verification"
            )),
            JobStatus::Finished(o) => {
                match &o.verdict {
                    Verdict::Proven => line(format!(
                        "PASS    {head} ({} obligations, {} clauses)",
                        o.stats.obligations, o.stats.cnf_clauses
                    )),
                    Verdict::Refuted { model, failed } => {
                        line(format!(
                            "FAIL    {head}: {} at {}: {}",
                            failed.kind.name(),
                            failed.location,
                            failed.message
                        ));
                        for (name, ord, value) in model.entries() {
                            line(format!("        {name}!{ord} = {value}"));
                        }
                    }
                    Verdict::Vacuous => line(format!(
                        "VACUOUS {head}: the assumptions are unsatisfiable"
                    )),
                    Verdict::EngineError(detail) => line(format!("ERROR   {head}: {detail}")),
                }
                if !o.trace.is_empty() {
                    line("        trace:".to_string());
                    for t in &o.trace {
                        line(format!("          {t}"));
                    }
                }
            }
        }
    }
    let c = StatusCounts::of(report);
    line(format!(
        "{} jobs: {} proven, {} refuted, {} vacuous, {} errors, {} skipped, {} trusted",
        report.results.len(),
        c.proven,
        c.refuted,
        c.vacuous,
        c.engine_errors,
        c.skipped,
        c.trusted
    ));
    line(if report.exit_code == 0 {
        "result: ok".to_string()
    } else {
        format!("result: FAILED (exit {})", report.exit_code)
    });
    out
}

#[derive(Default)]
struct StatusCounts {
    proven: usize,
    refuted: usize,
    vacuous: usize,
    engine_errors: usize,
    skipped: usize,
    trusted: usize,
}

impl StatusCounts {
    fn of(report: &TestReport) -> StatusCounts {
        let mut c = StatusCounts::default();
        for r in &report.results {
            match &r.status {
                JobStatus::Skipped { .. } => c.skipped += 1,
                JobStatus::Trusted => c.trusted += 1,
                JobStatus::Finished(o) => match o.verdict {
                    Verdict::Proven => c.proven += 1,
                    Verdict::Refuted { .. } => c.refuted += 1,
                    Verdict::Vacuous => c.vacuous += 1,
                    Verdict::EngineError(_) => c.engine_errors += 1,
                },
            }
        }
        c
    }
}

/// Stable JSON rendering. The schema (documented in the README) is:
/// a top-level object with `version`, `exit_code`, `summary` (status
/// counts), and `jobs` — one object per job in plan order carrying
/// `name`, `kind`, `requires`, `status`, and, for finished jobs,
/// `verdict`, `stats`, `obligations`, plus `counterexample` and
/// `failed_obligation` when refuted, `error` when the engine failed, and
/// `trace` when one was recorded. Keys are emitted in sorted order, so
/// identical reports serialize byte-identically.
pub fn render_json(report: &TestReport) -> String {
    let jobs: Vec<Value> = report.results.iter().map(job_json).collect();
    let c = StatusCounts::of(report);
    let doc = json!({
        "version": 1,
        "exit_code": report.exit_code,
        "summary": {
            "total": report.results.len(),
            "proven": c.proven,
            "refuted": c.refuted,
            "vacuous": c.vacuous,
            "engine_errors": c.engine_errors,
            "skipped": c.skipped,
            "trusted": c.trusted,
        },
        "jobs": jobs,
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("report values are serializable");
    text.push('\n');
    text
}

fn job_json(r: &JobResult) -> Value {
    let mut obj = serde_json::Map::new();
    obj.insert("name".to_string(), json!(r.job.function));
    obj.insert("kind".to_string(), json!(r.job.kind.name()));
    obj.insert("requires".to_string(), json!(r.job.requires));
    match &r.status {
        JobStatus::Skipped { reason } => {
            obj.insert("status".to_string(), json!("skipped"));
            obj.insert("reason".to_string(), json!(reason));
        }
        JobStatus::Trusted => {
            obj.insert("status".to_string(), json!("trusted"));
        }
        JobStatus::Finished(o) => {
            obj.insert("status".to_string(), json!("finished"));
            obj.insert("verdict".to_string(), json!(o.verdict.name()));
            obj.insert(
                "stats".to_string(),
                json!({
                    "terms_built": o.stats.terms_built,
                    "obligations": o.stats.obligations,
                    "unrollings": o.stats.unrollings,
                    "feasibility_solver_calls": o.stats.feasibility_solver_calls,
                    "discharge_solver_calls": o.stats.discharge_solver_calls,
                    "cnf_vars": o.stats.cnf_vars,
                    "cnf_clauses": o.stats.cnf_clauses,
                }),
            );
            let obligations: Vec<Value> = o.obligations.iter().map(obligation_json).collect();
            obj.insert("obligations".to_string(), json!(obligations));
            match &o.verdict {
                Verdict::Refuted { model, failed } => {
                    let cex: Vec<Value> = model
                        .entries()
                        .map(|(name, ordinal, value)| {
                            json!({
                                "name": name,
                                "ordinal": ordinal,
                                "value": value.to_string(),
                            })
                        })
                        .collect();
                    obj.insert("counterexample".to_string(), json!(cex));
                    obj.insert("failed_obligation".to_string(), obligation_json(failed));
                }
                Verdict::EngineError(detail) => {
                    obj.insert("error".to_string(), json!(detail));
                }
                Verdict::Proven | Verdict::Vacuous => {}
            }
            if !o.trace.is_empty() {
                obj.insert("trace".to_string(), json!(o.trace));
            }
        }
    }
    Value::Object(obj)
}

fn obligation_json(ob: &exec::ObligationReport) -> Value {
    json!({
        "kind": ob.kind.name(),
        "location": ob.location.to_string(),
        "message": ob.message,
        "status": ob.status.name(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend;
    use crate::ir::sort_check;

    fn parse(text: &str) -> Program {
        let prog = frontend::parse("harness_test.cir", text).expect("parses");
        let diags = sort_check(&prog);
        assert!(diags.is_empty(), "sort errors: {diags:?}");
        prog
    }

    /// Parse without the sort check, for programs that are deliberately
    /// ill-formed at the enable_spec level.
    fn parse_unchecked(text: &str) -> Program {
        frontend::parse("harness_test.cir", text).expect("parses")
    }

    fn names(plan: &RunPlan) -> Vec<&str> {
        plan.jobs.iter().map(|j| j.function.as_str()).collect()
    }

    /// Two implementations of the same increment, a spec equating them,
    /// and tests in an order that forces reordering.
    const INC_SUITE: &str = r#"
fn inc(x: bv8) -> bv8 {
entry:
  one = 1:bv8
  r = add x, one
  ret r
}

fn inc_ref(x: bv8) -> bv8 {
entry:
  one = 1:bv8
  r = add one, x
  ret r
}

#[test]
fn delta_is_one() {
entry:
  x = symbolic bv8 "x"
  enable_spec inc_equiv
  y = call inc(x)
  d = sub y, x
  one = 1:bv8
  c = eq d, one
  assert c "increment adds one"
  ret ()
}

#[spec_for(inc)]
fn inc_equiv(x: bv8) {
entry:
  a = call inc(x)
  b = call inc_ref(x)
  e = eq a, b
  assert e "matches the reference"
  ret ()
}

#[test]
fn plain() {
entry:
  x = symbolic bv8 "x"
  c = ule x, x
  assert c "reflexive"
  ret ()
}
"#;

    #[test]
    fn specs_precede_the_tests_that_enable_them() {
        let prog = parse(INC_SUITE);
        let plan = discover(&prog).unwrap();
        assert_eq!(names(&plan), ["inc_equiv", "delta_is_one", "plain"]);
        assert_eq!(plan.jobs[0].kind, JobKind::Spec);
        assert_eq!(plan.jobs[1].kind, JobKind::Test);
        assert_eq!(plan.jobs[1].requires, ["inc_equiv"]);
        assert!(plan.jobs[2].requires.is_empty());
    }

    #[test]
    fn independent_jobs_preserve_source_order() {
        let prog = parse(
            r#"
fn id(x: bv8) -> bv8 {
entry:
  ret x
}

#[test]
fn t1() {
entry:
  c = true
  assert c
  ret ()
}

#[test]
fn t2() {
entry:
  x = symbolic bv8 "x"
  enable_spec s
  y = call id(x)
  c = eq y, x
  assert c
  ret ()
}

#[spec_for(id)]
fn s(x: bv8) {
entry:
  r = call id(x)
  c = eq r, x
  assert c
  ret ()
}

#[test]
fn t3() {
entry:
  c = true
  assert c
  ret ()
}
"#,
        );
        let plan = discover(&prog).unwrap();
        // t2 needs s hoisted above it; t1 and t3 stay put relative to t2.
        assert_eq!(names(&plan), ["t1", "s", "t2", "t3"]);
    }

    #[test]
    fn enablement_is_found_through_called_functions() {
        let prog = parse(
            r#"
fn id(x: bv8) -> bv8 {
entry:
  ret x
}

fn helper(x: bv8) -> bv8 {
entry:
  enable_spec s
  r = call id(x)
  ret r
}

#[spec_for(id)]
fn s(x: bv8) {
entry:
  r = call id(x)
  c = eq r, x
  assert c
  ret ()
}

#[test]
fn uses_helper() {
entry:
  x = symbolic bv8 "x"
  y = call helper(x)
  c = eq y, x
  assert c
  ret ()
}
"#,
        );
        let plan = discover(&prog).unwrap();
        let uses = plan
            .jobs
            .iter()
            .find(|j| j.function == "uses_helper")
            .unwrap();
        assert_eq!(uses.requires, ["s"]);
    }

    #[test]
    fn enabling_a_missing_or_plain_function_is_a_discovery_error() {
        let missing = parse_unchecked(
            r#"
#[test]
fn t() {
entry:
  enable_spec ghost
  c = true
  assert c
  ret ()
}
"#,
        );
        let err = discover(&missing).unwrap_err();
        assert!(err.contains("ghost") && err.contains("no such function"), "{err}");

        let plain = parse_unchecked(
            r#"
fn not_a_spec(x: bv8) -> bv8 {
entry:
  ret x
}

#[test]
fn t() {
entry:
  enable_spec not_a_spec
  c = true
  assert c
  ret ()
}
"#,
        );
        let err = discover(&plain).unwrap_err();
        assert!(err.contains("not_a_spec") && err.contains("is not a spec"), "{err}");
    }

    #[test]
    fn cyclic_enablement_is_a_discovery_error() {
        let prog = parse(
            r#"
fn f(x: bv8) -> bv8 {
entry:
  ret x
}

fn g(x: bv8) -> bv8 {
entry:
  ret x
}

#[spec_for(f)]
fn spec_f(x: bv8) {
entry:
  enable_spec spec_g
  r = call f(x)
  c = eq r, x
  assert c
  ret ()
}

#[spec_for(g)]
fn spec_g(x: bv8) {
entry:
  enable_spec spec_f
  r = call g(x)
  c = eq r, x
  assert c
  ret ()
}
"#,
        );
        let err = discover(&prog).unwrap_err();
        assert!(err.contains("cyclic spec enablement"), "{err}");
        assert!(err.contains("spec_f") && err.contains("spec_g"), "{err}");
    }

    #[test]
    fn a_full_run_proves_the_suite_and_exits_zero() {
        let prog = parse(INC_SUITE);
        let plan = discover(&prog).unwrap();
        let report = run(&prog, &plan, &RunConfig::default());
        assert_eq!(report.exit_code, 0);
        for r in &report.results {
            match &r.status {
                JobStatus::Finished(o) => assert_eq!(o.verdict, Verdict::Proven, "{}", r.job.function),
                other => panic!("{} did not finish: {other:?}", r.job.function),
            }
        }
        let human = render_human(&report);
        assert!(human.contains("PASS    spec inc_equiv"), "{human}");
        assert!(human.contains("PASS    test delta_is_one"), "{human}");
        assert!(human.contains("result: ok"), "{human}");
    }

    /// A refuted spec plus a chain of dependents: the spec reports its
    /// own verdict, and everything needing it is skipped with a cause.
    const BROKEN_SPEC_SUITE: &str = r#"
fn dbl(x: bv8) -> bv8 {
entry:
  r = add x, x
  ret r
}

fn tpl(x: bv8) -> bv8 {
entry:
  t = add x, x
  r = add t, x
  ret r
}

#[spec_for(dbl)]
fn dbl_is_tpl(x: bv8) {
entry:
  a = call dbl(x)
  b = call tpl(x)
  e = eq a, b
  assert e "double equals triple"
  ret ()
}

#[spec_for(tpl)]
fn tpl_spec(x: bv8) {
entry:
  enable_spec dbl_is_tpl
  a = call tpl(x)
  b = call tpl(x)
  e = eq a, b
  assert e
  ret ()
}

#[test]
fn needs_the_chain() {
entry:
  x = symbolic bv8 "x"
  enable_spec tpl_spec
  y = call tpl(x)
  c = eq y, y
  assert c
  ret ()
}

#[test]
fn independent() {
entry:
  c = true
  assert c
  ret ()
}
"#;

    #[test]
    fn failed_specs_skip_their_dependents_transitively() {
        let prog = parse(BROKEN_SPEC_SUITE);
        let plan = discover(&prog).unwrap();
        assert_eq!(
            names(&plan),
            ["dbl_is_tpl", "tpl_spec", "needs_the_chain", "independent"]
        );
        let report = run(&prog, &plan, &RunConfig::default());
        assert_eq!(report.exit_code, 1);

        match &report.results[0].status {
            JobStatus::Finished(o) => assert!(matches!(o.verdict, Verdict::Refuted { .. })),
            other => panic!("spec should have finished refuted: {other:?}"),
        }
        match &report.results[1].status {
            JobStatus::Skipped { reason } => {
                assert!(reason.contains("dbl_is_tpl") && reason.contains("was refuted"), "{reason}")
            }
            other => panic!("tpl_spec should be skipped: {other:?}"),
        }
        match &report.results[2].status {
            JobStatus::Skipped { reason } => {
                assert!(reason.contains("tpl_spec") && reason.contains("was skipped"), "{reason}")
            }
            other => panic!("dependent test should be skipped: {other:?}"),
        }
        match &report.results[3].status {
            JobStatus::Finished(o) => assert_eq!(o.verdict, Verdict::Proven),
            other => panic!("independent test should still run: {other:?}"),
        }
        let human = render_human(&report);
        assert!(human.contains("FAIL    spec dbl_is_tpl"), "{human}");
        assert!(human.contains("SKIP    test needs_the_chain"), "{human}");
    }

    #[test]
    fn vacuous_tests_fail_unless_allowed() {
        let prog = parse(
            r#"
#[test]
fn contradictory() {
entry:
  f = false
  assume f
  c = true
  assert c
  ret ()
}
"#,
        );
        let plan = discover(&prog).unwrap();
        let strict = run(&prog, &plan, &RunConfig::default());
        assert_eq!(strict.exit_code, 1);
        match &strict.results[0].status {
            JobStatus::Finished(o) => assert_eq!(o.verdict, Verdict::Vacuous),
            other => panic!("expected a vacuous finish: {other:?}"),
        }
        let lenient = run(
            &prog,
            &plan,
            &RunConfig {
                allow_vacuous: true,
                ..RunConfig::default()
            },
        );
        assert_eq!(lenient.exit_code, 0);
        // The verdict itself is unchanged; only the exit code moves.
        assert_eq!(strict.results, lenient.results);
    }

    #[test]
    fn engine_errors_exit_with_code_two() {
        let prog = parse(
            r#"
#[test]
fn endless() {
entry:
  i = 0:bv8
  goto top
top:
  lim = 255:bv8
  c = ult i, lim
  br c again done
again:
  zero = 0:bv8
  i = add i, zero
  goto top
done:
  ret ()
}
"#,
        );
        let plan = discover(&prog).unwrap();
        let config = RunConfig {
            exec: exec::Config {
                max_unroll: 4,
                ..exec::Config::default()
            },
            ..RunConfig::default()
        };
        let report = run(&prog, &plan, &config);
        assert_eq!(report.exit_code, 2);
        match &report.results[0].status {
            JobStatus::Finished(o) => match &o.verdict {
                Verdict::EngineError(detail) => {
                    assert!(detail.contains("unroll bound exceeded"), "{detail}")
                }
                v => panic!("expected an engine error, got {v:?}"),
            },
            other => panic!("expected a finish: {other:?}"),
        }
        let human = render_human(&report);
        assert!(human.contains("ERROR   test endless"), "{human}");
    }

    #[test]
    fn trusted_specs_skip_verification_but_still_extract() {
        // The spec is false (inc is not dec), but trust mode never
        // checks it: the spec reports Trusted and the dependent test
        // runs against the bogus summary — and catches the lie.
        let prog = parse(
            r#"
fn inc(x: bv8) -> bv8 {
entry:
  one = 1:bv8
  r = add x, one
  ret r
}

fn dec(x: bv8) -> bv8 {
entry:
  one = 1:bv8
  r = sub x, one
  ret r
}

#[spec_for(inc)]
fn inc_is_dec(x: bv8) {
entry:
  a = call inc(x)
  b = call dec(x)
  e = eq a, b
  assert e "increment equals decrement"
  ret ()
}

#[test]
fn delta_is_one() {
entry:
  x = symbolic bv8 "x"
  enable_spec inc_is_dec
  y = call inc(x)
  d = sub y, x
  one = 1:bv8
  c = eq d, one
  assert c "increment adds one"
  ret ()
}
"#,
        );
        let plan = discover(&prog).unwrap();

        let verified = run(&prog, &plan, &RunConfig::default());
        assert_eq!(verified.exit_code, 1);
        match &verified.results[0].status {
            JobStatus::Finished(o) => assert!(matches!(o.verdict, Verdict::Refuted { .. })),
            other => panic!("verification should refute the spec: {other:?}"),
        }

        let trusted = run(
            &prog,
            &plan,
            &RunConfig {
                trust_specs: true,
                ..RunConfig::default()
            },
        );
        assert_eq!(trusted.results[0].status, JobStatus::Trusted);
        match &trusted.results[1].status {
            JobStatus::Finished(o) => {
                assert!(matches!(o.verdict, Verdict::Refuted { .. }), "{:?}", o.verdict)
            }
            other => panic!("the dependent test should run and fail: {other:?}"),
        }
        assert_eq!(trusted.exit_code, 1);
        let human = render_human(&trusted);
        assert!(human.contains("TRUST   spec inc_is_dec"), "{human}");
    }

    #[test]
    fn filters_keep_named_jobs_and_the_specs_they_need() {
        let prog = parse(INC_SUITE);
        let plan = discover(&prog).unwrap();

        let only_delta = RunConfig {
            filter: Some(["delta_is_one".to_string()].into_iter().collect()),
            ..RunConfig::default()
        };
        let report = run(&prog, &plan, &only_delta);
        let ran: Vec<&str> = report.results.iter().map(|r| r.job.function.as_str()).collect();
        assert_eq!(ran, ["inc_equiv", "delta_is_one"]);

        let only_plain = RunConfig {
            filter: Some(["plain".to_string()].into_iter().collect()),
            ..RunConfig::default()
        };
        let report = run(&prog, &plan, &only_plain);
        let ran: Vec<&str> = report.results.iter().map(|r| r.job.function.as_str()).collect();
        assert_eq!(ran, ["plain"]);
    }

    /// A suite whose report exercises every interesting field: a proved
    /// spec, a proved test, a refuted test with a model, and a skip.
    fn mixed_suite() -> Program {
        parse(
            r#"
fn inc(x: bv8) -> bv8 {
entry:
  one = 1:bv8
  r = add x, one
  ret r
}

fn inc_ref(x: bv8) -> bv8 {
entry:
  one = 1:bv8
  r = add one, x
  ret r
}

fn bad(x: bv8) -> bv8 {
entry:
  r = add x, x
  ret r
}

#[spec_for(inc)]
fn inc_equiv(x: bv8) {
entry:
  a = call inc(x)
  b = call inc_ref(x)
  e = eq a, b
  assert e
  ret ()
}

#[spec_for(bad)]
fn bad_spec(x: bv8) {
entry:
  a = call bad(x)
  b = call inc(x)
  e = eq a, b
  assert e "doubling is not incrementing"
  ret ()
}

#[test]
fn uses_inc() {
entry:
  x = symbolic bv8 "x"
  enable_spec inc_equiv
  y = call inc(x)
  d = sub y, x
  one = 1:bv8
  c = eq d, one
  assert c
  ret ()
}

#[test]
fn monotone_wrong() {
entry:
  x = symbolic bv8 "x"
  y = call inc(x)
  c = ugt y, x
  assert c "increment grows"
  ret ()
}

#[test]
fn needs_bad() {
entry:
  x = symbolic bv8 "x"
  enable_spec bad_spec
  y = call bad(x)
  c = eq y, y
  assert c
  ret ()
}
"#,
        )
    }

    #[test]
    fn json_reports_are_byte_identical_across_runs() {
        let prog = mixed_suite();
        let plan = discover(&prog).unwrap();
        let config = RunConfig::default();
        let a = render_json(&run(&prog, &plan, &config));
        let b = render_json(&run(&prog, &plan, &config));
        assert_eq!(a, b);
        // Spot-check the schema while we have a rendering in hand.
        let doc: serde_json::Value = serde_json::from_str(&a).unwrap();
        assert_eq!(doc["version"], 1);
        assert_eq!(doc["exit_code"], 1);
        assert_eq!(doc["summary"]["total"], 5);
        assert_eq!(doc["summary"]["refuted"], 2);
        assert_eq!(doc["summary"]["skipped"], 1);
        let jobs = doc["jobs"].as_array().unwrap();
        assert_eq!(jobs.len(), 5);
        let wrong = jobs
            .iter()
            .find(|j| j["name"] == "monotone_wrong")
            .unwrap();
        assert_eq!(wrong["verdict"], "refuted");
        assert_eq!(wrong["failed_obligation"]["kind"], "assert");
        let cex = wrong["counterexample"].as_array().unwrap();
        assert!(!cex.is_empty());
        assert!(cex.iter().any(|e| e["name"] == "x"));
    }

    #[test]
    fn parallel_and_serial_runs_produce_identical_reports() {
        let prog = mixed_suite();
        let plan = discover(&prog).unwrap();
        let serial = run(&prog, &plan, &RunConfig::default());
        let parallel = run(
            &prog,
            &plan,
            &RunConfig {
                jobs: 4,
                ..RunConfig::default()
            },
        );
        assert_eq!(serial, parallel);
        assert_eq!(render_json(&serial), render_json(&parallel));
    }
}
