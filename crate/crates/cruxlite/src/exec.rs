//! Path-merging symbolic executor and its concrete replay twin.
//!
//! [`run_test`] executes one entry point over the term DAG: locals hold
//! symbolic values, branches fork eagerly and re-join at the immediate
//! post-dominator, loops unroll up to a configured bound, and every
//! potential fault (assertion, checked-arithmetic overflow, division by
//! zero, out-of-bounds index, panic, unreachable code, enabled-summary
//! precondition) becomes a proof obligation discharged by the solver.
//!
//! Every refutation is confirmed before it is reported: the solver model
//! is turned into a [`ReplayModel`] and fed to [`concrete_replay`], a
//! deliberately independent concrete interpreter over the same programs
//! that shares no evaluation code with the term table. A counterexample
//! the replay cannot reproduce is reported as an engine error, never as a
//! refutation.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use crate::compose::{self, SummaryMap, SummaryMode};
use crate::ir::{
    immediate_postdominators, operand_sort, AggregateKind, BinOpKind, BlockId, CheckedKind,
    FuncId, Function, Operand, PostDoms, Program, RefSelector, Rvalue, Selector, SourceSpan,
    Stmt, StmtKind, TermKind, UnOpKind,
};
use crate::memory::{AllocId, GuardedRef, Heap, MemError, PathSel, DEFAULT_REF_MUX_CAP};
use crate::solver::{check_claim, CheckVerdict, Model, SolverConfig, SolverError};
use crate::term::{
    mask, ConcreteValue, Env, EvalError, Opcode, Sort, SymbolId, TermError, TermId, TermTable,
    TAG_WIDTH,
};

// ---- Outcome types ---------------------------------------------------------

/// What kind of fault an obligation rules out.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ObligationKind {
    Assert,
    Overflow,
    DivByZero,
    Bounds,
    Panic,
    Unreachable,
    SpecPrecondition,
}

impl ObligationKind {
    pub fn name(self) -> &'static str {
        match self {
            ObligationKind::Assert => "assert",
            ObligationKind::Overflow => "overflow",
            ObligationKind::DivByZero => "div_by_zero",
            ObligationKind::Bounds => "bounds",
            ObligationKind::Panic => "panic",
            ObligationKind::Unreachable => "unreachable",
            ObligationKind::SpecPrecondition => "spec_precondition",
        }
    }
}

impl fmt::Display for ObligationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One proof obligation: `claim` must hold whenever the assumptions and
/// the path condition `context` hold.
#[derive(Clone, PartialEq, Debug)]
pub struct Obligation {
    pub location: SourceSpan,
    pub kind: ObligationKind,
    pub message: String,
    pub claim: TermId,
    /// Path condition at the emission point.
    pub context: TermId,
}

/// How branch feasibility is decided before forking.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Feasibility {
    /// Only constructor-time simplification and the interval layer prune
    /// arms; no solver calls during execution.
    IntervalOnly,
    /// Fall back to a satisfiability query when simplification cannot
    /// decide the branch.
    IntervalThenSolver,
}

/// Execution configuration for one test job.
#[derive(Clone, Debug)]
pub struct Config {
    /// Maximum traversals of any single loop back edge on one path, and
    /// the maximum recursive activations of one function.
    pub max_unroll: u32,
    /// Cap on reference alternatives produced by merging.
    pub ref_mux_cap: usize,
    pub feasibility: Feasibility,
    pub solver: SolverConfig,
    /// Collect a statement trace from the confirming replay when a test
    /// is refuted.
    pub trace: bool,
}

impl Default for Config {
    fn default() -> Config {
        Config {
            max_unroll: 64,
            ref_mux_cap: DEFAULT_REF_MUX_CAP,
            feasibility: Feasibility::IntervalThenSolver,
            solver: SolverConfig::default(),
            trace: false,
        }
    }
}

/// Per-obligation discharge result.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DischargeStatus {
    Valid,
    Refuted,
    /// Not checked because an earlier obligation was already refuted (or
    /// the run ended in an engine error).
    Skipped,
}

impl DischargeStatus {
    pub fn name(self) -> &'static str {
        match self {
            DischargeStatus::Valid => "valid",
            DischargeStatus::Refuted => "refuted",
            DischargeStatus::Skipped => "skipped",
        }
    }
}

/// Reportable view of one obligation after discharge.
#[derive(Clone, PartialEq, Debug)]
pub struct ObligationReport {
    pub kind: ObligationKind,
    pub location: SourceSpan,
    pub message: String,
    pub status: DischargeStatus,
}

/// Cost accounting for one test job.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub struct RunStats {
    /// Total interned terms when the job finished.
    pub terms_built: usize,
    pub obligations: usize,
    /// Loop back-edge traversals across all paths.
    pub unrollings: u64,
    pub feasibility_solver_calls: u64,
    pub discharge_solver_calls: u64,
    /// CNF sizes summed over every solver query in the job.
    pub cnf_vars: u64,
    pub cnf_clauses: u64,
}

/// Final verdict for one test.
#[derive(Clone, PartialEq, Debug)]
pub enum Verdict {
    /// Every obligation is valid and the assumptions are satisfiable.
    Proven,
    /// Some obligation fails; the model was confirmed by concrete replay.
    Refuted { model: Model, failed: ObligationReport },
    /// Every obligation is valid but the assumptions are unsatisfiable,
    /// so the test constrains nothing.
    Vacuous,
    /// The engine could not finish (unroll bound, reference explosion,
    /// solver failure, malformed program, failed replay confirmation).
    EngineError(String),
}

impl Verdict {
    pub fn name(&self) -> &'static str {
        match self {
            Verdict::Proven => "proven",
            Verdict::Refuted { .. } => "refuted",
            Verdict::Vacuous => "vacuous",
            Verdict::EngineError(_) => "engine_error",
        }
    }
}

/// Everything a test run produces.
#[derive(Clone, PartialEq, Debug)]
pub struct TestOutcome {
    pub test: String,
    pub verdict: Verdict,
    pub stats: RunStats,
    /// All emitted obligations in emission order with their discharge
    /// status; deterministic across runs.
    pub obligations: Vec<ObligationReport>,
    /// Statement trace of the confirming replay (only on refutations and
    /// only when [`Config::trace`] is set).
    pub trace: Vec<String>,
}

// ---- Shared fault message texts --------------------------------------------
//
// The engine stamps these onto obligations and the replayer stamps them
// onto fired faults; keeping one source for both lets confirmation match
// on full reports.

fn assert_message(m: &Option<String>) -> String {
    m.clone().unwrap_or_else(|| "assertion".to_string())
}

fn overflow_message(k: CheckedKind) -> String {
    let op = match k {
        CheckedKind::Add => "add",
        CheckedKind::Sub => "sub",
        CheckedKind::Mul => "mul",
    };
    format!("checked {op} overflows")
}

fn div_message(k: BinOpKind) -> &'static str {
    match k {
        BinOpKind::URem => "remainder by zero",
        _ => "division by zero",
    }
}

const BOUNDS_MESSAGE: &str = "array index out of bounds";
const UNREACHABLE_MESSAGE: &str = "unreachable code executed";

fn spec_pre_message(spec: &str, target: &str) -> String {
    format!("precondition of `{spec}` for call to `{target}`")
}

/// Model queue name for the havoced result of a summarized call.
pub(crate) fn spec_result_name(target: &str) -> String {
    format!("{target}.result")
}

// ---- Engine error plumbing -------------------------------------------------

#[derive(Clone, Debug)]
pub(crate) struct EngErr(pub(crate) String);

impl From<TermError> for EngErr {
    fn from(e: TermError) -> EngErr {
        EngErr(format!("term construction failed: {e}"))
    }
}

impl From<MemError> for EngErr {
    fn from(e: MemError) -> EngErr {
        EngErr(format!("memory operation failed: {e}"))
    }
}

impl From<SolverError> for EngErr {
    fn from(e: SolverError) -> EngErr {
        EngErr(format!("solver failure: {e}"))
    }
}

// ---- Symbolic state --------------------------------------------------------

/// A local's symbolic content: a term, or a guarded reference into the
/// heap (references are not terms and never enter solver queries).
#[derive(Clone, PartialEq, Debug)]
pub(crate) enum Value {
    Term(TermId),
    Ref(GuardedRef),
}

/// Per-path mutable state. Forks clone it; merges recombine it.
#[derive(Clone, Debug)]
struct PathState {
    path: TermId,
    locals: Vec<Option<Value>>,
    /// Traversal counts per loop back edge `(from, to)`. Forward entry
    /// into a block resets the counters of back edges targeting it, so
    /// nested loops restart their inner bound on each outer iteration.
    unroll: BTreeMap<(u32, u32), u32>,
    alive: bool,
}

/// One symbolic input in execution order: a `symbolic` statement, an
/// entry-point parameter, or a havoced summary-call result. `guard` is the
/// path condition under which the input was created; replay-model
/// construction evaluates `term` for exactly the records whose guard is
/// true under the solver model.
#[derive(Clone, Debug)]
struct IntroRecord {
    name: String,
    guard: TermId,
    term: TermId,
}

/// A call intercepted during summary extraction.
#[derive(Clone, Debug)]
pub(crate) struct InterceptedCall {
    pub(crate) location: SourceSpan,
    pub(crate) args: Vec<TermId>,
    pub(crate) result: TermId,
    pub(crate) guard: TermId,
    /// Snapshot of the assumption list at the call (immune to the
    /// branch-merge rewrapping that reorders the live list).
    pub(crate) assumptions_at_call: Vec<TermId>,
    pub(crate) obligations_before: usize,
    /// Assumption events seen before the call; compared against the run's
    /// final count to reject specs that assume after calling their target.
    pub(crate) assume_events_before: u64,
}

struct FuncAnalysis {
    pdoms: PostDoms,
    back_edges: BTreeSet<(u32, u32)>,
}

/// Retreating edges of a depth-first traversal from the entry block.
/// Every cycle contains at least one, so bounding their traversals bounds
/// every loop.
fn back_edges_of(f: &Function) -> BTreeSet<(u32, u32)> {
    let n = f.blocks.len();
    let mut color = vec![0u8; n]; // 0 unvisited, 1 on stack, 2 done
    let mut out = BTreeSet::new();
    let mut stack: Vec<(u32, usize)> = vec![(0, 0)];
    color[0] = 1;
    while let Some(&(u, i)) = stack.last() {
        let succs = f.successors(BlockId(u));
        if i < succs.len() {
            stack.last_mut().expect("nonempty").1 += 1;
            let v = succs[i].0;
            match color[v as usize] {
                0 => {
                    color[v as usize] = 1;
                    stack.push((v, 0));
                }
                1 => {
                    out.insert((u, v));
                }
                _ => {}
            }
        } else {
            color[u as usize] = 2;
            stack.pop();
        }
    }
    out
}

// ---- The engine ------------------------------------------------------------

pub(crate) struct Engine<'a> {
    prog: &'a Program,
    pub(crate) table: TermTable,
    config: Config,
    summaries: &'a SummaryMap,
    pub(crate) heap: Heap,
    /// Executed `assume`s plus assumed summary post-relations. Arm-local
    /// entries are rewritten to `branch-cond => entry` when a fork merges.
    pub(crate) assumptions: Vec<TermId>,
    /// Monotone count of assumption events (never decremented by merges).
    assume_events: u64,
    pub(crate) obligations: Vec<Obligation>,
    intro_plan: Vec<IntroRecord>,
    /// Active summary overrides: target function name -> spec name.
    /// Global and last-writer-wins; enabling inside one branch arm
    /// affects everything executed afterwards.
    enabled: BTreeMap<String, String>,
    analyses: HashMap<u32, FuncAnalysis>,
    call_stack: Vec<u32>,
    stats: RunStats,
    /// When set, calls to this function are recorded instead of executed
    /// (summary extraction).
    extract_target: Option<String>,
    pub(crate) intercepted: Vec<InterceptedCall>,
}

impl<'a> Engine<'a> {
    pub(crate) fn new(prog: &'a Program, summaries: &'a SummaryMap, config: Config) -> Engine<'a> {
        Engine {
            prog,
            table: TermTable::new(),
            config,
            summaries,
            heap: Heap::new(),
            assumptions: Vec::new(),
            assume_events: 0,
            obligations: Vec::new(),
            intro_plan: Vec::new(),
            enabled: BTreeMap::new(),
            analyses: HashMap::new(),
            call_stack: Vec::new(),
            stats: RunStats::default(),
            extract_target: None,
            intercepted: Vec::new(),
        }
    }

    fn ensure_analysis(&mut self, f: FuncId) {
        if self.analyses.contains_key(&f.0) {
            return;
        }
        let func = self.prog.function(f);
        let fa = FuncAnalysis {
            pdoms: immediate_postdominators(func),
            back_edges: back_edges_of(func),
        };
        self.analyses.insert(f.0, fa);
    }

    fn merge_point_of(&mut self, f: FuncId, b: BlockId) -> Option<BlockId> {
        self.ensure_analysis(f);
        self.analyses[&f.0].pdoms.merge_point(b)
    }

    fn is_back_edge(&mut self, f: FuncId, from: BlockId, to: BlockId) -> bool {
        self.ensure_analysis(f);
        self.analyses[&f.0].back_edges.contains(&(from.0, to.0))
    }

    fn back_edges_into(&mut self, f: FuncId, to: BlockId) -> Vec<(u32, u32)> {
        self.ensure_analysis(f);
        self.analyses[&f.0]
            .back_edges
            .iter()
            .filter(|&&(_, v)| v == to.0)
            .copied()
            .collect()
    }

    fn and(&mut self, a: TermId, b: TermId) -> Result<TermId, EngErr> {
        Ok(self.table.mk(Opcode::And, &[a, b])?)
    }

    fn not(&mut self, a: TermId) -> Result<TermId, EngErr> {
        Ok(self.table.mk(Opcode::Not, &[a])?)
    }

    fn emit(
        &mut self,
        location: &SourceSpan,
        kind: ObligationKind,
        message: String,
        claim: TermId,
        context: TermId,
    ) {
        self.obligations.push(Obligation {
            location: location.clone(),
            kind,
            message,
            claim,
            context,
        });
    }

    fn bv_width(&self, t: TermId) -> Result<u32, EngErr> {
        match self.table.sort_of(t) {
            Sort::BitVec(w) => Ok(*w),
            other => Err(EngErr(format!("expected a bitvector, got {other}"))),
        }
    }

    /// `index < len` at the index's width; constant-true when every value
    /// of the width is in range.
    fn bounds_claim(&mut self, idx: TermId, len: usize) -> Result<TermId, EngErr> {
        let w = self.bv_width(idx)?;
        if len as u128 > mask(w) {
            return Ok(self.table.const_bool(true));
        }
        let l = self.table.const_bv(w, len as u128)?;
        Ok(self.table.mk(Opcode::BvULt, &[idx, l])?)
    }

    // ---- Function execution ----

    /// Execute `f` on `args` under path condition `path`. Returns the
    /// merged return value, or `None` when no path returns.
    pub(crate) fn exec_function(
        &mut self,
        f: FuncId,
        args: Vec<Value>,
        path: TermId,
    ) -> Result<Option<Value>, EngErr> {
        let func = self.prog.function(f);
        if args.len() != func.params.len() {
            return Err(EngErr(format!(
                "call to `{}` with {} arguments, expected {}",
                func.name,
                args.len(),
                func.params.len()
            )));
        }
        let depth = self.call_stack.iter().filter(|&&x| x == f.0).count() as u32;
        if depth >= self.config.max_unroll {
            return Err(EngErr(format!(
                "unroll bound exceeded: `{}` recursed {} times (max_unroll {})",
                func.name, depth, self.config.max_unroll
            )));
        }
        self.call_stack.push(f.0);
        let mut locals: Vec<Option<Value>> = vec![None; func.locals.len()];
        for (i, a) in args.into_iter().enumerate() {
            locals[i] = Some(a);
        }
        let mut ps = PathState {
            path,
            locals,
            unroll: BTreeMap::new(),
            alive: true,
        };
        let mut exits: Vec<(TermId, Value)> = Vec::new();
        let r = self.exec_from(f, &mut ps, BlockId(0), None, &mut exits);
        self.call_stack.pop();
        r?;
        if exits.is_empty() {
            return Ok(None);
        }
        Ok(Some(self.merge_exits(exits)?))
    }

    /// Fold the exit set into one value: the last exit is the default and
    /// earlier exits select themselves under their path condition.
    fn merge_exits(&mut self, mut exits: Vec<(TermId, Value)>) -> Result<Value, EngErr> {
        let (_, mut acc) = exits.pop().expect("exit set is nonempty");
        while let Some((g, v)) = exits.pop() {
            acc = match (v, acc) {
                (Value::Term(a), Value::Term(b)) => {
                    Value::Term(self.table.mk(Opcode::Ite, &[g, a, b])?)
                }
                (Value::Ref(a), Value::Ref(b)) => Value::Ref(self.heap.mux_refs(
                    &mut self.table,
                    g,
                    &a,
                    &b,
                    self.config.ref_mux_cap,
                )?),
                _ => {
                    return Err(EngErr(
                        "return value is a reference on one path and a plain value on another"
                            .into(),
                    ))
                }
            };
        }
        Ok(acc)
    }

    /// Run from `start` until the state dies or reaches `stop` (a join
    /// block executed by the caller after merging).
    fn exec_from(
        &mut self,
        f: FuncId,
        ps: &mut PathState,
        start: BlockId,
        stop: Option<BlockId>,
        exits: &mut Vec<(TermId, Value)>,
    ) -> Result<(), EngErr> {
        let prog = self.prog;
        let func = prog.function(f);
        let mut cur = start;
        loop {
            if Some(cur) == stop {
                return Ok(());
            }
            let block = &func.blocks[cur.0 as usize];
            for stmt in &block.stmts {
                self.exec_stmt(f, ps, stmt)?;
                if !ps.alive {
                    return Ok(());
                }
            }
            let span = &block.term.span;
            match &block.term.kind {
                TermKind::Goto(t) => {
                    let t = *t;
                    self.take_edge(f, ps, cur, t, span)?;
                    cur = t;
                }
                TermKind::Return(op) => {
                    let v = self.operand_value(f, ps, op)?;
                    exits.push((ps.path, v));
                    ps.alive = false;
                    return Ok(());
                }
                TermKind::Panic(m) => {
                    let fls = self.table.const_bool(false);
                    self.emit(span, ObligationKind::Panic, m.clone(), fls, ps.path);
                    ps.alive = false;
                    return Ok(());
                }
                TermKind::Unreachable => {
                    let fls = self.table.const_bool(false);
                    self.emit(
                        span,
                        ObligationKind::Unreachable,
                        UNREACHABLE_MESSAGE.to_string(),
                        fls,
                        ps.path,
                    );
                    ps.alive = false;
                    return Ok(());
                }
                TermKind::Branch(c, t, e) => {
                    let (t, e) = (*t, *e);
                    let cv = self.operand_term(f, ps, c)?;
                    match self.table.as_const_bool(cv) {
                        Some(true) => {
                            self.take_edge(f, ps, cur, t, span)?;
                            cur = t;
                        }
                        Some(false) => {
                            self.take_edge(f, ps, cur, e, span)?;
                            cur = e;
                        }
                        None => {
                            let ncv = self.not(cv)?;
                            if !self.feasible(ps, cv)? {
                                ps.path = self.and(ps.path, ncv)?;
                                self.take_edge(f, ps, cur, e, span)?;
                                cur = e;
                            } else if !self.feasible(ps, ncv)? {
                                ps.path = self.and(ps.path, cv)?;
                                self.take_edge(f, ps, cur, t, span)?;
                                cur = t;
                            } else {
                                match self.fork(f, ps, cur, cv, ncv, t, e, stop, exits, span)? {
                                    Some(next) => cur = next,
                                    None => return Ok(()),
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Execute both branch arms to the join block and merge. The two arms
    /// run sequentially over the shared heap: the allocation counter stays
    /// monotonic, cell contents are rolled back between arms from a
    /// snapshot, and arm-created cells persist (their reachability is
    /// gated by reference guards held only on the creating path).
    #[allow(clippy::too_many_arguments)]
    fn fork(
        &mut self,
        f: FuncId,
        ps: &mut PathState,
        at: BlockId,
        cv: TermId,
        ncv: TermId,
        then_block: BlockId,
        else_block: BlockId,
        stop: Option<BlockId>,
        exits: &mut Vec<(TermId, Value)>,
        span: &SourceSpan,
    ) -> Result<Option<BlockId>, EngErr> {
        let arm_stop = self.merge_point_of(f, at).or(stop);
        let pre_path = ps.path;
        let base = self.assumptions.len();
        let ids: Vec<AllocId> = self.heap.alloc_ids().collect();
        let snapshot: Vec<(AllocId, TermId)> = ids
            .iter()
            .map(|&a| (a, self.heap.contents(a).expect("listed allocation exists")))
            .collect();

        let mut ps_then = ps.clone();
        ps_then.path = self.and(pre_path, cv)?;
        self.take_edge(f, &mut ps_then, at, then_block, span)?;
        self.exec_from(f, &mut ps_then, then_block, arm_stop, exits)?;
        let assumed_then = self.assumptions.split_off(base);
        let then_heap: BTreeMap<u32, TermId> = self
            .heap
            .alloc_ids()
            .map(|a| (a.0, self.heap.contents(a).expect("listed allocation exists")))
            .collect();
        for &(a, c) in &snapshot {
            self.heap.set_contents(&self.table, a, c)?;
        }

        let mut ps_else = ps.clone();
        ps_else.path = self.and(pre_path, ncv)?;
        self.take_edge(f, &mut ps_else, at, else_block, span)?;
        self.exec_from(f, &mut ps_else, else_block, arm_stop, exits)?;
        let assumed_else = self.assumptions.split_off(base);

        // Arm-local assumptions hold only under their branch condition.
        for a in assumed_then {
            let w = self.table.mk(Opcode::Implies, &[cv, a])?;
            self.assumptions.push(w);
        }
        for a in assumed_else {
            let w = self.table.mk(Opcode::Implies, &[ncv, a])?;
            self.assumptions.push(w);
        }

        // Cells seen by both arms whose contents diverged get muxed; cells
        // created inside an arm keep their contents unchanged.
        let final_ids: Vec<AllocId> = self.heap.alloc_ids().collect();
        for a in final_ids {
            let Some(&tc) = then_heap.get(&a.0) else { continue };
            let ec = self.heap.contents(a)?;
            if tc != ec {
                let m = self.table.mk(Opcode::Ite, &[cv, tc, ec])?;
                self.heap.set_contents(&self.table, a, m)?;
            }
        }

        match (ps_then.alive, ps_else.alive) {
            (false, false) => {
                ps.alive = false;
                Ok(None)
            }
            (true, false) => {
                let next = arm_stop.expect("a live arm stopped at a join block");
                *ps = ps_then;
                Ok(Some(next))
            }
            (false, true) => {
                let next = arm_stop.expect("a live arm stopped at a join block");
                *ps = ps_else;
                Ok(Some(next))
            }
            (true, true) => {
                let next = arm_stop.expect("a live arm stopped at a join block");
                *ps = self.merge_paths(cv, ps_then, ps_else, pre_path)?;
                Ok(Some(next))
            }
        }
    }

    fn merge_paths(
        &mut self,
        c: TermId,
        mut a: PathState,
        mut b: PathState,
        pre_path: TermId,
    ) -> Result<PathState, EngErr> {
        let mut locals = Vec::with_capacity(a.locals.len());
        for (x, y) in a.locals.drain(..).zip(b.locals.drain(..)) {
            let m = match (x, y) {
                (None, None) => None,
                (Some(v), None) | (None, Some(v)) => Some(v),
                (Some(Value::Term(p)), Some(Value::Term(q))) => Some(Value::Term(if p == q {
                    p
                } else {
                    self.table.mk(Opcode::Ite, &[c, p, q])?
                })),
                (Some(Value::Ref(p)), Some(Value::Ref(q))) => Some(Value::Ref(if p == q {
                    p
                } else {
                    self.heap
                        .mux_refs(&mut self.table, c, &p, &q, self.config.ref_mux_cap)?
                })),
                _ => {
                    return Err(EngErr(
                        "local holds a reference on one path and a plain value on the other"
                            .into(),
                    ))
                }
            };
            locals.push(m);
        }
        let mut unroll = a.unroll;
        for (k, v) in b.unroll {
            let e = unroll.entry(k).or_insert(0);
            *e = (*e).max(v);
        }
        Ok(PathState {
            path: pre_path,
            locals,
            unroll,
            alive: true,
        })
    }

    /// Account for a control-flow edge: bound back-edge traversals and
    /// reset inner-loop counters on forward entry.
    fn take_edge(
        &mut self,
        f: FuncId,
        ps: &mut PathState,
        from: BlockId,
        to: BlockId,
        span: &SourceSpan,
    ) -> Result<(), EngErr> {
        if self.is_back_edge(f, from, to) {
            let n = {
                let e = ps.unroll.entry((from.0, to.0)).or_insert(0);
                *e += 1;
                *e
            };
            self.stats.unrollings += 1;
            if n > self.config.max_unroll {
                let func = self.prog.function(f);
                return Err(EngErr(format!(
                    "unroll bound exceeded: loop edge {} -> {} in `{}` at {} ran {} times (max_unroll {})",
                    func.block_name(from),
                    func.block_name(to),
                    func.name,
                    span,
                    n,
                    self.config.max_unroll
                )));
            }
        } else {
            for k in self.back_edges_into(f, to) {
                ps.unroll.remove(&k);
            }
        }
        Ok(())
    }

    /// Can `path /\ assumptions /\ extra` be satisfied? Constant folding
    /// answers for free; otherwise the solver decides (unless configured
    /// interval-only, which over-approximates with "yes").
    fn feasible(&mut self, ps: &PathState, extra: TermId) -> Result<bool, EngErr> {
        if self.table.as_const_bool(extra) == Some(false)
            || self.table.as_const_bool(ps.path) == Some(false)
        {
            return Ok(false);
        }
        if self
            .assumptions
            .iter()
            .any(|&a| self.table.as_const_bool(a) == Some(false))
        {
            return Ok(false);
        }
        if self.config.feasibility == Feasibility::IntervalOnly {
            return Ok(true);
        }
        let mut conj = Vec::with_capacity(self.assumptions.len() + 2);
        conj.push(ps.path);
        conj.extend_from_slice(&self.assumptions);
        conj.push(extra);
        let fls = self.table.const_bool(false);
        let out = check_claim(&mut self.table, &conj, &[], fls, &self.config.solver)?;
        self.stats.feasibility_solver_calls += u64::from(out.stats.solver_calls);
        self.stats.cnf_vars += out.stats.vars;
        self.stats.cnf_clauses += out.stats.clauses;
        Ok(matches!(out.verdict, CheckVerdict::Counterexample(_)))
    }

    // ---- Operands and statements ----

    fn operand_value(&mut self, f: FuncId, ps: &PathState, op: &Operand) -> Result<Value, EngErr> {
        match op {
            Operand::Local(l) => ps.locals[l.0 as usize].clone().ok_or_else(|| {
                EngErr(format!(
                    "local `{}` read before assignment",
                    self.prog.function(f).local_name(*l)
                ))
            }),
            Operand::ConstBool(b) => Ok(Value::Term(self.table.const_bool(*b))),
            Operand::ConstBv { width, value } => {
                Ok(Value::Term(self.table.const_bv(*width, *value)?))
            }
            Operand::Unit => Ok(Value::Term(self.table.unit())),
        }
    }

    fn operand_term(&mut self, f: FuncId, ps: &PathState, op: &Operand) -> Result<TermId, EngErr> {
        match self.operand_value(f, ps, op)? {
            Value::Term(t) => Ok(t),
            Value::Ref(_) => Err(EngErr(
                "expected a first-class value, found a reference".into(),
            )),
        }
    }

    fn operand_ref(
        &mut self,
        f: FuncId,
        ps: &PathState,
        op: &Operand,
    ) -> Result<GuardedRef, EngErr> {
        match self.operand_value(f, ps, op)? {
            Value::Ref(r) => Ok(r),
            Value::Term(_) => Err(EngErr("expected a reference".into())),
        }
    }

    fn exec_stmt(&mut self, f: FuncId, ps: &mut PathState, stmt: &Stmt) -> Result<(), EngErr> {
        let span = &stmt.span;
        match &stmt.kind {
            StmtKind::Nop => {}
            StmtKind::Assign(dst, rv) => match self.eval_rvalue(f, ps, rv, span)? {
                Some(v) => ps.locals[dst.0 as usize] = Some(v),
                // The callee returns on no path; execution past the call
                // is unreachable.
                None => ps.alive = false,
            },
            StmtKind::Store(r, v) => {
                let rv = self.operand_ref(f, ps, r)?;
                let vv = self.operand_term(f, ps, v)?;
                // Index bounds along the path were claimed when each
                // `ref_index` was formed; the checks reported here
                // re-derive the same claims, so they are dropped.
                let _ = self.heap.write(&mut self.table, &rv, vv)?;
            }
            StmtKind::SymbolicIntro(dst, sort, name) => {
                let t = self.table.fresh_symbol(name, sort)?;
                self.intro_plan.push(IntroRecord {
                    name: name.clone(),
                    guard: ps.path,
                    term: t,
                });
                ps.locals[dst.0 as usize] = Some(Value::Term(t));
            }
            StmtKind::Assume(c) => {
                let cv = self.operand_term(f, ps, c)?;
                self.assumptions.push(cv);
                self.assume_events += 1;
            }
            StmtKind::Assert(c, m) => {
                let cv = self.operand_term(f, ps, c)?;
                self.emit(span, ObligationKind::Assert, assert_message(m), cv, ps.path);
            }
            StmtKind::EnableSpec(name) => {
                let summaries = self.summaries;
                let Some(s) = summaries.get(name) else {
                    return Err(EngErr(format!(
                        "enable_spec {name}: no verified summary for it is in scope"
                    )));
                };
                self.enabled.insert(s.target.clone(), name.clone());
            }
        }
        Ok(())
    }

    fn eval_rvalue(
        &mut self,
        f: FuncId,
        ps: &mut PathState,
        rv: &Rvalue,
        span: &SourceSpan,
    ) -> Result<Option<Value>, EngErr> {
        let v = match rv {
            Rvalue::Use(op) => self.operand_value(f, ps, op)?,
            Rvalue::UnOp(k, a) => {
                let av = self.operand_term(f, ps, a)?;
                let t = match k {
                    UnOpKind::Not => {
                        let opc = if self.table.sort_of(av) == &Sort::Bool {
                            Opcode::Not
                        } else {
                            Opcode::BvNot
                        };
                        self.table.mk(opc, &[av])?
                    }
                    UnOpKind::Neg => self.table.mk(Opcode::BvNeg, &[av])?,
                    UnOpKind::ZeroExtend(w) => self.table.mk(Opcode::BvZeroExtend(*w), &[av])?,
                    UnOpKind::Truncate(w) => self.table.mk(Opcode::BvTruncate(*w), &[av])?,
                };
                Value::Term(t)
            }
            Rvalue::BinOp(k, a, b) => {
                let av = self.operand_term(f, ps, a)?;
                let bv = self.operand_term(f, ps, b)?;
                if matches!(k, BinOpKind::UDiv | BinOpKind::URem) {
                    let w = self.bv_width(bv)?;
                    let zero = self.table.const_bv(w, 0)?;
                    let eqz = self.table.mk(Opcode::Eq, &[bv, zero])?;
                    let claim = self.not(eqz)?;
                    self.emit(
                        span,
                        ObligationKind::DivByZero,
                        div_message(*k).to_string(),
                        claim,
                        ps.path,
                    );
                }
                let t = match k {
                    BinOpKind::Add => self.table.mk(Opcode::BvAdd, &[av, bv])?,
                    BinOpKind::Sub => self.table.mk(Opcode::BvSub, &[av, bv])?,
                    BinOpKind::Mul => self.table.mk(Opcode::BvMul, &[av, bv])?,
                    BinOpKind::UDiv => self.table.mk(Opcode::BvUDiv, &[av, bv])?,
                    BinOpKind::URem => self.table.mk(Opcode::BvURem, &[av, bv])?,
                    BinOpKind::And | BinOpKind::Or | BinOpKind::Xor => {
                        let boolean = self.table.sort_of(av) == &Sort::Bool;
                        let opc = match (k, boolean) {
                            (BinOpKind::And, true) => Opcode::And,
                            (BinOpKind::And, false) => Opcode::BvAnd,
                            (BinOpKind::Or, true) => Opcode::Or,
                            (BinOpKind::Or, false) => Opcode::BvOr,
                            (_, true) => Opcode::Xor,
                            (_, false) => Opcode::BvXor,
                        };
                        self.table.mk(opc, &[av, bv])?
                    }
                    BinOpKind::Implies => self.table.mk(Opcode::Implies, &[av, bv])?,
                    BinOpKind::Shl => self.table.mk(Opcode::BvShl, &[av, bv])?,
                    BinOpKind::LShr => self.table.mk(Opcode::BvLShr, &[av, bv])?,
                    BinOpKind::Ult => self.table.mk(Opcode::BvULt, &[av, bv])?,
                    BinOpKind::Ule => self.table.mk(Opcode::BvULe, &[av, bv])?,
                    BinOpKind::Ugt => self.table.mk(Opcode::BvUGt, &[av, bv])?,
                    BinOpKind::Uge => self.table.mk(Opcode::BvUGe, &[av, bv])?,
                    BinOpKind::Slt => self.table.mk(Opcode::BvSLt, &[av, bv])?,
                    BinOpKind::Sle => self.table.mk(Opcode::BvSLe, &[av, bv])?,
                    BinOpKind::Eq => self.table.mk(Opcode::Eq, &[av, bv])?,
                    BinOpKind::Ne => {
                        let e = self.table.mk(Opcode::Eq, &[av, bv])?;
                        self.not(e)?
                    }
                    BinOpKind::Concat => self.table.mk(Opcode::BvConcat, &[av, bv])?,
                };
                Value::Term(t)
            }
            Rvalue::Checked(k, a, b) => {
                let av = self.operand_term(f, ps, a)?;
                let bv = self.operand_term(f, ps, b)?;
                let opc = match k {
                    CheckedKind::Add => Opcode::BvAdd,
                    CheckedKind::Sub => Opcode::BvSub,
                    CheckedKind::Mul => Opcode::BvMul,
                };
                let value = self.table.mk(opc, &[av, bv])?;
                // Width-preserving no-wrap claims (widening would overrun
                // the maximum width at 128 bits).
                let claim = match k {
                    CheckedKind::Add => self.table.mk(Opcode::BvUGe, &[value, av])?,
                    CheckedKind::Sub => self.table.mk(Opcode::BvUGe, &[av, bv])?,
                    CheckedKind::Mul => {
                        let w = self.bv_width(av)?;
                        let zero = self.table.const_bv(w, 0)?;
                        let b_zero = self.table.mk(Opcode::Eq, &[bv, zero])?;
                        let quot = self.table.mk(Opcode::BvUDiv, &[value, bv])?;
                        let back = self.table.mk(Opcode::Eq, &[quot, av])?;
                        self.table.mk(Opcode::Or, &[b_zero, back])?
                    }
                };
                self.emit(
                    span,
                    ObligationKind::Overflow,
                    overflow_message(*k),
                    claim,
                    ps.path,
                );
                Value::Term(value)
            }
            Rvalue::Aggregate(kind, ops) => {
                let mut kids = Vec::with_capacity(ops.len());
                for op in ops {
                    kids.push(self.operand_term(f, ps, op)?);
                }
                let t = match kind {
                    AggregateKind::Tuple => self.table.mk(Opcode::MkTuple, &kids)?,
                    AggregateKind::Array(e) => self.table.mk(Opcode::MkArray(e.clone()), &kids)?,
                    AggregateKind::Record(s) => {
                        self.table.mk(Opcode::MkRecord(s.clone()), &kids)?
                    }
                    AggregateKind::Variant(s, arm) => self.table.mk(
                        Opcode::MkVariant {
                            sort: s.clone(),
                            arm: *arm,
                        },
                        &kids,
                    )?,
                };
                Value::Term(t)
            }
            Rvalue::Project(a, sel) => {
                let av = self.operand_term(f, ps, a)?;
                let t = match sel {
                    Selector::Tuple(i) => self.table.mk(Opcode::TupleGet(*i), &[av])?,
                    Selector::Tag => self.table.mk(Opcode::VariantTag, &[av])?,
                    Selector::Named(n) => {
                        let opc = match self.table.sort_of(av) {
                            Sort::Record { fields, .. } => {
                                let i = fields
                                    .iter()
                                    .position(|(fname, _)| fname == n)
                                    .ok_or_else(|| EngErr(format!("no record field `{n}`")))?;
                                Opcode::RecordGet(i as u32)
                            }
                            Sort::Variant { arms, .. } => {
                                let i = arms
                                    .iter()
                                    .position(|(aname, _)| aname == n)
                                    .ok_or_else(|| EngErr(format!("no variant arm `{n}`")))?;
                                Opcode::VariantGet(i as u32)
                            }
                            other => {
                                return Err(EngErr(format!("cannot project `{n}` out of {other}")))
                            }
                        };
                        self.table.mk(opc, &[av])?
                    }
                };
                Value::Term(t)
            }
            Rvalue::Alloc(sort, init) => {
                let iv = self.operand_term(f, ps, init)?;
                let r = self.heap.alloc(&mut self.table, sort.clone(), iv)?;
                Value::Ref(r)
            }
            Rvalue::Load(r) => {
                let rv = self.operand_ref(f, ps, r)?;
                // Bounds for symbolic indices in the path were claimed at
                // reference formation; the read's checks duplicate them.
                let (t, _checks) = self.heap.read(&mut self.table, &rv)?;
                Value::Term(t)
            }
            Rvalue::RefProject(r, sel) => {
                let rv = self.operand_ref(f, ps, r)?;
                let psel = match sel {
                    RefSelector::Tuple(i) => PathSel::Field(*i),
                    RefSelector::Named(n) => {
                        let pointee = self.heap.pointee_sort(&rv)?;
                        match pointee {
                            Sort::Record { fields, .. } => {
                                let i = fields
                                    .iter()
                                    .position(|(fname, _)| fname == n)
                                    .ok_or_else(|| EngErr(format!("no record field `{n}`")))?;
                                PathSel::Field(i as u32)
                            }
                            other => {
                                return Err(EngErr(format!(
                                    "cannot take a field reference into {other}"
                                )))
                            }
                        }
                    }
                    RefSelector::Elem(idx) => {
                        let iv = self.operand_term(f, ps, idx)?;
                        let pointee = self.heap.pointee_sort(&rv)?;
                        let Sort::Array(_, len) = pointee else {
                            return Err(EngErr(format!(
                                "cannot take an element reference into {pointee}"
                            )));
                        };
                        let claim = self.bounds_claim(iv, len)?;
                        self.emit(
                            span,
                            ObligationKind::Bounds,
                            BOUNDS_MESSAGE.to_string(),
                            claim,
                            ps.path,
                        );
                        PathSel::Index(iv)
                    }
                };
                Value::Ref(self.heap.project(&self.table, &rv, &psel)?)
            }
            Rvalue::Index(a, i) => {
                let av = self.operand_term(f, ps, a)?;
                let iv = self.operand_term(f, ps, i)?;
                let len = match self.table.sort_of(av) {
                    Sort::Array(_, n) => *n,
                    other => return Err(EngErr(format!("cannot index into {other}"))),
                };
                let claim = self.bounds_claim(iv, len)?;
                self.emit(
                    span,
                    ObligationKind::Bounds,
                    BOUNDS_MESSAGE.to_string(),
                    claim,
                    ps.path,
                );
                Value::Term(self.table.mk(Opcode::ArrayGet, &[av, iv])?)
            }
            Rvalue::Call(name, args) => return self.exec_call(f, ps, name, args, span),
        };
        Ok(Some(v))
    }

    fn exec_call(
        &mut self,
        f: FuncId,
        ps: &mut PathState,
        name: &str,
        arg_ops: &[Operand],
        span: &SourceSpan,
    ) -> Result<Option<Value>, EngErr> {
        let mut args = Vec::with_capacity(arg_ops.len());
        for op in arg_ops {
            args.push(self.operand_value(f, ps, op)?);
        }

        // An enabled verified summary replaces the callee's body.
        if let Some(spec_name) = self.enabled.get(name).cloned() {
            let summaries = self.summaries;
            let s = summaries
                .get(&spec_name)
                .expect("enabled summaries are always present");
            let mut targs = Vec::with_capacity(args.len());
            for a in &args {
                match a {
                    Value::Term(t) => targs.push(*t),
                    Value::Ref(_) => {
                        return Err(EngErr(format!(
                            "summary `{spec_name}` cannot take a reference argument"
                        )))
                    }
                }
            }
            let pre = s
                .instantiate_precondition(&mut self.table, &targs)
                .map_err(EngErr)?;
            self.emit(
                span,
                ObligationKind::SpecPrecondition,
                spec_pre_message(&spec_name, name),
                pre,
                ps.path,
            );
            match &s.mode {
                SummaryMode::Substitution(g) => {
                    let gid = self.prog.func_id(g).ok_or_else(|| {
                        EngErr(format!("summary reference function `{g}` does not exist"))
                    })?;
                    return self.exec_function(gid, args, ps.path);
                }
                SummaryMode::General => {
                    let prog = self.prog;
                    let ret = prog
                        .func(name)
                        .expect("summarized callee exists")
                        .ret_sort
                        .clone();
                    let rname = spec_result_name(name);
                    let r = self.table.fresh_symbol(&rname, &ret)?;
                    self.intro_plan.push(IntroRecord {
                        name: rname,
                        guard: ps.path,
                        term: r,
                    });
                    let post = s
                        .instantiate_post(&mut self.table, &targs, r)
                        .map_err(EngErr)?;
                    self.assumptions.push(post);
                    self.assume_events += 1;
                    return Ok(Some(Value::Term(r)));
                }
            }
        }

        // During summary extraction the target call is recorded, not run.
        if self.extract_target.as_deref() == Some(name) {
            let mut targs = Vec::with_capacity(args.len());
            for a in &args {
                match a {
                    Value::Term(t) => targs.push(*t),
                    Value::Ref(_) => {
                        return Err(EngErr(format!(
                            "call to `{name}`: reference arguments cannot appear in a summary"
                        )))
                    }
                }
            }
            let prog = self.prog;
            let ret = prog
                .func(name)
                .ok_or_else(|| EngErr(format!("call to unknown function `{name}`")))?
                .ret_sort
                .clone();
            let rname = spec_result_name(name);
            let r = self.table.fresh_symbol(&rname, &ret)?;
            self.intro_plan.push(IntroRecord {
                name: rname,
                guard: ps.path,
                term: r,
            });
            self.intercepted.push(InterceptedCall {
                location: span.clone(),
                args: targs,
                result: r,
                guard: ps.path,
                assumptions_at_call: self.assumptions.clone(),
                obligations_before: self.obligations.len(),
                assume_events_before: self.assume_events,
            });
            return Ok(Some(Value::Term(r)));
        }

        let gid = self
            .prog
            .func_id(name)
            .ok_or_else(|| EngErr(format!("call to unknown function `{name}`")))?;
        self.exec_function(gid, args, ps.path)
    }

    // ---- Discharge and confirmation ----

    fn outcome(
        &mut self,
        test: &str,
        verdict: Verdict,
        obligations: Vec<ObligationReport>,
        trace: Vec<String>,
    ) -> TestOutcome {
        self.stats.terms_built = self.table.num_terms();
        self.stats.obligations = self.obligations.len();
        TestOutcome {
            test: test.to_string(),
            verdict,
            stats: self.stats,
            obligations,
            trace,
        }
    }

    pub(crate) fn finish(&mut self, test: &str, run: Result<(), EngErr>) -> TestOutcome {
        let mut reports: Vec<ObligationReport> = self
            .obligations
            .iter()
            .map(|o| ObligationReport {
                kind: o.kind,
                location: o.location.clone(),
                message: o.message.clone(),
                status: DischargeStatus::Skipped,
            })
            .collect();
        if let Err(e) = run {
            return self.outcome(test, Verdict::EngineError(e.0), reports, Vec::new());
        }

        let mut failed: Option<(usize, Model)> = None;
        for i in 0..self.obligations.len() {
            let (claim, context) = (self.obligations[i].claim, self.obligations[i].context);
            let out = match check_claim(
                &mut self.table,
                &self.assumptions,
                &[context],
                claim,
                &self.config.solver,
            ) {
                Ok(o) => o,
                Err(e) => {
                    let msg = format!(
                        "discharging {} at {} failed: {e}",
                        self.obligations[i].kind, self.obligations[i].location
                    );
                    return self.outcome(test, Verdict::EngineError(msg), reports, Vec::new());
                }
            };
            self.stats.discharge_solver_calls += u64::from(out.stats.solver_calls);
            self.stats.cnf_vars += out.stats.vars;
            self.stats.cnf_clauses += out.stats.clauses;
            match out.verdict {
                CheckVerdict::Valid => reports[i].status = DischargeStatus::Valid,
                CheckVerdict::Counterexample(m) => {
                    reports[i].status = DischargeStatus::Refuted;
                    failed = Some((i, m));
                    break;
                }
            }
        }

        if let Some((i, model)) = failed {
            return match self.confirm(test, &model, i) {
                Ok(trace) => {
                    let failed_report = reports[i].clone();
                    self.outcome(
                        test,
                        Verdict::Refuted {
                            model,
                            failed: failed_report,
                        },
                        reports,
                        trace,
                    )
                }
                Err(detail) => self.outcome(test, Verdict::EngineError(detail), reports, Vec::new()),
            };
        }

        // All obligations hold; distinguish proof from vacuity.
        let fls = self.table.const_bool(false);
        let vac = match check_claim(&mut self.table, &self.assumptions, &[], fls, &self.config.solver)
        {
            Ok(o) => o,
            Err(e) => {
                let msg = format!("assumption satisfiability check failed: {e}");
                return self.outcome(test, Verdict::EngineError(msg), reports, Vec::new());
            }
        };
        self.stats.discharge_solver_calls += u64::from(vac.stats.solver_calls);
        self.stats.cnf_vars += vac.stats.vars;
        self.stats.cnf_clauses += vac.stats.clauses;
        let verdict = match vac.verdict {
            // `false` holds under the assumptions: they are unsatisfiable.
            CheckVerdict::Valid => Verdict::Vacuous,
            CheckVerdict::Counterexample(_) => Verdict::Proven,
        };
        self.outcome(test, verdict, reports, Vec::new())
    }

    /// Re-run the test concretely under the solver model and check that
    /// the same obligation fires. Returns the replay trace on success and
    /// a diagnostic on mismatch (a mismatch means an engine bug, reported
    /// as such rather than as a refutation).
    fn confirm(&self, test: &str, model: &Model, failing: usize) -> Result<Vec<String>, String> {
        let mut env = Env::new();
        for (i, info) in self.table.symbols().iter().enumerate() {
            let v = model
                .get(&info.name, info.ordinal)
                .cloned()
                .unwrap_or_else(|| ConcreteValue::default_of(&info.sort));
            env.bind(SymbolId(i as u32), v);
        }
        let mut rm = ReplayModel::new();
        for rec in &self.intro_plan {
            let guard = self
                .table
                .eval(rec.guard, &env)
                .map_err(|e: EvalError| format!("replay model construction failed: {e}"))?;
            if guard != ConcreteValue::Bool(true) {
                continue;
            }
            let v = self
                .table
                .eval(rec.term, &env)
                .map_err(|e: EvalError| format!("replay model construction failed: {e}"))?;
            rm.push(&rec.name, v);
        }
        let ob = &self.obligations[failing];
        let (out, trace) = replay_with(self.prog, test, &rm, Some(self.summaries), self.config.trace);
        match out {
            ReplayOutcome::Fired { kind, location, .. }
                if kind == ob.kind && location == ob.location =>
            {
                Ok(trace)
            }
            other => Err(format!(
                "counterexample failed replay confirmation: engine refuted {} at {}, replay reported {:?}",
                ob.kind, ob.location, other
            )),
        }
    }
}

// ---- Entry points ----------------------------------------------------------

/// Execute one parameterless entry point and discharge its obligations.
pub fn run_test(prog: &Program, test: &str, summaries: &SummaryMap, config: &Config) -> TestOutcome {
    let mut eng = Engine::new(prog, summaries, config.clone());
    let run = (|| -> Result<(), EngErr> {
        let fid = prog
            .func_id(test)
            .ok_or_else(|| EngErr(format!("no function named `{test}`")))?;
        let func = prog.function(fid);
        if !func.params.is_empty() {
            return Err(EngErr(format!("test `{test}` must not take parameters")));
        }
        let tr = eng.table.const_bool(true);
        eng.exec_function(fid, Vec::new(), tr)?;
        Ok(())
    })();
    eng.finish(test, run)
}

/// Raw material of one specification-function run, used to verify a spec
/// and to extract its summary.
pub(crate) struct SpecRun {
    /// `None` in extraction mode (extraction does not discharge).
    pub(crate) outcome: Option<TestOutcome>,
    pub(crate) table: TermTable,
    /// Fresh symbols standing for the spec's parameters, in order.
    pub(crate) formals: Vec<TermId>,
    pub(crate) intercepted: Vec<InterceptedCall>,
    pub(crate) assumptions: Vec<TermId>,
    pub(crate) obligations: Vec<Obligation>,
    /// Total assumption events over the whole run.
    pub(crate) assume_events: u64,
}

/// Run a `spec_for` function on fresh symbolic parameters. With
/// `extract` set, calls to its target are recorded instead of executed
/// and no obligations are discharged.
pub(crate) fn run_spec(
    prog: &Program,
    spec_fn: &str,
    summaries: &SummaryMap,
    config: &Config,
    extract: bool,
) -> Result<SpecRun, String> {
    let fid = prog
        .func_id(spec_fn)
        .ok_or_else(|| format!("no function named `{spec_fn}`"))?;
    let func = prog.function(fid);
    let target = func
        .spec_target()
        .ok_or_else(|| format!("`{spec_fn}` is not a specification function"))?
        .to_string();
    let mut eng = Engine::new(prog, summaries, config.clone());
    if extract {
        eng.extract_target = Some(target);
    }
    let tr = eng.table.const_bool(true);
    let mut formals = Vec::new();
    let mut args = Vec::new();
    for p in &func.params {
        let t = eng
            .table
            .fresh_symbol(&p.name, &p.sort)
            .map_err(|e| format!("parameter `{}`: {e}", p.name))?;
        eng.intro_plan.push(IntroRecord {
            name: p.name.clone(),
            guard: tr,
            term: t,
        });
        formals.push(t);
        args.push(Value::Term(t));
    }
    let run = eng.exec_function(fid, args, tr).map(|_| ());
    let outcome = if extract {
        if let Err(e) = run {
            return Err(format!("extraction run failed: {}", e.0));
        }
        None
    } else {
        Some(eng.finish(spec_fn, run))
    };
    Ok(SpecRun {
        outcome,
        table: eng.table,
        formals,
        intercepted: eng.intercepted,
        assumptions: eng.assumptions,
        obligations: eng.obligations,
        assume_events: eng.assume_events,
    })
}

// ---- Concrete replay -------------------------------------------------------

/// Queue-based input source for [`concrete_replay`]: the k-th executed
/// `symbolic` statement (or havoced summary result, or entry parameter)
/// named `n` receives the k-th value queued under `n`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReplayModel {
    queues: BTreeMap<String, VecDeque<ConcreteValue>>,
}

impl ReplayModel {
    pub fn new() -> ReplayModel {
        ReplayModel::default()
    }

    pub fn push(&mut self, name: &str, v: ConcreteValue) {
        self.queues.entry(name.to_string()).or_default().push_back(v);
    }
}

/// What a concrete replay observed.
#[derive(Clone, PartialEq, Debug)]
pub enum ReplayOutcome {
    /// The run completed without any fault firing.
    Passed,
    /// The first fault on the concrete path.
    Fired {
        kind: ObligationKind,
        location: SourceSpan,
        message: String,
    },
    /// An `assume` (or an assumed summary relation) evaluated to false:
    /// the model does not describe a real execution.
    ModelInconsistent { location: SourceSpan, detail: String },
    /// The replay could not proceed (missing model value, step budget,
    /// malformed program).
    Error(String),
}

/// Deterministic concrete interpretation of `entry` under `model`,
/// executing every callee's real body (summaries ignored).
pub fn concrete_replay(prog: &Program, entry: &str, model: &ReplayModel) -> ReplayOutcome {
    replay_with(prog, entry, model, None, false).0
}

/// Concrete interpretation with optional summary faithfulness: when
/// `summaries` is given, calls whose target has an enabled spec check the
/// summary's precondition, and general summaries consume a havoced result
/// from the model instead of running the callee.
pub fn replay_with(
    prog: &Program,
    entry: &str,
    model: &ReplayModel,
    summaries: Option<&SummaryMap>,
    want_trace: bool,
) -> (ReplayOutcome, Vec<String>) {
    let mut r = Replayer {
        prog,
        queues: model.queues.clone(),
        summaries,
        enabled: BTreeMap::new(),
        heap: Vec::new(),
        steps: 0,
        depth: 0,
        trace: Vec::new(),
        want_trace,
    };
    let out = match r.run_entry(entry) {
        Ok(_) => ReplayOutcome::Passed,
        Err(Stop::Fired {
            kind,
            location,
            message,
        }) => ReplayOutcome::Fired {
            kind,
            location,
            message,
        },
        Err(Stop::Inconsistent { location, detail }) => {
            ReplayOutcome::ModelInconsistent { location, detail }
        }
        Err(Stop::Error(e)) => ReplayOutcome::Error(e),
    };
    (out, r.trace)
}

enum Stop {
    Fired {
        kind: ObligationKind,
        location: SourceSpan,
        message: String,
    },
    Inconsistent {
        location: SourceSpan,
        detail: String,
    },
    Error(String),
}

/// Concrete counterpart of a guarded reference: one allocation plus a
/// projection path whose array indices were bounds-checked when formed.
#[derive(Clone, PartialEq, Debug)]
struct CRef {
    alloc: usize,
    path: Vec<CSel>,
}

#[derive(Clone, PartialEq, Debug)]
enum CSel {
    Field(u32),
    Index(usize),
}

#[derive(Clone, PartialEq, Debug)]
enum CVal {
    V(ConcreteValue),
    R(CRef),
}

fn show_cval(v: &CVal) -> String {
    match v {
        CVal::V(c) => c.to_string(),
        CVal::R(r) => {
            let mut s = format!("ref @{}", r.alloc);
            for sel in &r.path {
                match sel {
                    CSel::Field(i) => s.push_str(&format!(".{i}")),
                    CSel::Index(i) => s.push_str(&format!("[{i}]")),
                }
            }
            s
        }
    }
}

/// Structural conformance of a model value to a sort.
fn value_fits(v: &ConcreteValue, s: &Sort) -> bool {
    match (v, s) {
        (ConcreteValue::Bool(_), Sort::Bool) => true,
        (ConcreteValue::Bv { width, value }, Sort::BitVec(w)) => width == w && *value <= mask(*w),
        (ConcreteValue::Unit, Sort::Unit) => true,
        (ConcreteValue::Array(vs), Sort::Array(e, n)) => {
            vs.len() == *n && vs.iter().all(|x| value_fits(x, e))
        }
        (ConcreteValue::Tuple(vs), Sort::Tuple(ss)) => {
            vs.len() == ss.len() && vs.iter().zip(ss).all(|(x, t)| value_fits(x, t))
        }
        (ConcreteValue::Record(vs), Sort::Record { fields, .. }) => {
            vs.len() == fields.len() && vs.iter().zip(fields).all(|(x, (_, t))| value_fits(x, t))
        }
        (ConcreteValue::Variant { arm, payload }, Sort::Variant { arms, .. }) => {
            (*arm as usize) < arms.len() && value_fits(payload, &arms[*arm as usize].1)
        }
        _ => false,
    }
}

fn read_at<'v>(v: &'v ConcreteValue, path: &[CSel]) -> Option<&'v ConcreteValue> {
    let mut cur = v;
    for sel in path {
        cur = match (cur, sel) {
            (ConcreteValue::Tuple(vs) | ConcreteValue::Record(vs), CSel::Field(i)) => {
                vs.get(*i as usize)?
            }
            (ConcreteValue::Array(vs), CSel::Index(i)) => vs.get(*i)?,
            _ => return None,
        };
    }
    Some(cur)
}

fn write_at(v: &mut ConcreteValue, path: &[CSel], new: ConcreteValue) -> Option<()> {
    if path.is_empty() {
        *v = new;
        return Some(());
    }
    let next = match (v, &path[0]) {
        (ConcreteValue::Tuple(vs) | ConcreteValue::Record(vs), CSel::Field(i)) => {
            vs.get_mut(*i as usize)?
        }
        (ConcreteValue::Array(vs), CSel::Index(i)) => vs.get_mut(*i)?,
        _ => return None,
    };
    write_at(next, &path[1..], new)
}

fn csort_at<'s>(mut s: &'s Sort, path: &[CSel]) -> Option<&'s Sort> {
    for sel in path {
        s = match (s, sel) {
            (Sort::Tuple(fs), CSel::Field(i)) => fs.get(*i as usize)?,
            (Sort::Record { fields, .. }, CSel::Field(i)) => &fields.get(*i as usize)?.1,
            (Sort::Array(e, _), CSel::Index(_)) => e,
            _ => return None,
        };
    }
    Some(s)
}

const REPLAY_STEP_BUDGET: u64 = 4_000_000;
const REPLAY_DEPTH_BUDGET: u32 = 512;

struct Replayer<'a> {
    prog: &'a Program,
    queues: BTreeMap<String, VecDeque<ConcreteValue>>,
    summaries: Option<&'a SummaryMap>,
    enabled: BTreeMap<String, String>,
    heap: Vec<(Sort, ConcreteValue)>,
    steps: u64,
    depth: u32,
    trace: Vec<String>,
    want_trace: bool,
}

impl<'a> Replayer<'a> {
    fn pop(&mut self, name: &str, sort: &Sort, span: &SourceSpan) -> Result<ConcreteValue, Stop> {
        let v = self
            .queues
            .get_mut(name)
            .and_then(|q| q.pop_front())
            .ok_or_else(|| {
                Stop::Error(format!("replay model has no value left for `{name}` at {span}"))
            })?;
        if !value_fits(&v, sort) {
            return Err(Stop::Error(format!(
                "replay model value for `{name}` does not fit sort {sort}"
            )));
        }
        Ok(v)
    }

    fn step(&mut self, span: &SourceSpan) -> Result<(), Stop> {
        self.steps += 1;
        if self.steps > REPLAY_STEP_BUDGET {
            return Err(Stop::Error(format!("replay step budget exhausted at {span}")));
        }
        Ok(())
    }

    fn run_entry(&mut self, name: &str) -> Result<CVal, Stop> {
        let f = self
            .prog
            .func(name)
            .ok_or_else(|| Stop::Error(format!("no function named `{name}`")))?;
        let mut args = Vec::new();
        for p in &f.params {
            if matches!(p.sort, Sort::Ref(_)) {
                return Err(Stop::Error(format!(
                    "entry parameter `{}` is a reference",
                    p.name
                )));
            }
            let v = self.pop(&p.name, &p.sort, &f.span)?;
            args.push(CVal::V(v));
        }
        self.run_fn(f, args)
    }

    fn run_fn(&mut self, f: &'a Function, args: Vec<CVal>) -> Result<CVal, Stop> {
        self.depth += 1;
        if self.depth > REPLAY_DEPTH_BUDGET {
            return Err(Stop::Error(format!(
                "replay call depth exceeded in `{}`",
                f.name
            )));
        }
        let r = self.run_body(f, args);
        self.depth -= 1;
        r
    }

    fn run_body(&mut self, f: &'a Function, args: Vec<CVal>) -> Result<CVal, Stop> {
        let mut locals: Vec<Option<CVal>> = vec![None; f.locals.len()];
        for (i, a) in args.into_iter().enumerate() {
            locals[i] = Some(a);
        }
        let mut cur = BlockId(0);
        loop {
            let b = &f.blocks[cur.0 as usize];
            for stmt in &b.stmts {
                self.step(&stmt.span)?;
                self.stmt(f, &mut locals, stmt)?;
            }
            let span = &b.term.span;
            self.step(span)?;
            match &b.term.kind {
                TermKind::Goto(t) => cur = *t,
                TermKind::Branch(c, t, e) => {
                    cur = if self.operand_bool(f, &locals, c, span)? {
                        *t
                    } else {
                        *e
                    };
                }
                TermKind::Return(op) => return self.operand(f, &locals, op, span),
                TermKind::Panic(m) => {
                    return Err(Stop::Fired {
                        kind: ObligationKind::Panic,
                        location: span.clone(),
                        message: m.clone(),
                    })
                }
                TermKind::Unreachable => {
                    return Err(Stop::Fired {
                        kind: ObligationKind::Unreachable,
                        location: span.clone(),
                        message: UNREACHABLE_MESSAGE.to_string(),
                    })
                }
            }
        }
    }

    fn operand(
        &self,
        f: &Function,
        locals: &[Option<CVal>],
        op: &Operand,
        span: &SourceSpan,
    ) -> Result<CVal, Stop> {
        match op {
            Operand::Local(l) => locals[l.0 as usize].clone().ok_or_else(|| {
                Stop::Error(format!(
                    "local `{}` read before assignment at {span}",
                    f.local_name(*l)
                ))
            }),
            Operand::ConstBool(b) => Ok(CVal::V(ConcreteValue::Bool(*b))),
            Operand::ConstBv { width, value } => Ok(CVal::V(ConcreteValue::bv(*width, *value))),
            Operand::Unit => Ok(CVal::V(ConcreteValue::Unit)),
        }
    }

    fn operand_v(
        &self,
        f: &Function,
        locals: &[Option<CVal>],
        op: &Operand,
        span: &SourceSpan,
    ) -> Result<ConcreteValue, Stop> {
        match self.operand(f, locals, op, span)? {
            CVal::V(v) => Ok(v),
            CVal::R(_) => Err(Stop::Error(format!(
                "expected a plain value, found a reference at {span}"
            ))),
        }
    }

    fn operand_bool(
        &self,
        f: &Function,
        locals: &[Option<CVal>],
        op: &Operand,
        span: &SourceSpan,
    ) -> Result<bool, Stop> {
        match self.operand_v(f, locals, op, span)? {
            ConcreteValue::Bool(b) => Ok(b),
            other => Err(Stop::Error(format!("expected a bool, got {other} at {span}"))),
        }
    }

    fn operand_bv(
        &self,
        f: &Function,
        locals: &[Option<CVal>],
        op: &Operand,
        span: &SourceSpan,
    ) -> Result<(u32, u128), Stop> {
        match self.operand_v(f, locals, op, span)? {
            ConcreteValue::Bv { width, value } => Ok((width, value)),
            other => Err(Stop::Error(format!(
                "expected a bitvector, got {other} at {span}"
            ))),
        }
    }

    fn operand_ref(
        &self,
        f: &Function,
        locals: &[Option<CVal>],
        op: &Operand,
        span: &SourceSpan,
    ) -> Result<CRef, Stop> {
        match self.operand(f, locals, op, span)? {
            CVal::R(r) => Ok(r),
            CVal::V(_) => Err(Stop::Error(format!("expected a reference at {span}"))),
        }
    }

    fn ref_pointee(&self, r: &CRef, span: &SourceSpan) -> Result<Sort, Stop> {
        let (base, _) = self
            .heap
            .get(r.alloc)
            .ok_or_else(|| Stop::Error(format!("dangling reference at {span}")))?;
        csort_at(base, &r.path)
            .cloned()
            .ok_or_else(|| Stop::Error(format!("reference path does not fit its allocation at {span}")))
    }

    fn read_ref(&self, r: &CRef, span: &SourceSpan) -> Result<ConcreteValue, Stop> {
        let (_, root) = self
            .heap
            .get(r.alloc)
            .ok_or_else(|| Stop::Error(format!("dangling reference at {span}")))?;
        read_at(root, &r.path)
            .cloned()
            .ok_or_else(|| Stop::Error(format!("reference path does not fit its value at {span}")))
    }

    fn write_ref(&mut self, r: &CRef, new: ConcreteValue, span: &SourceSpan) -> Result<(), Stop> {
        let (_, root) = self
            .heap
            .get_mut(r.alloc)
            .ok_or_else(|| Stop::Error(format!("dangling reference at {span}")))?;
        write_at(root, &r.path, new)
            .ok_or_else(|| Stop::Error(format!("reference path does not fit its value at {span}")))
    }

    fn stmt(
        &mut self,
        f: &'a Function,
        locals: &mut Vec<Option<CVal>>,
        stmt: &Stmt,
    ) -> Result<(), Stop> {
        let span = &stmt.span;
        match &stmt.kind {
            StmtKind::Nop => {}
            StmtKind::Assign(dst, rv) => {
                let v = self.rvalue(f, locals, rv, span)?;
                if self.want_trace {
                    self.trace
                        .push(format!("{span}: {} = {}", f.local_name(*dst), show_cval(&v)));
                }
                locals[dst.0 as usize] = Some(v);
            }
            StmtKind::Store(r, v) => {
                let rf = self.operand_ref(f, locals, r, span)?;
                let vv = self.operand_v(f, locals, v, span)?;
                if self.want_trace {
                    self.trace
                        .push(format!("{span}: store {} <- {}", show_cval(&CVal::R(rf.clone())), vv));
                }
                self.write_ref(&rf, vv, span)?;
            }
            StmtKind::SymbolicIntro(dst, sort, name) => {
                let v = self.pop(name, sort, span)?;
                if self.want_trace {
                    self.trace.push(format!(
                        "{span}: {} = {v} (model input `{name}`)",
                        f.local_name(*dst)
                    ));
                }
                locals[dst.0 as usize] = Some(CVal::V(v));
            }
            StmtKind::Assume(c) => {
                if !self.operand_bool(f, locals, c, span)? {
                    return Err(Stop::Inconsistent {
                        location: span.clone(),
                        detail: "assumption evaluated to false".to_string(),
                    });
                }
            }
            StmtKind::Assert(c, m) => {
                if !self.operand_bool(f, locals, c, span)? {
                    return Err(Stop::Fired {
                        kind: ObligationKind::Assert,
                        location: span.clone(),
                        message: assert_message(m),
                    });
                }
            }
            StmtKind::EnableSpec(name) => {
                if let Some(summaries) = self.summaries {
                    let s = summaries.get(name).ok_or_else(|| {
                        Stop::Error(format!("enable_spec {name}: no verified summary"))
                    })?;
                    self.enabled.insert(s.target.clone(), name.clone());
                }
            }
        }
        Ok(())
    }

    fn rvalue(
        &mut self,
        f: &'a Function,
        locals: &mut Vec<Option<CVal>>,
        rv: &Rvalue,
        span: &SourceSpan,
    ) -> Result<CVal, Stop> {
        match rv {
            Rvalue::Use(op) => self.operand(f, locals, op, span),
            Rvalue::UnOp(k, a) => {
                let v = self.operand_v(f, locals, a, span)?;
                let out = match (k, v) {
                    (UnOpKind::Not, ConcreteValue::Bool(b)) => ConcreteValue::Bool(!b),
                    (UnOpKind::Not, ConcreteValue::Bv { width, value }) => {
                        ConcreteValue::bv(width, !value)
                    }
                    (UnOpKind::Neg, ConcreteValue::Bv { width, value }) => {
                        ConcreteValue::bv(width, value.wrapping_neg())
                    }
                    (UnOpKind::ZeroExtend(w), ConcreteValue::Bv { value, .. }) => {
                        ConcreteValue::bv(*w, value)
                    }
                    (UnOpKind::Truncate(w), ConcreteValue::Bv { value, .. }) => {
                        ConcreteValue::bv(*w, value)
                    }
                    _ => {
                        return Err(Stop::Error(format!(
                            "ill-sorted unary operation at {span}"
                        )))
                    }
                };
                Ok(CVal::V(out))
            }
            Rvalue::BinOp(k, a, b) => {
                let av = self.operand_v(f, locals, a, span)?;
                let bv = self.operand_v(f, locals, b, span)?;
                if matches!(k, BinOpKind::UDiv | BinOpKind::URem) {
                    if let ConcreteValue::Bv { value: 0, .. } = bv {
                        return Err(Stop::Fired {
                            kind: ObligationKind::DivByZero,
                            location: span.clone(),
                            message: div_message(*k).to_string(),
                        });
                    }
                }
                bin_op(*k, av, bv, span).map(CVal::V)
            }
            Rvalue::Checked(k, a, b) => {
                let (w, x) = self.operand_bv(f, locals, a, span)?;
                let (_, y) = self.operand_bv(f, locals, b, span)?;
                let overflow = match k {
                    CheckedKind::Add => match x.checked_add(y) {
                        None => true,
                        Some(s) => s > mask(w),
                    },
                    CheckedKind::Sub => x < y,
                    CheckedKind::Mul => match x.checked_mul(y) {
                        None => true,
                        Some(p) => p > mask(w),
                    },
                };
                if overflow {
                    return Err(Stop::Fired {
                        kind: ObligationKind::Overflow,
                        location: span.clone(),
                        message: overflow_message(*k),
                    });
                }
                let raw = match k {
                    CheckedKind::Add => x.wrapping_add(y),
                    CheckedKind::Sub => x.wrapping_sub(y),
                    CheckedKind::Mul => x.wrapping_mul(y),
                };
                Ok(CVal::V(ConcreteValue::bv(w, raw)))
            }
            Rvalue::Aggregate(kind, ops) => {
                let mut vs = Vec::with_capacity(ops.len());
                for op in ops {
                    vs.push(self.operand_v(f, locals, op, span)?);
                }
                let out = match kind {
                    AggregateKind::Tuple => ConcreteValue::Tuple(vs),
                    AggregateKind::Array(_) => ConcreteValue::Array(vs),
                    AggregateKind::Record(_) => ConcreteValue::Record(vs),
                    AggregateKind::Variant(_, arm) => ConcreteValue::Variant {
                        arm: *arm,
                        payload: Box::new(vs.pop().ok_or_else(|| {
                            Stop::Error(format!("variant construction without payload at {span}"))
                        })?),
                    },
                };
                Ok(CVal::V(out))
            }
            Rvalue::Project(a, sel) => {
                let v = self.operand_v(f, locals, a, span)?;
                let s = operand_sort(f, a);
                let out = match (sel, &v) {
                    (Selector::Tuple(i), ConcreteValue::Tuple(vs)) => vs
                        .get(*i as usize)
                        .cloned()
                        .ok_or_else(|| Stop::Error(format!("no tuple field {i} at {span}")))?,
                    (Selector::Tag, ConcreteValue::Variant { arm, .. }) => {
                        ConcreteValue::bv(TAG_WIDTH, u128::from(*arm))
                    }
                    (Selector::Named(n), ConcreteValue::Record(vs)) => {
                        let Sort::Record { fields, .. } = &s else {
                            return Err(Stop::Error(format!("ill-sorted projection at {span}")));
                        };
                        let i = fields
                            .iter()
                            .position(|(fname, _)| fname == n)
                            .ok_or_else(|| Stop::Error(format!("no record field `{n}` at {span}")))?;
                        vs[i].clone()
                    }
                    (Selector::Named(n), ConcreteValue::Variant { arm, payload }) => {
                        let Sort::Variant { arms, .. } = &s else {
                            return Err(Stop::Error(format!("ill-sorted projection at {span}")));
                        };
                        let i = arms
                            .iter()
                            .position(|(aname, _)| aname == n)
                            .ok_or_else(|| Stop::Error(format!("no variant arm `{n}` at {span}")))?;
                        if *arm == i as u32 {
                            (**payload).clone()
                        } else {
                            // Wrong-arm reads yield the requested arm's
                            // default (callers branch on the tag first).
                            ConcreteValue::default_of(&arms[i].1)
                        }
                    }
                    _ => return Err(Stop::Error(format!("ill-sorted projection at {span}"))),
                };
                Ok(CVal::V(out))
            }
            Rvalue::Alloc(sort, init) => {
                let v = self.operand_v(f, locals, init, span)?;
                self.heap.push((sort.clone(), v));
                Ok(CVal::R(CRef {
                    alloc: self.heap.len() - 1,
                    path: Vec::new(),
                }))
            }
            Rvalue::Load(r) => {
                let rf = self.operand_ref(f, locals, r, span)?;
                Ok(CVal::V(self.read_ref(&rf, span)?))
            }
            Rvalue::RefProject(r, sel) => {
                let mut rf = self.operand_ref(f, locals, r, span)?;
                let pointee = self.ref_pointee(&rf, span)?;
                match sel {
                    RefSelector::Tuple(i) => rf.path.push(CSel::Field(*i)),
                    RefSelector::Named(n) => {
                        let Sort::Record { fields, .. } = &pointee else {
                            return Err(Stop::Error(format!(
                                "cannot take a field reference into {pointee} at {span}"
                            )));
                        };
                        let i = fields
                            .iter()
                            .position(|(fname, _)| fname == n)
                            .ok_or_else(|| Stop::Error(format!("no record field `{n}` at {span}")))?;
                        rf.path.push(CSel::Field(i as u32));
                    }
                    RefSelector::Elem(iop) => {
                        let (_, idx) = self.operand_bv(f, locals, iop, span)?;
                        let Sort::Array(_, len) = &pointee else {
                            return Err(Stop::Error(format!(
                                "cannot take an element reference into {pointee} at {span}"
                            )));
                        };
                        if idx >= *len as u128 {
                            return Err(Stop::Fired {
                                kind: ObligationKind::Bounds,
                                location: span.clone(),
                                message: BOUNDS_MESSAGE.to_string(),
                            });
                        }
                        rf.path.push(CSel::Index(idx as usize));
                    }
                }
                Ok(CVal::R(rf))
            }
            Rvalue::Index(a, i) => {
                let v = self.operand_v(f, locals, a, span)?;
                let (_, idx) = self.operand_bv(f, locals, i, span)?;
                let ConcreteValue::Array(vs) = v else {
                    return Err(Stop::Error(format!("cannot index into a non-array at {span}")));
                };
                if idx >= vs.len() as u128 {
                    return Err(Stop::Fired {
                        kind: ObligationKind::Bounds,
                        location: span.clone(),
                        message: BOUNDS_MESSAGE.to_string(),
                    });
                }
                Ok(CVal::V(vs[idx as usize].clone()))
            }
            Rvalue::Call(name, args) => self.call(f, locals, name, args, span),
        }
    }

    fn call(
        &mut self,
        f: &'a Function,
        locals: &mut Vec<Option<CVal>>,
        name: &str,
        arg_ops: &[Operand],
        span: &SourceSpan,
    ) -> Result<CVal, Stop> {
        let mut args = Vec::with_capacity(arg_ops.len());
        for op in arg_ops {
            args.push(self.operand(f, locals, op, span)?);
        }
        if let Some(spec_name) = self.enabled.get(name).cloned() {
            let summaries = self.summaries.expect("enabled implies summaries");
            let s = summaries.get(&spec_name).expect("enabled spec is present");
            let mut cargs = Vec::with_capacity(args.len());
            for a in &args {
                match a {
                    CVal::V(v) => cargs.push(v.clone()),
                    CVal::R(_) => {
                        return Err(Stop::Error(format!(
                            "summary `{spec_name}` cannot take a reference argument"
                        )))
                    }
                }
            }
            let mut env = Env::new();
            for (formal, v) in s.formals.iter().zip(&cargs) {
                compose::bind_concrete(&s.table, *formal, v, &mut env).map_err(Stop::Error)?;
            }
            let pre = s
                .table
                .eval(s.precondition, &env)
                .map_err(|e| Stop::Error(format!("summary precondition evaluation failed: {e}")))?;
            if pre != ConcreteValue::Bool(true) {
                return Err(Stop::Fired {
                    kind: ObligationKind::SpecPrecondition,
                    location: span.clone(),
                    message: spec_pre_message(&spec_name, name),
                });
            }
            match &s.mode {
                SummaryMode::Substitution(g) => {
                    let gf = self.prog.func(g).ok_or_else(|| {
                        Stop::Error(format!("summary reference function `{g}` does not exist"))
                    })?;
                    return self.run_fn(gf, args);
                }
                SummaryMode::General => {
                    let ret = &self
                        .prog
                        .func(name)
                        .ok_or_else(|| Stop::Error(format!("call to unknown function `{name}`")))?
                        .ret_sort;
                    let r = self.pop(&spec_result_name(name), ret, span)?;
                    let mut env2 = env;
                    compose::bind_concrete(&s.table, s.result, &r, &mut env2)
                        .map_err(Stop::Error)?;
                    let post = s.table.eval(s.post_relation, &env2).map_err(|e| {
                        Stop::Error(format!("summary relation evaluation failed: {e}"))
                    })?;
                    if post != ConcreteValue::Bool(true) {
                        return Err(Stop::Inconsistent {
                            location: span.clone(),
                            detail: format!(
                                "assumed relation of `{spec_name}` does not hold for the model value"
                            ),
                        });
                    }
                    return Ok(CVal::V(r));
                }
            }
        }
        let g = self
            .prog
            .func(name)
            .ok_or_else(|| Stop::Error(format!("call to unknown function `{name}`")))?;
        self.run_fn(g, args)
    }
}

fn bin_op(
    k: BinOpKind,
    a: ConcreteValue,
    b: ConcreteValue,
    span: &SourceSpan,
) -> Result<ConcreteValue, Stop> {
    use ConcreteValue::{Bool, Bv};
    let out = match (k, &a, &b) {
        (BinOpKind::Eq, _, _) => Bool(a == b),
        (BinOpKind::Ne, _, _) => Bool(a != b),
        (BinOpKind::And, Bool(x), Bool(y)) => Bool(*x && *y),
        (BinOpKind::Or, Bool(x), Bool(y)) => Bool(*x || *y),
        (BinOpKind::Xor, Bool(x), Bool(y)) => Bool(x != y),
        (BinOpKind::Implies, Bool(x), Bool(y)) => Bool(!x || *y),
        (
            BinOpKind::Concat,
            Bv {
                width: wa,
                value: x,
            },
            Bv {
                width: wb,
                value: y,
            },
        ) => ConcreteValue::bv(wa + wb, (x << wb) | y),
        (
            k,
            Bv {
                width: wa,
                value: x,
            },
            Bv { value: y, .. },
        ) => {
            let (w, x, y) = (*wa, *x, *y);
            match k {
                BinOpKind::Add => ConcreteValue::bv(w, x.wrapping_add(y)),
                BinOpKind::Sub => ConcreteValue::bv(w, x.wrapping_sub(y)),
                BinOpKind::Mul => ConcreteValue::bv(w, x.wrapping_mul(y)),
                // Zero divisors fire before evaluation reaches here.
                BinOpKind::UDiv => ConcreteValue::bv(w, x / y),
                BinOpKind::URem => ConcreteValue::bv(w, x % y),
                BinOpKind::And => ConcreteValue::bv(w, x & y),
                BinOpKind::Or => ConcreteValue::bv(w, x | y),
                BinOpKind::Xor => ConcreteValue::bv(w, x ^ y),
                BinOpKind::Shl => {
                    ConcreteValue::bv(w, if y >= u128::from(w) { 0 } else { x << y })
                }
                BinOpKind::LShr => {
                    ConcreteValue::bv(w, if y >= u128::from(w) { 0 } else { x >> y })
                }
                BinOpKind::Ult => Bool(x < y),
                BinOpKind::Ule => Bool(x <= y),
                BinOpKind::Ugt => Bool(x > y),
                BinOpKind::Uge => Bool(x >= y),
                BinOpKind::Slt | BinOpKind::Sle => {
                    // Compare with the sign bit flipped: unsigned order on
                    // biased values is signed order on the originals.
                    let h = 1u128 << (w - 1);
                    let (sx, sy) = (x ^ h, y ^ h);
                    Bool(if matches!(k, BinOpKind::Slt) {
                        sx < sy
                    } else {
                        sx <= sy
                    })
                }
                _ => {
                    return Err(Stop::Error(format!(
                        "ill-sorted binary operation at {span}"
                    )))
                }
            }
        }
        _ => {
            return Err(Stop::Error(format!(
                "ill-sorted binary operation at {span}"
            )))
        }
    };
    Ok(out)
}

// ---- Tests -----------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend;
    use crate::ir;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn parse(text: &str) -> Program {
        let p = match frontend::parse("exec_test.cir", text) {
            Ok(p) => p,
            Err(ds) => panic!("parse errors: {ds:#?}\nsource:\n{text}"),
        };
        let errs = ir::sort_check(&p);
        assert!(errs.is_empty(), "sort errors: {errs:#?}\nsource:\n{text}");
        p
    }

    fn no_summaries() -> SummaryMap {
        SummaryMap::new()
    }

    fn run(text: &str, test: &str) -> TestOutcome {
        run_test(&parse(text), test, &no_summaries(), &Config::default())
    }

    fn run_cfg(text: &str, test: &str, config: &Config) -> TestOutcome {
        run_test(&parse(text), test, &no_summaries(), config)
    }

    fn refuted_kind(outcome: &TestOutcome) -> ObligationKind {
        match &outcome.verdict {
            Verdict::Refuted { failed, .. } => failed.kind,
            other => panic!("expected a refutation, got {other:?}"),
        }
    }

    #[test]
    fn straight_line_add_returns_the_sum_term() {
        let p = parse("fn add2(a: bv8, b: bv8) -> bv8 {\nentry:\n  s = add a, b\n  ret s\n}\n");
        let summaries = no_summaries();
        let mut eng = Engine::new(&p, &summaries, Config::default());
        let a = eng.table.fresh_symbol("a", &Sort::BitVec(8)).unwrap();
        let b = eng.table.fresh_symbol("b", &Sort::BitVec(8)).unwrap();
        let tr = eng.table.const_bool(true);
        let got = eng
            .exec_function(p.func_id("add2").unwrap(), vec![Value::Term(a), Value::Term(b)], tr)
            .unwrap();
        let want = eng.table.mk(Opcode::BvAdd, &[a, b]).unwrap();
        assert_eq!(got, Some(Value::Term(want)));
        assert!(eng.obligations.is_empty());
    }

    #[test]
    fn branch_merges_locals_and_heap_to_ite() {
        let text = "fn pick(c: bool) -> bv8 {\nentry:\n  x = 0:bv8\n  br c yes no\nyes:\n  x = 1:bv8\n  goto out\nno:\n  x = 2:bv8\n  goto out\nout:\n  ret x\n}\n\
                    fn cell(c: bool) -> bv8 {\nentry:\n  r = alloc bv8 0:bv8\n  br c yes no\nyes:\n  store r, 5:bv8\n  goto out\nno:\n  goto out\nout:\n  v = load r\n  ret v\n}\n";
        let p = parse(text);
        let summaries = no_summaries();
        for (func, then_v, else_v) in [("pick", 1u128, 2u128), ("cell", 5, 0)] {
            let mut eng = Engine::new(&p, &summaries, Config::default());
            let c = eng.table.fresh_symbol("c", &Sort::Bool).unwrap();
            let tr = eng.table.const_bool(true);
            let got = eng
                .exec_function(p.func_id(func).unwrap(), vec![Value::Term(c)], tr)
                .unwrap();
            let tv = eng.table.const_bv(8, then_v).unwrap();
            let ev = eng.table.const_bv(8, else_v).unwrap();
            let want = eng.table.mk(Opcode::Ite, &[c, tv, ev]).unwrap();
            assert_eq!(got, Some(Value::Term(want)), "function {func}");
            assert!(eng.obligations.is_empty(), "function {func}");
        }
    }

    #[test]
    fn early_return_merge_matches_enumeration() {
        // Independent oracle: for each x in 0..4, expected = x < 2 ? x + 1 : x
        // over two bits, computed here without the engine.
        let expected: Vec<u128> = (0u128..4).map(|x| if x < 2 { (x + 1) & 3 } else { x }).collect();
        assert_eq!(expected, vec![1, 2, 2, 3]);

        let p = parse(
            "fn f(x: bv2) -> bv2 {\nentry:\n  c = ult x, 2:bv2\n  br c small big\nsmall:\n  y = add x, 1:bv2\n  ret y\nbig:\n  ret x\n}\n",
        );
        let summaries = no_summaries();
        let mut eng = Engine::new(&p, &summaries, Config::default());
        let x = eng.table.fresh_symbol("x", &Sort::BitVec(2)).unwrap();
        let tr = eng.table.const_bool(true);
        let got = eng
            .exec_function(p.func_id("f").unwrap(), vec![Value::Term(x)], tr)
            .unwrap();
        let Some(Value::Term(ret)) = got else {
            panic!("expected a returned term");
        };
        let sym = eng.table.find_symbol("x", 0).unwrap();
        for (xv, want) in expected.iter().enumerate() {
            let mut env = Env::new();
            env.bind(sym, ConcreteValue::bv(2, xv as u128));
            let v = eng.table.eval(ret, &env).unwrap();
            assert_eq!(v, ConcreteValue::bv(2, *want), "x = {xv}");
        }
    }

    #[test]
    fn concrete_loop_unrolls_without_solver_calls() {
        // Sum of 0..8 computed independently: 0+1+...+7 = 28.
        let text = "#[test]\nfn sums() -> unit {\nentry:\n  s = 0:bv8\n  i = 0:bv8\n  goto head\nhead:\n  c = ult i, 8:bv8\n  br c body done\nbody:\n  s = add s, i\n  i = add i, 1:bv8\n  goto head\ndone:\n  ok = eq s, 28:bv8\n  assert ok \"sum of 0..8\"\n  ret ()\n}\n";
        let out = run(text, "sums");
        assert_eq!(out.verdict, Verdict::Proven, "{out:?}");
        assert_eq!(out.stats.unrollings, 8);
        assert_eq!(out.stats.feasibility_solver_calls, 0);
        assert_eq!(out.stats.discharge_solver_calls, 0);
    }

    #[test]
    fn symbolic_loop_exit_needs_the_solver() {
        let text = "#[test]\nfn counts() -> unit {\nentry:\n  n = symbolic bv8 \"n\"\n  small = ult n, 4:bv8\n  assume small\n  i = 0:bv8\n  goto head\nhead:\n  c = ult i, n\n  br c body done\nbody:\n  i = add i, 1:bv8\n  goto head\ndone:\n  e = eq i, n\n  assert e \"loop exit equals the bound\"\n  ret ()\n}\n";
        let out = run(text, "counts");
        assert_eq!(out.verdict, Verdict::Proven, "{out:?}");
        assert!(out.stats.unrollings <= 4, "{}", out.stats.unrollings);
        assert!(out.stats.feasibility_solver_calls > 0);

        // Ground-truth replay oracle: every concrete n < 4 passes, and
        // n >= 4 is rejected as inconsistent with the assumption.
        let p = parse(text);
        for n in 0u128..8 {
            let mut m = ReplayModel::new();
            m.push("n", ConcreteValue::bv(8, n));
            let got = concrete_replay(&p, "counts", &m);
            if n < 4 {
                assert_eq!(got, ReplayOutcome::Passed, "n = {n}");
            } else {
                assert!(
                    matches!(got, ReplayOutcome::ModelInconsistent { .. }),
                    "n = {n}: {got:?}"
                );
            }
        }
    }

    #[test]
    fn endless_loop_reports_the_unroll_bound() {
        let text = "#[test]\nfn spins() -> unit {\nentry:\n  goto head\nhead:\n  goto head\n}\n";
        let out = run(text, "spins");
        let Verdict::EngineError(msg) = &out.verdict else {
            panic!("expected an engine error, got {:?}", out.verdict);
        };
        assert!(msg.contains("unroll bound exceeded"), "{msg}");
    }

    #[test]
    fn unbounded_recursion_reports_the_unroll_bound() {
        let text = "fn rec(n: bv8) -> bv8 {\nentry:\n  x = call rec(n)\n  ret x\n}\n#[test]\nfn call_rec() -> unit {\nentry:\n  y = call rec(0:bv8)\n  ret ()\n}\n";
        let out = run(text, "call_rec");
        let Verdict::EngineError(msg) = &out.verdict else {
            panic!("expected an engine error, got {:?}", out.verdict);
        };
        assert!(msg.contains("recursed"), "{msg}");
    }

    #[test]
    fn nested_loops_reset_the_inner_counter() {
        // 3x3 grid: the inner back edge runs 3 times per outer iteration,
        // which only fits max_unroll = 3 if forward re-entry resets it.
        let text = "#[test]\nfn grid() -> unit {\nentry:\n  t = 0:bv8\n  i = 0:bv8\n  goto ohead\nohead:\n  oc = ult i, 3:bv8\n  br oc obody done\nobody:\n  j = 0:bv8\n  goto ihead\nihead:\n  ic = ult j, 3:bv8\n  br ic ibody inext\nibody:\n  t = add t, 1:bv8\n  j = add j, 1:bv8\n  goto ihead\ninext:\n  i = add i, 1:bv8\n  goto ohead\ndone:\n  ok = eq t, 9:bv8\n  assert ok \"grid size\"\n  ret ()\n}\n";
        let mut config = Config::default();
        config.max_unroll = 3;
        let out = run_cfg(text, "grid", &config);
        assert_eq!(out.verdict, Verdict::Proven, "{out:?}");
        // 9 inner + 3 outer back-edge traversals.
        assert_eq!(out.stats.unrollings, 12);
    }

    #[test]
    fn checked_overflow_is_refuted_and_replay_confirmed() {
        let text = "#[test]\nfn wraps() -> unit {\nentry:\n  x = 255:bv8\n  r = checked_add x, 1:bv8\n  ret ()\n}\n";
        let mut config = Config::default();
        config.trace = true;
        let out = run_cfg(text, "wraps", &config);
        let Verdict::Refuted { model, failed } = &out.verdict else {
            panic!("expected a refutation, got {:?}", out.verdict);
        };
        assert_eq!(failed.kind, ObligationKind::Overflow);
        assert!(model.is_empty(), "no symbols in scope: {model}");
        assert!(!out.trace.is_empty(), "trace requested");
    }

    #[test]
    fn division_by_zero_is_refuted_with_a_zero_divisor_model() {
        let text = "#[test]\nfn divides() -> unit {\nentry:\n  a = symbolic bv8 \"a\"\n  b = symbolic bv8 \"b\"\n  q = udiv a, b\n  ret ()\n}\n";
        let out = run(text, "divides");
        assert_eq!(refuted_kind(&out), ObligationKind::DivByZero);
        let Verdict::Refuted { model, .. } = &out.verdict else {
            unreachable!()
        };
        // Ordinals are table-global creation indices: `a` got 0, `b` got 1.
        assert_eq!(model.get("b", 1), Some(&ConcreteValue::bv(8, 0)));

        let guarded = "#[test]\nfn divides() -> unit {\nentry:\n  a = symbolic bv8 \"a\"\n  b = symbolic bv8 \"b\"\n  nz = ne b, 0:bv8\n  assume nz\n  q = udiv a, b\n  ret ()\n}\n";
        let out = run(guarded, "divides");
        assert_eq!(out.verdict, Verdict::Proven, "{out:?}");
    }

    #[test]
    fn bounds_verdicts_match_exhaustive_enumeration() {
        let body = "  arr = mkarray bv8 [10:bv8, 11:bv8, 12:bv8, 13:bv8, 14:bv8, 15:bv8, 16:bv8, 17:bv8]\n  x = index arr[i]\n  ret ()\n}\n";
        let safe = format!(
            "#[test]\nfn reads() -> unit {{\nentry:\n  i = symbolic bv4 \"i\"\n  c = ult i, 8:bv4\n  assume c\n{body}"
        );
        let unsafe_ = format!(
            "#[test]\nfn reads() -> unit {{\nentry:\n  i = symbolic bv4 \"i\"\n{body}"
        );
        assert_eq!(run(&safe, "reads").verdict, Verdict::Proven);
        let out = run(&unsafe_, "reads");
        assert_eq!(refuted_kind(&out), ObligationKind::Bounds);

        // Independent oracle: enumerate all 16 indices concretely.
        let p = parse(&unsafe_);
        let mut fired = 0;
        for i in 0u128..16 {
            let mut m = ReplayModel::new();
            m.push("i", ConcreteValue::bv(4, i));
            match concrete_replay(&p, "reads", &m) {
                ReplayOutcome::Passed => assert!(i < 8, "i = {i}"),
                ReplayOutcome::Fired { kind, .. } => {
                    assert_eq!(kind, ObligationKind::Bounds);
                    assert!(i >= 8, "i = {i}");
                    fired += 1;
                }
                other => panic!("i = {i}: {other:?}"),
            }
        }
        assert_eq!(fired, 8);
    }

    #[test]
    fn panic_reachability_follows_the_assumptions() {
        let reachable = "#[test]\nfn panics() -> unit {\nentry:\n  c = symbolic bool \"c\"\n  br c boom fine\nboom:\n  panic \"boom\"\nfine:\n  ret ()\n}\n";
        let out = run(reachable, "panics");
        assert_eq!(refuted_kind(&out), ObligationKind::Panic);
        let Verdict::Refuted { model, .. } = &out.verdict else {
            unreachable!()
        };
        assert_eq!(model.get("c", 0), Some(&ConcreteValue::Bool(true)));

        let guarded = "#[test]\nfn panics() -> unit {\nentry:\n  c = symbolic bool \"c\"\n  nc = not c\n  assume nc\n  br c boom fine\nboom:\n  panic \"boom\"\nfine:\n  ret ()\n}\n";
        // With solver-backed feasibility the arm is pruned and no
        // obligation is even emitted.
        let out = run(guarded, "panics");
        assert_eq!(out.verdict, Verdict::Proven, "{out:?}");
        assert_eq!(out.obligations.len(), 0);
        // Interval-only feasibility cannot prune it, but discharge still
        // proves the obligation under the assumption.
        let mut config = Config::default();
        config.feasibility = Feasibility::IntervalOnly;
        let out = run_cfg(guarded, "panics", &config);
        assert_eq!(out.verdict, Verdict::Proven, "{out:?}");
        assert_eq!(out.obligations.len(), 1);
        assert_eq!(out.obligations[0].kind, ObligationKind::Panic);
        assert_eq!(out.obligations[0].status, DischargeStatus::Valid);
    }

    #[test]
    fn constant_false_branches_are_pruned_without_obligations() {
        let text = "#[test]\nfn pruned() -> unit {\nentry:\n  br false dead live\ndead:\n  unreachable\nlive:\n  ret ()\n}\n";
        let out = run(text, "pruned");
        assert_eq!(out.verdict, Verdict::Proven);
        assert_eq!(out.obligations.len(), 0);
        assert_eq!(out.stats.feasibility_solver_calls, 0);
    }

    #[test]
    fn unsatisfiable_assumptions_are_reported_vacuous() {
        let text = "#[test]\nfn impossible() -> unit {\nentry:\n  assume false\n  bad = eq 1:bv8, 2:bv8\n  assert bad \"anything proves under false\"\n  ret ()\n}\n";
        let out = run(text, "impossible");
        assert_eq!(out.verdict, Verdict::Vacuous, "{out:?}");
    }

    #[test]
    fn arm_assumptions_hold_only_under_their_branch_condition() {
        let proven = "#[test]\nfn merged() -> unit {\nentry:\n  c = symbolic bool \"c\"\n  x = symbolic bv8 \"x\"\n  br c yes no\nyes:\n  e = eq x, 1:bv8\n  assume e\n  goto out\nno:\n  goto out\nout:\n  e2 = eq x, 1:bv8\n  i = implies c, e2\n  assert i \"assumption weakened by its arm\"\n  ret ()\n}\n";
        let out = run(proven, "merged");
        assert_eq!(out.verdict, Verdict::Proven, "{out:?}");

        // Asserting the raw fact must fail: the assumption only covers
        // the then-arm, and replay must reproduce that through the merge.
        let refutable = proven.replace(
            "  i = implies c, e2\n  assert i \"assumption weakened by its arm\"",
            "  assert e2 \"holds on one arm only\"",
        );
        let out = run(&refutable, "merged");
        assert_eq!(refuted_kind(&out), ObligationKind::Assert);
    }

    #[test]
    fn reference_merges_read_back_and_explode_past_the_cap() {
        let text = "fn choose(c: bool) -> bv8 {\nentry:\n  a = alloc bv8 1:bv8\n  b = alloc bv8 2:bv8\n  br c yes no\nyes:\n  p = a\n  goto out\nno:\n  p = b\n  goto out\nout:\n  v = load p\n  ret v\n}\n";
        let p = parse(text);
        let summaries = no_summaries();
        let mut eng = Engine::new(&p, &summaries, Config::default());
        let c = eng.table.fresh_symbol("c", &Sort::Bool).unwrap();
        let tr = eng.table.const_bool(true);
        let got = eng
            .exec_function(p.func_id("choose").unwrap(), vec![Value::Term(c)], tr)
            .unwrap();
        let one = eng.table.const_bv(8, 1).unwrap();
        let two = eng.table.const_bv(8, 2).unwrap();
        let want = eng.table.mk(Opcode::Ite, &[c, one, two]).unwrap();
        assert_eq!(got, Some(Value::Term(want)));

        let mut eng = Engine::new(&p, &summaries, Config { ref_mux_cap: 1, ..Config::default() });
        let c = eng.table.fresh_symbol("c", &Sort::Bool).unwrap();
        let tr = eng.table.const_bool(true);
        let err = eng
            .exec_function(p.func_id("choose").unwrap(), vec![Value::Term(c)], tr)
            .unwrap_err();
        assert!(err.0.contains("mux explosion"), "{}", err.0);
    }

    #[test]
    fn heap_writes_through_field_and_element_references_prove() {
        let text = "record Pair { lo: bv8, hi: bv8 }\n#[test]\nfn writes() -> unit {\nentry:\n  rec = mkrecord Pair (1:bv8, 2:bv8)\n  r = alloc Pair rec\n  fr = ref_field r.hi\n  store fr, 9:bv8\n  back = load r\n  h = field back.hi\n  okh = eq h, 9:bv8\n  assert okh \"field write lands\"\n  arr = mkarray bv8 [0:bv8, 0:bv8, 0:bv8, 0:bv8]\n  ra = alloc [bv8; 4] arr\n  i = symbolic bv8 \"i\"\n  inb = ult i, 4:bv8\n  assume inb\n  er = ref_index ra[i]\n  store er, 7:bv8\n  got = load er\n  oke = eq got, 7:bv8\n  assert oke \"element write lands\"\n  ret ()\n}\n";
        let out = run(text, "writes");
        assert_eq!(out.verdict, Verdict::Proven, "{out:?}");
    }

    #[test]
    fn variant_introduction_refutes_and_replays() {
        let text = "variant Opt { None(unit), Some(bv8) }\n#[test]\nfn tags() -> unit {\nentry:\n  o = symbolic Opt \"o\"\n  t = tag o\n  z = eq t, 0:bv8\n  assert z \"always none\"\n  ret ()\n}\n";
        let out = run(text, "tags");
        assert_eq!(refuted_kind(&out), ObligationKind::Assert);
    }

    #[test]
    fn verdicts_and_reports_are_deterministic() {
        let text = "#[test]\nfn divides() -> unit {\nentry:\n  a = symbolic bv8 \"a\"\n  b = symbolic bv8 \"b\"\n  q = udiv a, b\n  s = add q, a\n  c = ult s, 100:bv8\n  br c yes no\nyes:\n  ret ()\nno:\n  ret ()\n}\n";
        let one = run(text, "divides");
        let two = run(text, "divides");
        assert_eq!(one, two);
    }

    #[test]
    fn random_models_never_fire_on_proven_tests() {
        // Soundness sampling: a Proven verdict promises that no
        // assumption-satisfying concrete execution faults.
        let guarded_div = "#[test]\nfn t() -> unit {\nentry:\n  a = symbolic bv8 \"a\"\n  b = symbolic bv8 \"b\"\n  nz = ne b, 0:bv8\n  assume nz\n  q = udiv a, b\n  ret ()\n}\n";
        let bounded_read = "#[test]\nfn t() -> unit {\nentry:\n  i = symbolic bv4 \"i\"\n  c = ult i, 8:bv4\n  assume c\n  arr = mkarray bv8 [1:bv8, 2:bv8, 3:bv8, 4:bv8, 5:bv8, 6:bv8, 7:bv8, 8:bv8]\n  x = index arr[i]\n  ret ()\n}\n";
        let loop_exit = "#[test]\nfn t() -> unit {\nentry:\n  n = symbolic bv8 \"n\"\n  small = ult n, 4:bv8\n  assume small\n  i = 0:bv8\n  goto head\nhead:\n  c = ult i, n\n  br c body done\nbody:\n  i = add i, 1:bv8\n  goto head\ndone:\n  e = eq i, n\n  assert e \"exit\"\n  ret ()\n}\n";
        let cases: &[(&str, &[(&str, u32)])] = &[
            (guarded_div, &[("a", 8), ("b", 8)]),
            (bounded_read, &[("i", 4)]),
            (loop_exit, &[("n", 8)]),
        ];
        let mut rng = StdRng::seed_from_u64(0x5eed);
        for (text, intros) in cases {
            let out = run(text, "t");
            assert_eq!(out.verdict, Verdict::Proven, "{text}");
            let p = parse(text);
            let mut consistent = 0;
            for _ in 0..300 {
                let mut m = ReplayModel::new();
                for (name, w) in *intros {
                    let v: u128 = rng.gen_range(0..=mask(*w));
                    m.push(name, ConcreteValue::bv(*w, v));
                }
                match concrete_replay(&p, "t", &m) {
                    ReplayOutcome::Passed => consistent += 1,
                    ReplayOutcome::ModelInconsistent { .. } => {}
                    other => panic!("unexpected replay outcome: {other:?}"),
                }
            }
            assert!(consistent > 0, "sampling never satisfied the assumptions");
        }
    }

    // ---- Summary application ----

    /// A hand-built summary for `inc`: precondition `n < limit`, relation
    /// `result = n + 1`.
    fn inc_summary(limit: Option<u128>, mode: SummaryMode) -> SummaryMap {
        let mut table = TermTable::new();
        let n = table.fresh_symbol("n", &Sort::BitVec(8)).unwrap();
        let result = table.fresh_symbol("result", &Sort::BitVec(8)).unwrap();
        let precondition = match limit {
            None => table.const_bool(true),
            Some(l) => {
                let lv = table.const_bv(8, l).unwrap();
                table.mk(Opcode::BvULt, &[n, lv]).unwrap()
            }
        };
        let one = table.const_bv(8, 1).unwrap();
        let n1 = table.mk(Opcode::BvAdd, &[n, one]).unwrap();
        let post_relation = table.mk(Opcode::Eq, &[result, n1]).unwrap();
        let summary = compose::SpecSummary {
            target: "inc".to_string(),
            table,
            formals: vec![n],
            result,
            precondition,
            post_relation,
            mode,
            provenance: compose::Provenance {
                spec_name: "inc_spec".to_string(),
                verdict: "proven".to_string(),
            },
            call_under_branch: false,
        };
        let mut m = SummaryMap::new();
        m.insert("inc_spec".to_string(), summary);
        m
    }

    // The target body contains a tripwire assertion: if the engine ever
    // executes it instead of applying the summary, the test refutes.
    const INC_PROGRAM: &str = "fn inc(n: bv8) -> bv8 {\nentry:\n  trip = eq 0:bv8, 1:bv8\n  assert trip \"target body must not run\"\n  r = add n, 1:bv8\n  ret r\n}\n\
        fn inc_ref(n: bv8) -> bv8 {\nentry:\n  r = add n, 1:bv8\n  ret r\n}\n\
        #[spec_for(inc)]\nfn inc_spec(n: bv8) -> bv8 {\nentry:\n  out = symbolic bv8 \"out\"\n  ret out\n}\n\
        #[test]\nfn uses_inc() -> unit {\nentry:\n  enable_spec inc_spec\n  x = symbolic bv8 \"x\"\n  y = call inc(x)\n  w = add x, 1:bv8\n  e = eq y, w\n  assert e \"summary relation gives the value\"\n  ret ()\n}\n";

    #[test]
    fn general_summary_replaces_the_body_and_constrains_the_result() {
        let p = parse(INC_PROGRAM);
        let summaries = inc_summary(None, SummaryMode::General);
        let out = run_test(&p, "uses_inc", &summaries, &Config::default());
        assert_eq!(out.verdict, Verdict::Proven, "{out:?}");
        // One precondition obligation plus the test's own assert; the
        // tripwire never ran.
        assert_eq!(out.obligations.len(), 2);
        assert_eq!(out.obligations[0].kind, ObligationKind::SpecPrecondition);
        assert!(out
            .obligations
            .iter()
            .all(|o| !o.message.contains("target body")));
    }

    #[test]
    fn substitution_summary_runs_the_reference_body() {
        let p = parse(INC_PROGRAM);
        let summaries = inc_summary(None, SummaryMode::Substitution("inc_ref".to_string()));
        let out = run_test(&p, "uses_inc", &summaries, &Config::default());
        assert_eq!(out.verdict, Verdict::Proven, "{out:?}");
        assert!(out
            .obligations
            .iter()
            .all(|o| !o.message.contains("target body")));
    }

    #[test]
    fn unmet_summary_precondition_is_refuted_and_replay_confirmed() {
        let p = parse(INC_PROGRAM);
        let summaries = inc_summary(Some(10), SummaryMode::General);
        let out = run_test(&p, "uses_inc", &summaries, &Config::default());
        let Verdict::Refuted { model, failed } = &out.verdict else {
            panic!("expected a refutation, got {:?}", out.verdict);
        };
        assert_eq!(failed.kind, ObligationKind::SpecPrecondition);
        let Some(ConcreteValue::Bv { value, .. }) = model.get("x", 0) else {
            panic!("model must bind x: {model}");
        };
        assert!(*value >= 10, "counterexample must violate x < 10: {value}");
    }

    #[test]
    fn enable_spec_without_a_summary_is_an_engine_error() {
        let p = parse(INC_PROGRAM);
        let out = run_test(&p, "uses_inc", &no_summaries(), &Config::default());
        let Verdict::EngineError(msg) = &out.verdict else {
            panic!("expected an engine error, got {:?}", out.verdict);
        };
        assert!(msg.contains("no verified summary"), "{msg}");
    }

    #[test]
    fn replay_model_queues_are_fifo_per_name() {
        let text = "#[test]\nfn twice() -> unit {\nentry:\n  a = symbolic bv8 \"v\"\n  b = symbolic bv8 \"v\"\n  c = ult a, b\n  assert c \"first draw below second\"\n  ret ()\n}\n";
        let p = parse(text);
        let mut m = ReplayModel::new();
        m.push("v", ConcreteValue::bv(8, 3));
        m.push("v", ConcreteValue::bv(8, 200));
        assert_eq!(concrete_replay(&p, "twice", &m), ReplayOutcome::Passed);
        let mut m = ReplayModel::new();
        m.push("v", ConcreteValue::bv(8, 200));
        m.push("v", ConcreteValue::bv(8, 3));
        assert!(matches!(
            concrete_replay(&p, "twice", &m),
            ReplayOutcome::Fired {
                kind: ObligationKind::Assert,
                ..
            }
        ));
        // Missing values are replay errors, not firings.
        let m = ReplayModel::new();
        assert!(matches!(
            concrete_replay(&p, "twice", &m),
            ReplayOutcome::Error(_)
        ));
    }

    #[test]
    fn replayed_call_chain_uses_real_bodies_without_summaries() {
        let text = "fn double(x: bv8) -> bv8 {\nentry:\n  d = add x, x\n  ret d\n}\nfn quad(x: bv8) -> bv8 {\nentry:\n  d = call double(x)\n  q = call double(d)\n  ret q\n}\n#[test]\nfn t() -> unit {\nentry:\n  v = symbolic bv8 \"v\"\n  q = call quad(v)\n  w = mul v, 4:bv8\n  e = eq q, w\n  assert e \"quadrupled\"\n  ret ()\n}\n";
        let out = run(text, "t");
        assert_eq!(out.verdict, Verdict::Proven, "{out:?}");
        let p = parse(text);
        for v in [0u128, 1, 63, 64, 200, 255] {
            let mut m = ReplayModel::new();
            m.push("v", ConcreteValue::bv(8, v));
            assert_eq!(concrete_replay(&p, "t", &m), ReplayOutcome::Passed, "v = {v}");
        }
    }
}
