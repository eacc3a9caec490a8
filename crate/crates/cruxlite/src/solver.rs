//! Obligation discharge: bit-blasting Bool-sorted term queries to CNF, a
//! self-contained CDCL SAT solver, model extraction back to named symbols,
//! SMT-LIB2 script emission, and a bridge to external solver processes.
//!
//! The internal pipeline is [`blast`] (Tseitin encoding over the term DAG)
//! followed by [`cdcl_solve`]; [`check_claim`] wraps both behind a fast path
//! that returns without any solver call when constructor-time simplification
//! or the interval layer already settled the query.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use thiserror::Error;

use crate::term::{ConcreteValue, Env, Opcode, SymbolId, TermId, TermTable};

mod blast;
mod cdcl;
mod external;
mod sexp;
mod smtlib;

pub use blast::{blast, Bit, Bits, BlastError, BlastMap};
pub use cdcl::{cdcl_solve, SatResult};
pub use external::run_external;
pub use smtlib::emit_smtlib;

/// A propositional literal in DIMACS convention: nonzero signed integer,
/// negative for negated variables.
pub type Lit = i32;

/// A CNF formula: a variable count and a list of clauses over variables
/// `1..=num_vars`.
#[derive(Clone, Debug, Default)]
pub struct CnfFormula {
    pub num_vars: u32,
    pub clauses: Vec<Vec<Lit>>,
}

impl CnfFormula {
    pub fn new() -> CnfFormula {
        CnfFormula::default()
    }

    /// Allocate a fresh variable and return its positive literal.
    pub fn new_var(&mut self) -> Lit {
        self.num_vars += 1;
        self.num_vars as Lit
    }

    /// Add a clause. Literals must reference declared variables.
    pub fn add_clause(&mut self, lits: &[Lit]) {
        debug_assert!(
            lits.iter()
                .all(|&l| l != 0 && l.unsigned_abs() <= self.num_vars),
            "clause literal out of range: {lits:?} with {} vars",
            self.num_vars
        );
        self.clauses.push(lits.to_vec());
    }
}

/// A satisfying assignment decoded back to named symbols: a map from
/// `(name, ordinal)` to a concrete value, total over the query's symbols.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Model {
    entries: std::collections::BTreeMap<(String, u32), ConcreteValue>,
}

impl Model {
    pub fn new() -> Model {
        Model::default()
    }

    pub fn insert(&mut self, name: &str, ordinal: u32, v: ConcreteValue) {
        self.entries.insert((name.to_string(), ordinal), v);
    }

    pub fn get(&self, name: &str, ordinal: u32) -> Option<&ConcreteValue> {
        self.entries.get(&(name.to_string(), ordinal))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Entries in stable `(name, ordinal)` order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, u32, &ConcreteValue)> {
        self.entries
            .iter()
            .map(|((n, o), v)| (n.as_str(), *o, v))
    }

    /// Bind every entry that names a symbol known to `table`.
    pub fn to_env(&self, table: &TermTable) -> Env {
        let mut env = Env::new();
        for ((name, ord), v) in &self.entries {
            if let Some(sym) = table.find_symbol(name, *ord) {
                env.bind(sym, v.clone());
            }
        }
        env
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, ((name, ord), v)) in self.entries.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{name}!{ord} = {v}")?;
        }
        Ok(())
    }
}

/// Verdict of a satisfiability query at the term level. `Unknown` can only
/// come from the external backend (timeout, process failure, or output the
/// bridge cannot parse); the internal backend always decides.
#[derive(Clone, Debug, PartialEq)]
pub enum SolverVerdict {
    Unsat,
    Sat(Model),
    Unknown(String),
}

/// Which satisfiability backend discharges obligations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Backend {
    /// Bit-blast to CNF and run the built-in CDCL solver.
    Internal,
    /// Emit SMT-LIB2 and pipe it to this command line.
    External(String),
}

/// Solver-level configuration.
#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub backend: Backend,
    /// Seed for the internal solver's branching jitter.
    pub seed: u64,
    /// Emit array operations with SMT array theory (`QF_ABV`) instead of
    /// expanding them element-wise (`QF_BV`).
    pub arrays_as_theory: bool,
    /// Wall-clock budget for one external solver invocation.
    pub external_timeout: Duration,
    /// When set, every query that reaches a backend is also written to
    /// this directory as an SMT-LIB2 script (`query-NNNNNN.smt2`, numbered
    /// by a process-wide counter).
    pub dump_dir: Option<PathBuf>,
}

impl Default for SolverConfig {
    fn default() -> SolverConfig {
        SolverConfig {
            backend: Backend::Internal,
            seed: 0,
            arrays_as_theory: false,
            external_timeout: Duration::from_secs(60),
            dump_dir: None,
        }
    }
}

/// Names `dump_dir` files uniquely across all solver calls in a process,
/// including calls made from parallel jobs.
static DUMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Outcome of discharging one claim.
#[derive(Clone, Debug, PartialEq)]
pub enum CheckVerdict {
    /// The claim holds under the assumptions and context.
    Valid,
    /// The claim can be violated; the model assigns every symbol that
    /// appears in the query.
    Counterexample(Model),
}

/// Cost accounting for one [`check_claim`] call.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CheckStats {
    /// The query was settled by simplification/intervals alone.
    pub fast_path: bool,
    /// CNF variables produced by blasting (0 on the fast path).
    pub vars: u64,
    /// CNF clauses produced by blasting (0 on the fast path).
    pub clauses: u64,
    /// Number of satisfiability calls made (0 or 1).
    pub solver_calls: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub verdict: CheckVerdict,
    pub stats: CheckStats,
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum SolverError {
    /// The external backend could not decide the query.
    #[error("external solver returned unknown: {reason}")]
    Unknown { reason: String },
    /// The query was not a well-sorted Bool problem.
    #[error("malformed solver query: {0}")]
    Query(String),
}

impl From<BlastError> for SolverError {
    fn from(e: BlastError) -> SolverError {
        SolverError::Query(e.0)
    }
}

/// Decide whether `claim` holds whenever all `assumptions` and `context`
/// conjuncts hold. The satisfiability query is
/// `conj(assumptions) ∧ conj(context) ∧ ¬claim`: `Unsat` proves the claim,
/// a satisfying assignment is a counterexample.
///
/// Fast path: if constructor-time simplification or the interval layer has
/// already reduced `¬claim` (or the whole conjunction) to a constant, the
/// verdict is returned with zero solver calls.
pub fn check_claim(
    table: &mut TermTable,
    assumptions: &[TermId],
    context: &[TermId],
    claim: TermId,
    config: &SolverConfig,
) -> Result<CheckOutcome, SolverError> {
    let mut stats = CheckStats::default();

    // The symbol universe the model must cover comes from the original
    // query terms, before any folding can erase symbols.
    let mut universe: BTreeSet<SymbolId> = BTreeSet::new();
    for &t in assumptions.iter().chain(context).chain([&claim]) {
        universe.extend(table.symbols_in(t));
    }

    let valid = |mut stats: CheckStats| {
        stats.fast_path = stats.solver_calls == 0;
        Ok(CheckOutcome {
            verdict: CheckVerdict::Valid,
            stats,
        })
    };
    let default_model = |table: &TermTable, universe: &BTreeSet<SymbolId>| {
        let mut m = Model::new();
        for &s in universe {
            let info = table.symbol_info(s);
            m.insert(
                &info.name,
                info.ordinal,
                ConcreteValue::default_of(&info.sort),
            );
        }
        m
    };

    let negated = table
        .mk(Opcode::Not, &[claim])
        .map_err(|e| SolverError::Query(e.to_string()))?;

    let mut conj: Vec<TermId> = Vec::new();
    for &t in assumptions.iter().chain(context) {
        match table.as_const_bool(t) {
            Some(true) => {}
            // A contradictory context makes every claim hold vacuously at
            // this level; the engine detects vacuity separately.
            Some(false) => return valid(stats),
            None => conj.push(t),
        }
    }
    match table.as_const_bool(negated) {
        // ¬claim is identically false: the claim holds outright.
        Some(false) => return valid(stats),
        // ¬claim is identically true (e.g. reachability claims that are
        // literally `false`): satisfiability of the context alone decides.
        Some(true) => {}
        None => conj.push(negated),
    }

    // A conjunction containing both a term and its negation is closed
    // without solving; hash-consing makes the complement lookup exact.
    if !conj.is_empty() {
        let set: std::collections::HashSet<TermId> = conj.iter().copied().collect();
        for &c in &conj {
            let comp = table
                .mk(Opcode::Not, &[c])
                .map_err(|e| SolverError::Query(e.to_string()))?;
            if set.contains(&comp) {
                return valid(stats);
            }
        }
    }

    // Syntactic contradiction check over the folded conjunction.
    if !conj.is_empty() {
        let mut folded = conj[0];
        for &t in &conj[1..] {
            folded = table
                .mk(Opcode::And, &[folded, t])
                .map_err(|e| SolverError::Query(e.to_string()))?;
        }
        match table.as_const_bool(folded) {
            Some(false) => return valid(stats),
            Some(true) => conj.clear(),
            None => {}
        }
    }

    if conj.is_empty() {
        // The query is trivially satisfiable: every assignment violates the
        // claim. Report the canonical all-defaults model.
        return Ok(CheckOutcome {
            verdict: CheckVerdict::Counterexample(default_model(table, &universe)),
            stats,
        });
    }

    if let Some(dir) = &config.dump_dir {
        let script = emit_smtlib(table, &conj, config);
        let n = DUMP_COUNTER.fetch_add(1, Ordering::Relaxed);
        std::fs::write(dir.join(format!("query-{n:06}.smt2")), script)
            .map_err(|e| SolverError::Query(format!("cannot write solver query dump: {e}")))?;
    }

    match &config.backend {
        Backend::Internal => {
            let (cnf, map) = blast(table, &conj)?;
            stats.vars = cnf.num_vars as u64;
            stats.clauses = cnf.clauses.len() as u64;
            stats.solver_calls = 1;
            match cdcl_solve(&cnf, config.seed) {
                SatResult::Unsat => valid(stats),
                SatResult::Sat(assignment) => {
                    let model = map.decode(table, &universe, &assignment);
                    Ok(CheckOutcome {
                        verdict: CheckVerdict::Counterexample(model),
                        stats,
                    })
                }
            }
        }
        Backend::External(cmd) => {
            let script = emit_smtlib(table, &conj, config);
            stats.solver_calls = 1;
            match run_external(cmd, &script, config.external_timeout) {
                SolverVerdict::Unsat => valid(stats),
                SolverVerdict::Sat(mut model) => {
                    // Patch totality: the solver may omit don't-care symbols.
                    for &s in &universe {
                        let info = table.symbol_info(s);
                        if model.get(&info.name, info.ordinal).is_none() {
                            model.insert(
                                &info.name,
                                info.ordinal,
                                ConcreteValue::default_of(&info.sort),
                            );
                        }
                    }
                    Ok(CheckOutcome {
                        verdict: CheckVerdict::Counterexample(model),
                        stats,
                    })
                }
                SolverVerdict::Unknown(reason) => Err(SolverError::Unknown { reason }),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::term::Sort;

    fn bv8(t: &mut TermTable, v: u128) -> TermId {
        t.const_bv(8, v).unwrap()
    }

    #[test]
    fn reflexive_equality_is_valid_without_solving() {
        let mut t = TermTable::new();
        let x = t.fresh_symbol("x", &Sort::BitVec(8)).unwrap();
        let claim = t.mk(Opcode::Eq, &[x, x]).unwrap();
        let out = check_claim(&mut t, &[], &[], claim, &SolverConfig::default()).unwrap();
        assert_eq!(out.verdict, CheckVerdict::Valid);
        assert!(out.stats.fast_path);
        assert_eq!(out.stats.solver_calls, 0);
        assert_eq!(out.stats.clauses, 0);
    }

    #[test]
    fn interval_layer_settles_remainder_bound_without_solving() {
        let mut t = TermTable::new();
        let x = t.fresh_symbol("x", &Sort::BitVec(8)).unwrap();
        let eight = bv8(&mut t, 8);
        let y = t.mk(Opcode::BvURem, &[x, eight]).unwrap();
        let sixteen = bv8(&mut t, 16);
        // y is in [0,7] by the interval layer, so y < 16 folds to true.
        let claim = t.mk(Opcode::BvULt, &[y, sixteen]).unwrap();
        let out = check_claim(&mut t, &[], &[], claim, &SolverConfig::default()).unwrap();
        assert_eq!(out.verdict, CheckVerdict::Valid);
        assert_eq!(out.stats.solver_calls, 0);
    }

    #[test]
    fn queries_are_dumped_as_smtlib_files_when_a_dump_dir_is_set() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = TermTable::new();
        let x = t.fresh_symbol("x", &Sort::BitVec(8)).unwrap();
        let ten = bv8(&mut t, 10);
        let claim = t.mk(Opcode::BvULt, &[x, ten]).unwrap();
        let config = SolverConfig {
            dump_dir: Some(dir.path().to_path_buf()),
            ..SolverConfig::default()
        };
        check_claim(&mut t, &[], &[], claim, &config).unwrap();

        let mut dumped: Vec<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        dumped.sort();
        assert_eq!(dumped.len(), 1, "one query, one file: {dumped:?}");
        assert!(dumped[0].starts_with("query-") && dumped[0].ends_with(".smt2"));
        let text = std::fs::read_to_string(dir.path().join(&dumped[0])).unwrap();
        assert!(text.contains("(check-sat)"), "not an SMT-LIB script:\n{text}");
        // Fast-path queries never reach a backend and are not dumped.
        let trivial = t.mk(Opcode::Eq, &[x, x]).unwrap();
        check_claim(&mut t, &[], &[], trivial, &config).unwrap();
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn refutable_claim_yields_a_model_that_falsifies_it() {
        let mut t = TermTable::new();
        let x = t.fresh_symbol("x", &Sort::BitVec(8)).unwrap();
        let ten = bv8(&mut t, 10);
        let claim = t.mk(Opcode::BvULt, &[x, ten]).unwrap();
        let out = check_claim(&mut t, &[], &[], claim, &SolverConfig::default()).unwrap();
        let model = match out.verdict {
            CheckVerdict::Counterexample(m) => m,
            v => panic!("expected a counterexample, got {v:?}"),
        };
        assert_eq!(out.stats.solver_calls, 1);
        assert!(out.stats.clauses > 0);
        // The model must assign x and falsify the claim under evaluation.
        let env = model.to_env(&t);
        let got = t.eval(claim, &env).unwrap();
        assert_eq!(got, ConcreteValue::Bool(false));
        match model.get("x", 0) {
            Some(ConcreteValue::Bv { value, .. }) => assert!(*value >= 10),
            other => panic!("missing x in model: {other:?}"),
        }
    }

    #[test]
    fn assumptions_constrain_the_counterexample_space() {
        let mut t = TermTable::new();
        let x = t.fresh_symbol("x", &Sort::BitVec(8)).unwrap();
        let five = bv8(&mut t, 5);
        let ten = bv8(&mut t, 10);
        let assume = t.mk(Opcode::BvULt, &[x, five]).unwrap();
        let claim = t.mk(Opcode::BvULt, &[x, ten]).unwrap();
        let out =
            check_claim(&mut t, &[assume], &[], claim, &SolverConfig::default()).unwrap();
        assert_eq!(out.verdict, CheckVerdict::Valid);
        assert_eq!(out.stats.solver_calls, 1, "needs the solver, not intervals");
    }

    #[test]
    fn contradictory_assumptions_make_any_claim_valid() {
        let mut t = TermTable::new();
        let x = t.fresh_symbol("x", &Sort::BitVec(8)).unwrap();
        let zero = bv8(&mut t, 0);
        // x < 0 folds to false at construction.
        let assume = t.mk(Opcode::BvULt, &[x, zero]).unwrap();
        assert_eq!(t.as_const_bool(assume), Some(false));
        let f = t.const_bool(false);
        let out = check_claim(&mut t, &[assume], &[], f, &SolverConfig::default()).unwrap();
        assert_eq!(out.verdict, CheckVerdict::Valid);
        assert_eq!(out.stats.solver_calls, 0);
    }

    #[test]
    fn reachable_false_claim_reports_a_total_default_model() {
        // With no constraints at all the query is trivially satisfiable and
        // the counterexample is the canonical empty model.
        let mut t = TermTable::new();
        let claim = t.const_bool(false);
        let out = check_claim(&mut t, &[], &[], claim, &SolverConfig::default()).unwrap();
        match out.verdict {
            CheckVerdict::Counterexample(m) => assert!(m.is_empty()),
            v => panic!("expected counterexample, got {v:?}"),
        }
        assert_eq!(out.stats.solver_calls, 0);

        // An assumption mentioning x (kept unsimplified so it survives
        // construction) pulls x into the universe; the model binds it.
        let x = t.fresh_symbol("x", &Sort::BitVec(8)).unwrap();
        let assume = t.mk_raw(Opcode::Eq, &[x, x]).unwrap();
        let out =
            check_claim(&mut t, &[assume], &[], claim, &SolverConfig::default()).unwrap();
        match out.verdict {
            CheckVerdict::Counterexample(m) => {
                assert_eq!(
                    m.get("x", 0),
                    Some(&ConcreteValue::Bv { width: 8, value: 0 })
                );
            }
            v => panic!("expected counterexample, got {v:?}"),
        }
    }

    #[test]
    fn syntactically_contradictory_conjunction_is_valid_without_solving() {
        let mut t = TermTable::new();
        let p = t.fresh_symbol("p", &Sort::Bool).unwrap();
        let np = t.mk(Opcode::Not, &[p]).unwrap();
        let f = t.const_bool(false);
        let out = check_claim(&mut t, &[p, np], &[], f, &SolverConfig::default()).unwrap();
        assert_eq!(out.verdict, CheckVerdict::Valid);
        assert_eq!(out.stats.solver_calls, 0);
    }

    #[test]
    fn identical_queries_produce_identical_outcomes() {
        let run = || {
            let mut t = TermTable::new();
            let x = t.fresh_symbol("x", &Sort::BitVec(8)).unwrap();
            let y = t.fresh_symbol("y", &Sort::BitVec(8)).unwrap();
            let sum = t.mk(Opcode::BvAdd, &[x, y]).unwrap();
            let hundred = bv8(&mut t, 100);
            let claim = t.mk(Opcode::BvULt, &[sum, hundred]).unwrap();
            let out =
                check_claim(&mut t, &[], &[], claim, &SolverConfig::default()).unwrap();
            format!("{out:?}")
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn model_display_and_env_round_trip() {
        let mut t = TermTable::new();
        let x = t.fresh_symbol("x", &Sort::BitVec(8)).unwrap();
        let mut m = Model::new();
        m.insert("x", 0, ConcreteValue::bv(8, 42));
        assert_eq!(m.to_string(), "x!0 = 42");
        let env = m.to_env(&t);
        assert_eq!(t.eval(x, &env).unwrap(), ConcreteValue::bv(8, 42));
    }
}
