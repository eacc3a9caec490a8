//! Compositional reasoning: function summaries extracted from proved spec
//! tests, and the machinery to apply them at call sites.
//!
//! A [`SpecSummary`] is a contract for one target function: a precondition
//! and a post-relation over formal input symbols plus a distinguished
//! result symbol, all living in the summary's own [`TermTable`]. Applying a
//! summary in another execution means instantiating those terms over the
//! call's actual arguments, which [`instantiate`] does by mapping the
//! formal leaf symbols to projections of the actuals and rebuilding the
//! term in the destination table.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::exec::{self, TestOutcome, Verdict};
use crate::ir::{BinOpKind, Function, LocalId, Operand, Program, Rvalue, StmtKind};
use crate::term::{ConcreteValue, Env, Opcode, Sort, SymbolId, TermId, TermTable, TAG_WIDTH};

/// How a summary replaces calls to its target.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum SummaryMode {
    /// Havoc the result and assume the post-relation; emit the
    /// precondition as an obligation.
    General,
    /// The post-relation pins the result to the named reference function;
    /// call sites run that function's body instead of assuming a relation.
    Substitution(String),
}

/// Where a summary came from and what proved it.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Provenance {
    /// Name of the spec function whose verification produced the summary.
    pub spec_name: String,
    /// Verdict string of that verification run (always "Proven": summaries
    /// are only extracted from proved specs).
    pub verdict: String,
}

/// A verified contract for one function, extracted from a spec test.
///
/// `formals`, `result`, `precondition`, and `post_relation` are terms in
/// `table`; the formals and result are fresh symbolic values (aggregate
/// sorts expand to trees of scalar leaf symbols), and the two relations
/// mention nothing but those leaves.
#[derive(Clone, Debug)]
pub struct SpecSummary {
    /// The function whose calls this summary replaces.
    pub target: String,
    /// Private term universe for the fields below.
    pub table: TermTable,
    /// One fresh symbolic value per target parameter, in order.
    pub formals: Vec<TermId>,
    /// Fresh symbolic value of the target's return sort.
    pub result: TermId,
    /// Bool term over the formal leaves; checked at every call site.
    pub precondition: TermId,
    /// Bool term over the formal and result leaves; assumed at call sites
    /// in [`SummaryMode::General`].
    pub post_relation: TermId,
    pub mode: SummaryMode,
    pub provenance: Provenance,
    /// The one permitted call to the target sat under a branch; recorded
    /// for the report rather than rejected.
    pub call_under_branch: bool,
}

/// Summaries in scope, keyed by spec function name (the name
/// `enable_spec` statements use).
pub type SummaryMap = BTreeMap<String, SpecSummary>;

impl SpecSummary {
    /// The precondition instantiated over actual argument terms in `dst`.
    pub fn instantiate_precondition(
        &self,
        dst: &mut TermTable,
        actual_args: &[TermId],
    ) -> Result<TermId, String> {
        let map = self.arg_leaf_map(dst, actual_args)?;
        import_term(&self.table, self.precondition, dst, &map)
    }

    /// The post-relation instantiated over actual arguments and a result
    /// term in `dst`.
    pub fn instantiate_post(
        &self,
        dst: &mut TermTable,
        actual_args: &[TermId],
        result: TermId,
    ) -> Result<TermId, String> {
        let mut map = self.arg_leaf_map(dst, actual_args)?;
        bind_leaves(&self.table, self.result, dst, result, &mut map)?;
        import_term(&self.table, self.post_relation, dst, &map)
    }

    fn arg_leaf_map(
        &self,
        dst: &mut TermTable,
        actual_args: &[TermId],
    ) -> Result<HashMap<SymbolId, TermId>, String> {
        if actual_args.len() != self.formals.len() {
            return Err(format!(
                "summary for {} has {} formals, got {} arguments",
                self.target,
                self.formals.len(),
                actual_args.len()
            ));
        }
        let mut map = HashMap::new();
        for (formal, actual) in self.formals.iter().zip(actual_args) {
            bind_leaves(&self.table, *formal, dst, *actual, &mut map)?;
        }
        Ok(map)
    }
}

/// Map every scalar leaf symbol of a fresh symbolic value `formal` (in
/// `src`) to the corresponding projection of `actual` (in `dst`).
///
/// Fresh aggregates have a fixed shape — `MkArray`/`MkTuple`/`MkRecord`
/// over recursively fresh children, and for variants an `Ite` chain over a
/// fresh tag selecting freshly built arms — so the walk is driven by that
/// shape. Projections of constructor-shaped actuals fold away, so when the
/// actual is itself a fresh symbol the map sends leaves to leaves.
pub(crate) fn bind_leaves(
    src: &TermTable,
    formal: TermId,
    dst: &mut TermTable,
    actual: TermId,
    map: &mut HashMap<SymbolId, TermId>,
) -> Result<(), String> {
    let fsort = src.sort_of(formal).clone();
    let asort = dst.sort_of(actual).clone();
    if fsort != asort {
        return Err(format!(
            "formal of sort {fsort} instantiated with an argument of sort {asort}"
        ));
    }
    let node = src.node(formal);
    let op = node.op.clone();
    let children = node.children.clone();
    match (&fsort, &op) {
        (Sort::Bool | Sort::BitVec(_), Opcode::Symbol(s)) => {
            map.insert(*s, actual);
            Ok(())
        }
        (Sort::Unit, _) => Ok(()),
        (Sort::Array(_, n), Opcode::MkArray(_)) => {
            debug_assert_eq!(children.len(), *n);
            for (k, child) in children.iter().enumerate() {
                let idx = dst.const_bv(32, k as u128).map_err(|e| e.to_string())?;
                let elem = dst
                    .mk(Opcode::ArrayGet, &[actual, idx])
                    .map_err(|e| e.to_string())?;
                bind_leaves(src, *child, dst, elem, map)?;
            }
            Ok(())
        }
        (Sort::Tuple(_), Opcode::MkTuple) => {
            for (k, child) in children.iter().enumerate() {
                let field = dst
                    .mk(Opcode::TupleGet(k as u32), &[actual])
                    .map_err(|e| e.to_string())?;
                bind_leaves(src, *child, dst, field, map)?;
            }
            Ok(())
        }
        (Sort::Record { .. }, Opcode::MkRecord(_)) => {
            for (k, child) in children.iter().enumerate() {
                let field = dst
                    .mk(Opcode::RecordGet(k as u32), &[actual])
                    .map_err(|e| e.to_string())?;
                bind_leaves(src, *child, dst, field, map)?;
            }
            Ok(())
        }
        (Sort::Variant { .. }, _) => bind_variant_leaves(src, formal, dst, actual, map),
        _ => Err(format!(
            "formal value of sort {fsort} is not in fresh-symbol shape (op {op})"
        )),
    }
}

/// Variant case of [`bind_leaves`]: walk the `Ite(Eq(tag, k), arm_k, ...)`
/// chain a fresh variant expands to, mapping the tag symbol to
/// `VariantTag(actual)` and each arm payload to `VariantGet(k)(actual)`.
fn bind_variant_leaves(
    src: &TermTable,
    formal: TermId,
    dst: &mut TermTable,
    actual: TermId,
    map: &mut HashMap<SymbolId, TermId>,
) -> Result<(), String> {
    let bind_arm = |src: &TermTable,
                        arm_term: TermId,
                        dst: &mut TermTable,
                        map: &mut HashMap<SymbolId, TermId>|
     -> Result<(), String> {
        let node = src.node(arm_term);
        let Opcode::MkVariant { arm, .. } = node.op else {
            return Err("variant formal arm is not constructor-shaped".into());
        };
        let payload = node.children[0];
        let got = dst
            .mk(Opcode::VariantGet(arm), &[actual])
            .map_err(|e| e.to_string())?;
        bind_leaves(src, payload, dst, got, map)
    };

    let mut cur = formal;
    loop {
        let node = src.node(cur);
        match node.op {
            Opcode::Ite => {
                let (cond, then_arm, rest) =
                    (node.children[0], node.children[1], node.children[2]);
                // The chain condition is Eq(tag_symbol, constant).
                let cnode = src.node(cond);
                if !matches!(cnode.op, Opcode::Eq) {
                    return Err("variant formal selector is not a tag equality".into());
                }
                let (a, b) = (cnode.children[0], cnode.children[1]);
                let tag_sym = match (&src.node(a).op, &src.node(b).op) {
                    (Opcode::Symbol(s), Opcode::Const(_)) => *s,
                    (Opcode::Const(_), Opcode::Symbol(s)) => *s,
                    _ => return Err("variant formal selector is not a tag equality".into()),
                };
                let tag_actual = dst
                    .mk(Opcode::VariantTag, &[actual])
                    .map_err(|e| e.to_string())?;
                map.insert(tag_sym, tag_actual);
                bind_arm(src, then_arm, dst, map)?;
                cur = rest;
            }
            Opcode::MkVariant { .. } => return bind_arm(src, cur, dst, map),
            _ => return Err("variant formal is not in fresh-symbol shape".into()),
        }
    }
}

/// Concrete twin of [`bind_leaves`]: bind every leaf symbol of a fresh
/// formal so that evaluating the formal under `env` yields exactly `v`.
/// Used by concrete replay to evaluate summary relations over the actual
/// argument values of a call.
pub(crate) fn bind_concrete(
    src: &TermTable,
    formal: TermId,
    v: &ConcreteValue,
    env: &mut Env,
) -> Result<(), String> {
    let node = src.node(formal);
    match (&node.op, v) {
        (Opcode::Symbol(s), _) => {
            env.bind(*s, v.clone());
            Ok(())
        }
        (Opcode::UnitConst, ConcreteValue::Unit) => Ok(()),
        (Opcode::MkArray(_), ConcreteValue::Array(vs))
        | (Opcode::MkTuple, ConcreteValue::Tuple(vs))
        | (Opcode::MkRecord(_), ConcreteValue::Record(vs))
            if node.children.len() == vs.len() =>
        {
            for (child, cv) in node.children.iter().zip(vs) {
                bind_concrete(src, *child, cv, env)?;
            }
            Ok(())
        }
        (Opcode::Ite | Opcode::MkVariant { .. }, ConcreteValue::Variant { arm, payload }) => {
            bind_variant_concrete(src, formal, *arm, payload, env)
        }
        (op, _) => Err(format!(
            "formal value (op {op}) does not fit the concrete argument {v}"
        )),
    }
}

/// Variant case of [`bind_concrete`]: the fresh tag symbol gets the actual
/// arm number, the matching case's payload leaves get the actual payload,
/// and the other cases' leaves get their arm's default value (mirroring
/// wrong-arm reads, which yield defaults).
fn bind_variant_concrete(
    src: &TermTable,
    formal: TermId,
    arm: u32,
    payload: &ConcreteValue,
    env: &mut Env,
) -> Result<(), String> {
    let mut cur = formal;
    loop {
        let node = src.node(cur);
        match &node.op {
            Opcode::Ite => {
                let (cond, then_arm, rest) =
                    (node.children[0], node.children[1], node.children[2]);
                let cnode = src.node(cond);
                if !matches!(cnode.op, Opcode::Eq) {
                    return Err("variant formal selector is not a tag equality".into());
                }
                let (a, b) = (cnode.children[0], cnode.children[1]);
                let tag_sym = match (&src.node(a).op, &src.node(b).op) {
                    (Opcode::Symbol(s), Opcode::Const(_)) => *s,
                    (Opcode::Const(_), Opcode::Symbol(s)) => *s,
                    _ => return Err("variant formal selector is not a tag equality".into()),
                };
                env.bind(tag_sym, ConcreteValue::bv(TAG_WIDTH, u128::from(arm)));
                bind_case(src, then_arm, arm, payload, env)?;
                cur = rest;
            }
            Opcode::MkVariant { .. } => return bind_case(src, cur, arm, payload, env),
            _ => return Err("variant formal is not in fresh-symbol shape".into()),
        }
    }
}

fn bind_case(
    src: &TermTable,
    arm_term: TermId,
    actual_arm: u32,
    payload: &ConcreteValue,
    env: &mut Env,
) -> Result<(), String> {
    let node = src.node(arm_term);
    let Opcode::MkVariant { arm: k, sort } = &node.op else {
        return Err("variant formal arm is not constructor-shaped".into());
    };
    let child = node.children[0];
    if *k == actual_arm {
        bind_concrete(src, child, payload, env)
    } else {
        let Sort::Variant { arms, .. } = sort else {
            return Err("variant constructor carries a non-variant sort".into());
        };
        let d = ConcreteValue::default_of(&arms[*k as usize].1);
        bind_concrete(src, child, &d, env)
    }
}

/// Rebuild `root` (a term in `src`) inside `dst`, replacing every symbol
/// through `leaf_map`. Constants and structure are re-made with [`mk`],
/// so the result is simplified and interned in `dst`.
///
/// [`mk`]: TermTable::mk
pub(crate) fn import_term(
    src: &TermTable,
    root: TermId,
    dst: &mut TermTable,
    leaf_map: &HashMap<SymbolId, TermId>,
) -> Result<TermId, String> {
    let mut memo: HashMap<TermId, TermId> = HashMap::new();
    // Iterative post-order: a work item is (term, children-ready?).
    let mut stack = vec![(root, false)];
    while let Some((t, ready)) = stack.pop() {
        if memo.contains_key(&t) {
            continue;
        }
        let node = src.node(t);
        if !ready {
            stack.push((t, true));
            for &c in &node.children {
                stack.push((c, false));
            }
            continue;
        }
        let mapped = match &node.op {
            Opcode::Symbol(s) => match leaf_map.get(s) {
                Some(&d) => d,
                None => {
                    let info = src.symbol_info(*s);
                    return Err(format!(
                        "term mentions symbol {}!{} which no formal binds",
                        info.name, info.ordinal
                    ));
                }
            },
            op => {
                let children: Vec<TermId> = node
                    .children
                    .iter()
                    .map(|c| memo[c])
                    .collect();
                dst.mk(op.clone(), &children).map_err(|e| e.to_string())?
            }
        };
        memo.insert(t, mapped);
    }
    Ok(memo[&root])
}

// ---- Spec verification and summary extraction ------------------------------

/// Result of verifying one spec function: the full verification outcome,
/// plus the extracted summary when the verdict is [`Verdict::Proven`].
#[derive(Debug)]
pub struct SpecOutcome {
    pub outcome: TestOutcome,
    pub summary: Option<SpecSummary>,
}

/// Verify a spec function and, if it proves, extract its summary.
///
/// Verification executes the spec on fresh symbolic parameters with the
/// target's real body inlined and discharges every obligation. Extraction
/// re-runs it with target calls intercepted: the assumptions in force at
/// the call become the precondition, and the assertions after it (each
/// weakened by its own path condition) become the post-relation.
///
/// Structural requirements checked during extraction (violations are
/// errors, not verdicts, since the spec itself proved):
/// - the target is called exactly once across all executed paths;
/// - the spec's parameters are passed to the target unchanged, in order
///   (so the proof quantifies over exactly the target's argument space);
/// - nothing is assumed after the call (a later assumption could have
///   carried the proof, and call sites would never establish it);
/// - the precondition mentions only parameter leaves, and the relation
///   only parameter and result leaves.
pub fn verify_spec(
    prog: &Program,
    spec_fn: &str,
    summaries: &SummaryMap,
    config: &exec::Config,
) -> Result<SpecOutcome, String> {
    let vrun = exec::run_spec(prog, spec_fn, summaries, config, false)?;
    let outcome = vrun.outcome.expect("verification runs always discharge");
    if outcome.verdict != Verdict::Proven {
        return Ok(SpecOutcome {
            outcome,
            summary: None,
        });
    }
    let xrun = exec::run_spec(prog, spec_fn, summaries, config, true)?;
    let summary = extract_summary(prog, spec_fn, xrun)?;
    Ok(SpecOutcome {
        outcome,
        summary: Some(summary),
    })
}

/// Extract a summary from a spec without verifying it first.
///
/// The spec body still executes symbolically to harvest the call shape,
/// precondition, and post-relation, and the structural requirements of
/// [`verify_spec`] still apply — but no obligation is discharged, so the
/// summary states an unchecked contract. The provenance verdict is
/// `"trusted"` instead of `"proven"` to keep that visible in reports.
pub fn extract_unverified(
    prog: &Program,
    spec_fn: &str,
    summaries: &SummaryMap,
    config: &exec::Config,
) -> Result<SpecSummary, String> {
    let xrun = exec::run_spec(prog, spec_fn, summaries, config, true)?;
    let mut summary = extract_summary(prog, spec_fn, xrun)?;
    summary.provenance.verdict = "trusted".to_string();
    Ok(summary)
}

fn extract_summary(
    prog: &Program,
    spec_fn: &str,
    mut xrun: exec::SpecRun,
) -> Result<SpecSummary, String> {
    let fid = prog.func_id(spec_fn).expect("resolved by the spec run");
    let spec = prog.function(fid);
    let target = spec
        .spec_target()
        .expect("checked by the spec run")
        .to_string();

    if xrun.intercepted.len() != 1 {
        return Err(format!(
            "`{spec_fn}` must call its target `{target}` exactly once; its execution called it {} times",
            xrun.intercepted.len()
        ));
    }
    let call = xrun.intercepted.remove(0);
    if xrun.assume_events != call.assume_events_before {
        return Err(format!(
            "`{spec_fn}` assumes after calling `{target}`; constraints established after the call cannot be summarized"
        ));
    }
    if call.args != xrun.formals {
        return Err(format!(
            "`{spec_fn}` must pass its parameters to `{target}` unchanged and in order"
        ));
    }

    let mut precondition = xrun.table.const_bool(true);
    for &a in &call.assumptions_at_call {
        precondition = xrun
            .table
            .mk(Opcode::And, &[precondition, a])
            .map_err(|e| e.to_string())?;
    }
    let mut post_relation = xrun.table.const_bool(true);
    for ob in xrun.obligations[call.obligations_before..].iter() {
        if ob.kind != exec::ObligationKind::Assert {
            continue;
        }
        let guarded = xrun
            .table
            .mk(Opcode::Implies, &[ob.context, ob.claim])
            .map_err(|e| e.to_string())?;
        post_relation = xrun
            .table
            .mk(Opcode::And, &[post_relation, guarded])
            .map_err(|e| e.to_string())?;
    }

    let mut allowed: BTreeSet<SymbolId> = BTreeSet::new();
    for &f in &xrun.formals {
        allowed.extend(xrun.table.symbols_in(f));
    }
    if let Some(&s) = xrun
        .table
        .symbols_in(precondition)
        .iter()
        .find(|s| !allowed.contains(s))
    {
        let info = xrun.table.symbol_info(s);
        return Err(format!(
            "the precondition of `{spec_fn}` depends on `{}`, which is not a parameter of `{target}`",
            info.name
        ));
    }
    allowed.extend(xrun.table.symbols_in(call.result));
    if let Some(&s) = xrun
        .table
        .symbols_in(post_relation)
        .iter()
        .find(|s| !allowed.contains(s))
    {
        let info = xrun.table.symbol_info(s);
        return Err(format!(
            "the relation asserted by `{spec_fn}` depends on `{}`, which is neither a parameter nor the result of `{target}`",
            info.name
        ));
    }

    let call_under_branch = xrun.table.as_const_bool(call.guard) != Some(true);
    let mode = match detect_substitution(prog, spec, &target) {
        Some(g) => SummaryMode::Substitution(g),
        None => SummaryMode::General,
    };
    Ok(SpecSummary {
        target,
        table: xrun.table,
        formals: xrun.formals,
        result: call.result,
        precondition,
        post_relation,
        mode,
        provenance: Provenance {
            spec_name: spec_fn.to_string(),
            verdict: outcome_name_proven(),
        },
        call_under_branch,
    })
}

fn outcome_name_proven() -> String {
    Verdict::Proven.name().to_string()
}

/// Recognize the reference-equivalence shape: the spec calls its target
/// and exactly one other (plain) function on identical operand lists,
/// and asserts equality of the two results. Such a summary can replace
/// target calls by running the reference body instead of assuming the
/// extracted relation, which keeps the solver query small.
fn detect_substitution(prog: &Program, spec: &Function, target: &str) -> Option<String> {
    let mut calls: Vec<(LocalId, &str, &[Operand])> = Vec::new();
    for b in &spec.blocks {
        for s in &b.stmts {
            if let StmtKind::Assign(l, Rvalue::Call(name, ops)) = &s.kind {
                calls.push((*l, name.as_str(), ops.as_slice()));
            }
        }
    }
    if calls.len() != 2 {
        return None;
    }
    let (t, g) = match (calls[0].1 == target, calls[1].1 == target) {
        (true, false) => (&calls[0], &calls[1]),
        (false, true) => (&calls[1], &calls[0]),
        _ => return None,
    };
    if t.2 != g.2 {
        return None;
    }
    let gf = prog.func(g.1)?;
    if gf.is_test() || gf.spec_target().is_some() {
        return None;
    }
    for b in &spec.blocks {
        for s in &b.stmts {
            let StmtKind::Assert(Operand::Local(e), _) = &s.kind else {
                continue;
            };
            for b2 in &spec.blocks {
                for s2 in &b2.stmts {
                    if let StmtKind::Assign(
                        l2,
                        Rvalue::BinOp(BinOpKind::Eq, Operand::Local(x), Operand::Local(y)),
                    ) = &s2.kind
                    {
                        if l2 == e && ((*x == t.0 && *y == g.0) || (*x == g.0 && *y == t.0)) {
                            return Some(g.1.to_string());
                        }
                    }
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend;
    use crate::ir;
    use crate::term::{ConcreteValue, Env};
    use crate::testgen;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn bv(w: u32, v: u128) -> ConcreteValue {
        ConcreteValue::bv(w, v)
    }

    /// Scalar import: `ult(x, 10)` over formal `x` lands as `ult(a+b, 10)`
    /// when `x` maps to `a+b`, and hash-consing makes the comparison exact.
    #[test]
    fn scalar_import_substitutes_and_reuses_interning() {
        let mut src = TermTable::new();
        let x = src.fresh_symbol("x", &Sort::BitVec(8)).unwrap();
        let ten = src.const_bv(8, 10).unwrap();
        let pre = src.mk(Opcode::BvULt, &[x, ten]).unwrap();

        let mut dst = TermTable::new();
        let a = dst.fresh_symbol("a", &Sort::BitVec(8)).unwrap();
        let b = dst.fresh_symbol("b", &Sort::BitVec(8)).unwrap();
        let sum = dst.mk(Opcode::BvAdd, &[a, b]).unwrap();

        let mut map = HashMap::new();
        bind_leaves(&src, x, &mut dst, sum, &mut map).unwrap();
        let got = import_term(&src, pre, &mut dst, &map).unwrap();

        let ten_d = dst.const_bv(8, 10).unwrap();
        let want = dst.mk(Opcode::BvULt, &[sum, ten_d]).unwrap();
        assert_eq!(got, want);

        // Unbound symbols are an error, not silent capture.
        let y = src.fresh_symbol("y", &Sort::BitVec(8)).unwrap();
        let bad = src.mk(Opcode::BvAdd, &[x, y]).unwrap();
        let err = import_term(&src, bad, &mut dst, &map).unwrap_err();
        assert!(err.contains("y!1"), "{err}");
    }

    #[test]
    fn sort_mismatch_between_formal_and_actual_is_rejected() {
        let mut src = TermTable::new();
        let x = src.fresh_symbol("x", &Sort::BitVec(8)).unwrap();
        let mut dst = TermTable::new();
        let flag = dst.fresh_symbol("f", &Sort::Bool).unwrap();
        let mut map = HashMap::new();
        let err = bind_leaves(&src, x, &mut dst, flag, &mut map).unwrap_err();
        assert!(err.contains("bv8"), "{err}");
    }

    /// Oracle: rebuilding a fresh formal of any sort over projections of an
    /// actual must evaluate exactly to the actual, for random environments.
    /// This pins the leaf map against the evaluator rather than against the
    /// walk's own structural assumptions.
    #[test]
    fn imported_formal_reconstructs_the_actual_value() {
        let sorts = vec![
            Sort::Bool,
            Sort::BitVec(1),
            Sort::BitVec(32),
            Sort::Unit,
            Sort::Array(Box::new(Sort::BitVec(8)), 3),
            Sort::Tuple(vec![Sort::BitVec(4), Sort::Bool]),
            testgen::record_sort(),
            testgen::variant_sort(),
            Sort::Array(Box::new(testgen::variant_sort()), 2),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(0xC0905E);
        for sort in &sorts {
            let mut src = TermTable::new();
            let formal = src.fresh_symbol("f", sort).unwrap();
            let mut dst = TermTable::new();
            let actual = dst.fresh_symbol("a", sort).unwrap();
            let mut map = HashMap::new();
            bind_leaves(&src, formal, &mut dst, actual, &mut map).unwrap();
            let rebuilt = import_term(&src, formal, &mut dst, &map).unwrap();
            for _ in 0..200 {
                let env = testgen::env_for(&dst, &mut rng);
                let got = dst.eval(rebuilt, &env).unwrap();
                let want = dst.eval(actual, &env).unwrap();
                assert_eq!(got, want, "sort {sort}");
            }
        }
    }

    /// Oracle for the concrete twin: for any sort and any concrete value
    /// of it, binding a fresh formal's leaves via [`bind_concrete`] makes
    /// the formal evaluate exactly to that value. Random values come from
    /// evaluating an unrelated fresh symbol under a random environment.
    #[test]
    fn concretely_bound_formal_evaluates_to_the_value() {
        let sorts = vec![
            Sort::Bool,
            Sort::BitVec(16),
            Sort::Unit,
            Sort::Array(Box::new(Sort::BitVec(8)), 3),
            Sort::Tuple(vec![Sort::BitVec(4), Sort::Bool]),
            testgen::record_sort(),
            testgen::variant_sort(),
            Sort::Array(Box::new(testgen::variant_sort()), 2),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(0xB1AD);
        for sort in &sorts {
            let mut gen = TermTable::new();
            let sample = gen.fresh_symbol("sample", sort).unwrap();
            let mut src = TermTable::new();
            let formal = src.fresh_symbol("f", sort).unwrap();
            for _ in 0..200 {
                let genv = testgen::env_for(&gen, &mut rng);
                let v = gen.eval(sample, &genv).unwrap();
                let mut env = Env::new();
                bind_concrete(&src, formal, &v, &mut env).unwrap();
                let got = src.eval(formal, &env).unwrap();
                assert_eq!(got, v, "sort {sort}");
            }
        }
        // Shape mismatches are reported, not silently bound.
        let mut src = TermTable::new();
        let formal = src
            .fresh_symbol("f", &Sort::Tuple(vec![Sort::Bool, Sort::Bool]))
            .unwrap();
        let mut env = Env::new();
        let err = bind_concrete(&src, formal, &ConcreteValue::bv(8, 1), &mut env).unwrap_err();
        assert!(err.contains("does not fit"), "{err}");
    }

    /// End-to-end instantiation through a hand-built summary: precondition
    /// and post-relation terms move into the destination table with actuals
    /// and a result substituted, and evaluate as expected.
    #[test]
    fn summary_instantiation_over_scalars() {
        // Summary for `inc`: pre = ult(n, 255), post = result == n + 1.
        let mut table = TermTable::new();
        let n = table.fresh_symbol("n", &Sort::BitVec(8)).unwrap();
        let r = table.fresh_symbol("r", &Sort::BitVec(8)).unwrap();
        let lim = table.const_bv(8, 255).unwrap();
        let pre = table.mk(Opcode::BvULt, &[n, lim]).unwrap();
        let one = table.const_bv(8, 1).unwrap();
        let n1 = table.mk(Opcode::BvAdd, &[n, one]).unwrap();
        let post = table.mk(Opcode::Eq, &[r, n1]).unwrap();
        let summary = SpecSummary {
            target: "inc".into(),
            table,
            formals: vec![n],
            result: r,
            precondition: pre,
            post_relation: post,
            mode: SummaryMode::General,
            provenance: Provenance {
                spec_name: "inc_spec".into(),
                verdict: "Proven".into(),
            },
            call_under_branch: false,
        };

        let mut dst = TermTable::new();
        let x = dst.fresh_symbol("x", &Sort::BitVec(8)).unwrap();
        let res = dst.fresh_symbol("res", &Sort::BitVec(8)).unwrap();
        let pre_i = summary.instantiate_precondition(&mut dst, &[x]).unwrap();
        let post_i = summary.instantiate_post(&mut dst, &[x], res).unwrap();

        let mut env = Env::new();
        let sid = |t: &TermTable, term: TermId| match t.node(term).op {
            Opcode::Symbol(s) => s,
            _ => panic!("not a symbol"),
        };
        env.bind(sid(&dst, x), bv(8, 41));
        env.bind(sid(&dst, res), bv(8, 42));
        assert_eq!(dst.eval(pre_i, &env).unwrap(), ConcreteValue::Bool(true));
        assert_eq!(dst.eval(post_i, &env).unwrap(), ConcreteValue::Bool(true));
        env.bind(sid(&dst, res), bv(8, 0));
        assert_eq!(dst.eval(post_i, &env).unwrap(), ConcreteValue::Bool(false));
        env.bind(sid(&dst, x), bv(8, 255));
        assert_eq!(dst.eval(pre_i, &env).unwrap(), ConcreteValue::Bool(false));

        // Argument count mismatches are reported.
        let err = summary.instantiate_precondition(&mut dst, &[]).unwrap_err();
        assert!(err.contains("formals"), "{err}");
    }

    fn parse(text: &str) -> Program {
        let p = match frontend::parse("compose_test.cir", text) {
            Ok(p) => p,
            Err(ds) => panic!("parse errors: {ds:#?}\nsource:\n{text}"),
        };
        let errs = ir::sort_check(&p);
        assert!(errs.is_empty(), "sort errors: {errs:#?}\nsource:\n{text}");
        p
    }

    fn verify(prog: &Program, spec: &str) -> Result<SpecOutcome, String> {
        verify_spec(prog, spec, &SummaryMap::new(), &exec::Config::default())
    }

    #[test]
    fn verified_spec_extracts_a_general_summary() {
        let text = "fn mul_add(a: bv8, b: bv8) -> bv8 {\nentry:\n  p = mul a, b\n  q = add p, b\n  ret q\n}\n\
            #[spec_for(mul_add)]\nfn mul_add_spec(a: bv8, b: bv8) -> bv8 {\nentry:\n  sa = ult a, 16:bv8\n  assume sa\n  sb = ult b, 16:bv8\n  assume sb\n  r = call mul_add(a, b)\n  w = mul a, b\n  w2 = add w, b\n  e = eq r, w2\n  assert e \"matches the inline computation\"\n  ret r\n}\n";
        let prog = parse(text);
        let out = verify(&prog, "mul_add_spec").unwrap();
        assert_eq!(out.outcome.verdict, Verdict::Proven, "{:?}", out.outcome);
        let s = out.summary.expect("proven specs extract");
        assert_eq!(s.target, "mul_add");
        assert_eq!(s.mode, SummaryMode::General);
        assert!(!s.call_under_branch);
        assert_eq!(s.provenance.spec_name, "mul_add_spec");

        // Constant instantiations fold all the way down, giving an exact
        // oracle for both relations: 3 * 4 + 4 = 16.
        let mut dst = TermTable::new();
        let a3 = dst.const_bv(8, 3).unwrap();
        let b4 = dst.const_bv(8, 4).unwrap();
        let pre = s.instantiate_precondition(&mut dst, &[a3, b4]).unwrap();
        assert_eq!(dst.as_const_bool(pre), Some(true));
        let a20 = dst.const_bv(8, 20).unwrap();
        let pre_bad = s.instantiate_precondition(&mut dst, &[a20, b4]).unwrap();
        assert_eq!(dst.as_const_bool(pre_bad), Some(false));
        let r16 = dst.const_bv(8, 16).unwrap();
        let post_ok = s.instantiate_post(&mut dst, &[a3, b4], r16).unwrap();
        assert_eq!(dst.as_const_bool(post_ok), Some(true));
        let r0 = dst.const_bv(8, 0).unwrap();
        let post_bad = s.instantiate_post(&mut dst, &[a3, b4], r0).unwrap();
        assert_eq!(dst.as_const_bool(post_bad), Some(false));
    }

    #[test]
    fn reference_equivalence_specs_extract_substitution_summaries() {
        let text = "fn twice(x: bv8) -> bv8 {\nentry:\n  d = add x, x\n  ret d\n}\n\
            fn twice_ref(x: bv8) -> bv8 {\nentry:\n  d = mul x, 2:bv8\n  ret d\n}\n\
            #[spec_for(twice)]\nfn twice_spec(x: bv8) -> bv8 {\nentry:\n  r = call twice(x)\n  s = call twice_ref(x)\n  e = eq r, s\n  assert e \"reference agrees\"\n  ret r\n}\n";
        let prog = parse(text);
        let out = verify(&prog, "twice_spec").unwrap();
        assert_eq!(out.outcome.verdict, Verdict::Proven, "{:?}", out.outcome);
        let s = out.summary.expect("proven specs extract");
        assert_eq!(s.mode, SummaryMode::Substitution("twice_ref".to_string()));

        // Sampled soundness of the extracted relation: it must hold for
        // exactly the reference function's output, computed independently.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let x: u128 = rng.gen_range(0..256);
            let want = (x + x) & 0xff;
            let mut dst = TermTable::new();
            let xa = dst.const_bv(8, x).unwrap();
            let ok = dst.const_bv(8, want).unwrap();
            let post = s.instantiate_post(&mut dst, &[xa], ok).unwrap();
            assert_eq!(dst.as_const_bool(post), Some(true), "x = {x}");
            let bad = dst.const_bv(8, (want + 1) & 0xff).unwrap();
            let post2 = s.instantiate_post(&mut dst, &[xa], bad).unwrap();
            assert_eq!(dst.as_const_bool(post2), Some(false), "x = {x}");
        }
    }

    #[test]
    fn malformed_spec_shapes_are_rejected_at_extraction() {
        let id = "fn idf(x: bv8) -> bv8 {\nentry:\n  ret x\n}\n";
        let cases = [
            (
                format!("{id}#[spec_for(idf)]\nfn s(x: bv8) -> bv8 {{\nentry:\n  ret x\n}}\n"),
                "exactly once",
            ),
            (
                format!("{id}#[spec_for(idf)]\nfn s(x: bv8) -> bv8 {{\nentry:\n  r1 = call idf(x)\n  r2 = call idf(x)\n  ret r1\n}}\n"),
                "exactly once",
            ),
            (
                format!("{id}#[spec_for(idf)]\nfn s(x: bv8) -> bv8 {{\nentry:\n  y = add x, 1:bv8\n  r = call idf(y)\n  ret r\n}}\n"),
                "unchanged",
            ),
            (
                format!("{id}#[spec_for(idf)]\nfn s(x: bv8) -> bv8 {{\nentry:\n  r = call idf(x)\n  c = ult r, 200:bv8\n  assume c\n  ret r\n}}\n"),
                "assumes after",
            ),
            (
                format!("{id}#[spec_for(idf)]\nfn s(x: bv8) -> bv8 {{\nentry:\n  other = symbolic bv8 \"other\"\n  c = ult other, 200:bv8\n  assume c\n  r = call idf(x)\n  ret r\n}}\n"),
                "not a parameter",
            ),
            // A provable assertion (a tautology) that still mentions a
            // symbol outside the parameter/result universe.
            (
                format!("{id}#[spec_for(idf)]\nfn s(x: bv8) -> bv8 {{\nentry:\n  r = call idf(x)\n  other = symbolic bv8 \"other\"\n  c = ult other, 5:bv8\n  nc = not c\n  e = or c, nc\n  assert e \"depends on a free input\"\n  ret r\n}}\n"),
                "neither a parameter nor the result",
            ),
        ];
        for (text, needle) in &cases {
            let prog = parse(text);
            let err = verify(&prog, "s").unwrap_err();
            assert!(err.contains(needle), "want `{needle}` in `{err}`\n{text}");
        }
    }

    #[test]
    fn refuted_specs_yield_no_summary() {
        let text = "fn inc(n: bv8) -> bv8 {\nentry:\n  r = add n, 1:bv8\n  ret r\n}\n\
            #[spec_for(inc)]\nfn inc_spec(n: bv8) -> bv8 {\nentry:\n  r = call inc(n)\n  w = add n, 2:bv8\n  e = eq r, w\n  assert e \"off by one\"\n  ret r\n}\n";
        let prog = parse(text);
        let out = verify(&prog, "inc_spec").unwrap();
        let Verdict::Refuted { failed, .. } = &out.outcome.verdict else {
            panic!("expected a refutation, got {:?}", out.outcome.verdict);
        };
        assert_eq!(failed.kind, exec::ObligationKind::Assert);
        assert!(out.summary.is_none());
    }

    #[test]
    fn extracted_summaries_drive_tests_end_to_end() {
        let text = "fn inc2(n: bv8) -> bv8 {\nentry:\n  i1 = add n, 1:bv8\n  i2 = add i1, 1:bv8\n  ret i2\n}\n\
            #[spec_for(inc2)]\nfn inc2_spec(n: bv8) -> bv8 {\nentry:\n  sa = ult n, 100:bv8\n  assume sa\n  r = call inc2(n)\n  w = add n, 2:bv8\n  e = eq r, w\n  assert e \"adds two\"\n  ret r\n}\n\
            #[test]\nfn good() -> unit {\nentry:\n  enable_spec inc2_spec\n  x = symbolic bv8 \"x\"\n  c = ult x, 50:bv8\n  assume c\n  y = call inc2(x)\n  w = add x, 2:bv8\n  e = eq y, w\n  assert e \"summary value\"\n  ret ()\n}\n\
            #[test]\nfn bad() -> unit {\nentry:\n  enable_spec inc2_spec\n  x = symbolic bv8 \"x\"\n  c = ult x, 50:bv8\n  assume c\n  y = call inc2(x)\n  w = add x, 3:bv8\n  e = eq y, w\n  assert e \"wrong increment\"\n  ret ()\n}\n\
            #[test]\nfn unguarded() -> unit {\nentry:\n  enable_spec inc2_spec\n  x = symbolic bv8 \"x\"\n  y = call inc2(x)\n  ret ()\n}\n";
        let prog = parse(text);
        let out = verify(&prog, "inc2_spec").unwrap();
        assert_eq!(out.outcome.verdict, Verdict::Proven, "{:?}", out.outcome);
        let mut map = SummaryMap::new();
        map.insert("inc2_spec".to_string(), out.summary.unwrap());
        let config = exec::Config::default();

        let good = exec::run_test(&prog, "good", &map, &config);
        assert_eq!(good.verdict, Verdict::Proven, "{good:?}");

        // Wrong relation refutes, and the confirming replay goes through
        // the summary path: precondition evaluation plus a havoced result
        // drawn from the model.
        let bad = exec::run_test(&prog, "bad", &map, &config);
        let Verdict::Refuted { failed, .. } = &bad.verdict else {
            panic!("expected a refutation, got {:?}", bad.verdict);
        };
        assert_eq!(failed.kind, exec::ObligationKind::Assert);

        // Without the assumption the precondition itself refutes.
        let unguarded = exec::run_test(&prog, "unguarded", &map, &config);
        let Verdict::Refuted { model, failed } = &unguarded.verdict else {
            panic!("expected a refutation, got {:?}", unguarded.verdict);
        };
        assert_eq!(failed.kind, exec::ObligationKind::SpecPrecondition);
        let Some(ConcreteValue::Bv { value, .. }) = model.get("x", 0) else {
            panic!("model must bind x: {model}");
        };
        assert!(*value >= 100, "counterexample must violate n < 100: {value}");
    }
}
