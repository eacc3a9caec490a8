//! Allocation-based symbolic memory.
//!
//! Every allocation is a strongly typed cell holding one term; references
//! are guarded unions of (allocation, path) pairs so they survive state
//! merging. Paths address sub-components — record/tuple fields, variant
//! payloads, and array elements, where the element index may be fully
//! symbolic. Reads and writes at symbolic indices expand to `Ite` chains
//! over the elements and report the bounds claims they rely on; nothing
//! here has a byte-level layout, and reference sorts never enter the heap.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::term::{mask, Opcode, Sort, TermError, TermId, TermTable};

/// Dense per-execution allocation identifier; never reused within a run.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct AllocId(pub u32);

impl fmt::Display for AllocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{}", self.0)
    }
}

/// One step from a value to a sub-component of it.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum PathSel {
    /// Tuple or record field by position.
    Field(u32),
    /// Payload of the given variant arm.
    ArmPayload(u32),
    /// Array element; the index term may be symbolic.
    Index(TermId),
}

pub type Path = Vec<PathSel>;

/// One alternative of a guarded reference.
#[derive(Clone, PartialEq, Debug)]
pub struct RefAlt {
    pub guard: TermId,
    pub alloc: AllocId,
    pub path: Path,
}

/// A reference value: a nonempty union of alternatives with pairwise
/// exclusive guards, all addressing components of the same sort. Single
/// allocation references are the one-alternative case with guard `true`.
#[derive(Clone, PartialEq, Debug)]
pub struct GuardedRef {
    pub alts: Vec<RefAlt>,
}

/// Default cap on alternatives per reference; exceeding it is an engine
/// error rather than silent blowup.
pub const DEFAULT_REF_MUX_CAP: usize = 16;

/// A bounds claim emitted by a read or write: under `guard`, the access
/// required `claim` (literally `ult(index, length)`, pre-folded when the
/// index is constant or cannot overflow the array).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct BoundsCheck {
    pub guard: TermId,
    pub claim: TermId,
}

#[derive(Error, Clone, PartialEq, Debug)]
pub enum MemError {
    #[error("allocation {0} does not exist")]
    Missing(AllocId),
    #[error("access through dead allocation {0}")]
    Dead(AllocId),
    #[error("reference mux explosion: {got} alternatives exceed the cap of {cap}")]
    MuxExplosion { got: usize, cap: usize },
    #[error("invalid projection: {0}")]
    BadProjection(String),
    #[error("sort mismatch: expected {expected}, got {got}")]
    SortMismatch { expected: Sort, got: Sort },
    #[error("allocations cannot hold references (sort {0})")]
    RefInHeap(Sort),
    #[error("term construction failed: {0}")]
    Term(String),
}

impl From<TermError> for MemError {
    fn from(e: TermError) -> MemError {
        MemError::Term(e.to_string())
    }
}

#[derive(Clone, Debug)]
struct Cell {
    sort: Sort,
    contents: TermId,
    live: bool,
}

/// The symbolic heap: allocation id → typed contents plus a liveness flag.
#[derive(Clone, Default, Debug)]
pub struct Heap {
    cells: BTreeMap<u32, Cell>,
    next: u32,
}

impl Heap {
    pub fn new() -> Heap {
        Heap::default()
    }

    fn cell(&self, a: AllocId) -> Result<&Cell, MemError> {
        self.cells.get(&a.0).ok_or(MemError::Missing(a))
    }

    fn live_cell(&self, a: AllocId) -> Result<&Cell, MemError> {
        let c = self.cell(a)?;
        if !c.live {
            return Err(MemError::Dead(a));
        }
        Ok(c)
    }

    /// Create a fresh allocation holding `init` and return the reference
    /// to it (one alternative, guard `true`, empty path).
    pub fn alloc(
        &mut self,
        t: &mut TermTable,
        sort: Sort,
        init: TermId,
    ) -> Result<GuardedRef, MemError> {
        if sort.has_ref() {
            return Err(MemError::RefInHeap(sort));
        }
        let got = t.sort_of(init).clone();
        if got != sort {
            return Err(MemError::SortMismatch { expected: sort, got });
        }
        let id = AllocId(self.next);
        self.next += 1;
        self.cells.insert(
            id.0,
            Cell {
                sort,
                contents: init,
                live: true,
            },
        );
        let guard = t.const_bool(true);
        Ok(GuardedRef {
            alts: vec![RefAlt {
                guard,
                alloc: id,
                path: Vec::new(),
            }],
        })
    }

    /// Mark an allocation dead (scope exit). Idempotent; later reads and
    /// writes through it are engine errors, not obligations.
    pub fn kill(&mut self, a: AllocId) -> Result<(), MemError> {
        match self.cells.get_mut(&a.0) {
            Some(c) => {
                c.live = false;
                Ok(())
            }
            None => Err(MemError::Missing(a)),
        }
    }

    pub fn is_live(&self, a: AllocId) -> bool {
        self.cells.get(&a.0).is_some_and(|c| c.live)
    }

    /// Raw cell contents, regardless of liveness (inspection only).
    pub fn contents(&self, a: AllocId) -> Result<TermId, MemError> {
        Ok(self.cell(a)?.contents)
    }

    /// Replace the contents of an existing allocation wholesale. Used by the
    /// engine to roll a heap back to a fork snapshot and to install merged
    /// contents; the new term must have the allocation's declared sort.
    pub fn set_contents(
        &mut self,
        t: &TermTable,
        a: AllocId,
        contents: TermId,
    ) -> Result<(), MemError> {
        let cell = self.cells.get_mut(&a.0).ok_or(MemError::Missing(a))?;
        let got = t.sort_of(contents);
        if *got != cell.sort {
            return Err(MemError::SortMismatch {
                expected: cell.sort.clone(),
                got: got.clone(),
            });
        }
        cell.contents = contents;
        Ok(())
    }

    pub fn alloc_sort(&self, a: AllocId) -> Result<&Sort, MemError> {
        Ok(&self.cell(a)?.sort)
    }

    pub fn alloc_ids(&self) -> impl Iterator<Item = AllocId> + '_ {
        self.cells.keys().map(|k| AllocId(*k))
    }

    /// The sort a reference points at; checks that every alternative
    /// agrees.
    pub fn pointee_sort(&self, r: &GuardedRef) -> Result<Sort, MemError> {
        let mut out: Option<Sort> = None;
        for alt in &r.alts {
            let s = sort_at(&self.cell(alt.alloc)?.sort, &alt.path)?;
            match &out {
                None => out = Some(s),
                Some(prev) if *prev == s => {}
                Some(prev) => {
                    return Err(MemError::SortMismatch {
                        expected: prev.clone(),
                        got: s,
                    })
                }
            }
        }
        out.ok_or_else(|| MemError::BadProjection("reference has no alternatives".into()))
    }

    /// Guard-weighted read: the value is an `Ite` cascade over the
    /// alternatives (last alternative as the default), and every symbolic
    /// array index contributes a [`BoundsCheck`].
    pub fn read(
        &self,
        t: &mut TermTable,
        r: &GuardedRef,
    ) -> Result<(TermId, Vec<BoundsCheck>), MemError> {
        let mut checks = Vec::new();
        let mut vals = Vec::new();
        for alt in &r.alts {
            let cell = self.live_cell(alt.alloc)?;
            vals.push(read_path(t, cell.contents, &alt.path, alt.guard, &mut checks)?);
        }
        let mut acc = *vals.last().expect("references are nonempty");
        for i in (0..vals.len() - 1).rev() {
            acc = t.mk(Opcode::Ite, &[r.alts[i].guard, vals[i], acc])?;
        }
        dedupe(&mut checks);
        Ok((acc, checks))
    }

    /// Write `v` through the reference: each alternative's allocation is
    /// functionally updated along the path, and the guard preserves the
    /// old contents on the paths where the alternative is not taken.
    pub fn write(
        &mut self,
        t: &mut TermTable,
        r: &GuardedRef,
        v: TermId,
    ) -> Result<Vec<BoundsCheck>, MemError> {
        let expected = self.pointee_sort(r)?;
        let got = t.sort_of(v).clone();
        if got != expected {
            return Err(MemError::SortMismatch { expected, got });
        }
        let mut checks = Vec::new();
        // Alternatives apply one after another: guards are pairwise
        // exclusive, so at most one lands, and sequential application is
        // correct even when several alternatives share an allocation.
        for alt in &r.alts {
            let old = self.live_cell(alt.alloc)?.contents;
            let updated = write_path(t, old, &alt.path, v, alt.guard, &mut checks)?;
            let guarded = if t.as_const_bool(alt.guard) == Some(true) {
                updated
            } else {
                t.mk(Opcode::Ite, &[alt.guard, updated, old])?
            };
            self.cells
                .get_mut(&alt.alloc.0)
                .expect("live_cell checked existence")
                .contents = guarded;
        }
        dedupe(&mut checks);
        Ok(checks)
    }

    /// Narrow a reference by one selector; appends it to every
    /// alternative after validating it against the pointee sort.
    pub fn project(
        &self,
        t: &TermTable,
        r: &GuardedRef,
        sel: &PathSel,
    ) -> Result<GuardedRef, MemError> {
        let pointee = self.pointee_sort(r)?;
        check_selector(t, &pointee, sel)?;
        let mut alts = r.alts.clone();
        for alt in &mut alts {
            alt.path.push(sel.clone());
        }
        Ok(GuardedRef { alts })
    }

    /// Merge two references under a condition: alternatives from `a` are
    /// kept under `c`, from `b` under `¬c`, with identical
    /// (allocation, path) pairs coalesced into one alternative whose
    /// guard is `Ite(c, guard_a, guard_b)`.
    pub fn mux_refs(
        &self,
        t: &mut TermTable,
        c: TermId,
        a: &GuardedRef,
        b: &GuardedRef,
        cap: usize,
    ) -> Result<GuardedRef, MemError> {
        if t.sort_of(c) != &Sort::Bool {
            return Err(MemError::SortMismatch {
                expected: Sort::Bool,
                got: t.sort_of(c).clone(),
            });
        }
        let sa = self.pointee_sort(a)?;
        let sb = self.pointee_sort(b)?;
        if sa != sb {
            return Err(MemError::SortMismatch { expected: sa, got: sb });
        }
        let not_c = t.mk(Opcode::Not, &[c])?;
        let mut alts: Vec<RefAlt> = Vec::new();
        for alt in &a.alts {
            let guard = match b
                .alts
                .iter()
                .find(|x| x.alloc == alt.alloc && x.path == alt.path)
            {
                Some(other) => t.mk(Opcode::Ite, &[c, alt.guard, other.guard])?,
                None => t.mk(Opcode::And, &[c, alt.guard])?,
            };
            alts.push(RefAlt {
                guard,
                alloc: alt.alloc,
                path: alt.path.clone(),
            });
        }
        for alt in &b.alts {
            if a.alts
                .iter()
                .any(|x| x.alloc == alt.alloc && x.path == alt.path)
            {
                continue; // already coalesced above
            }
            let guard = t.mk(Opcode::And, &[not_c, alt.guard])?;
            alts.push(RefAlt {
                guard,
                alloc: alt.alloc,
                path: alt.path.clone(),
            });
        }
        alts.retain(|alt| t.as_const_bool(alt.guard) != Some(false));
        if alts.is_empty() {
            return Err(MemError::BadProjection(
                "merged reference has no feasible alternative".into(),
            ));
        }
        if alts.len() > cap {
            return Err(MemError::MuxExplosion {
                got: alts.len(),
                cap,
            });
        }
        Ok(GuardedRef { alts })
    }

    /// Debug rendering: one `@id : sort = %term` line per allocation in
    /// id order; dead allocations are flagged.
    pub fn dump(&self, _t: &TermTable) -> String {
        let mut out = String::new();
        for (id, cell) in &self.cells {
            out.push_str(&format!("@{} : {} = %{}", id, cell.sort, cell.contents.0));
            if !cell.live {
                out.push_str(" (dead)");
            }
            out.push('\n');
        }
        out
    }
}

/// Drop repeated claims (a nested write emits the same inner check once
/// per outer element) while preserving first-occurrence order.
fn dedupe(checks: &mut Vec<BoundsCheck>) {
    let mut seen = Vec::with_capacity(checks.len());
    checks.retain(|c| {
        if seen.contains(c) {
            false
        } else {
            seen.push(*c);
            true
        }
    });
}

/// The sort reached by following `path` from a value of sort `base`.
pub fn sort_at(base: &Sort, path: &[PathSel]) -> Result<Sort, MemError> {
    let mut cur = base.clone();
    for sel in path {
        cur = step_sort(&cur, sel)?;
    }
    Ok(cur)
}

fn step_sort(cur: &Sort, sel: &PathSel) -> Result<Sort, MemError> {
    match sel {
        PathSel::Field(i) => match cur {
            Sort::Tuple(fs) => fs.get(*i as usize).cloned().ok_or_else(|| {
                MemError::BadProjection(format!("tuple {cur} has no field {i}"))
            }),
            Sort::Record { fields, .. } => {
                fields.get(*i as usize).map(|(_, s)| s.clone()).ok_or_else(|| {
                    MemError::BadProjection(format!("record {cur} has no field {i}"))
                })
            }
            other => Err(MemError::BadProjection(format!(
                "field projection needs a tuple or record, got {other}"
            ))),
        },
        PathSel::ArmPayload(a) => match cur {
            Sort::Variant { arms, .. } => {
                arms.get(*a as usize).map(|(_, s)| s.clone()).ok_or_else(|| {
                    MemError::BadProjection(format!("variant {cur} has no arm {a}"))
                })
            }
            other => Err(MemError::BadProjection(format!(
                "arm payload projection needs a variant, got {other}"
            ))),
        },
        PathSel::Index(_) => match cur {
            Sort::Array(e, n) => {
                if *n == 0 {
                    Err(MemError::BadProjection(
                        "cannot project into a zero-length array".into(),
                    ))
                } else {
                    Ok((**e).clone())
                }
            }
            other => Err(MemError::BadProjection(format!(
                "index projection needs an array, got {other}"
            ))),
        },
    }
}

fn check_selector(t: &TermTable, pointee: &Sort, sel: &PathSel) -> Result<(), MemError> {
    if let PathSel::Index(i) = sel {
        if !matches!(t.sort_of(*i), Sort::BitVec(_)) {
            return Err(MemError::BadProjection(format!(
                "array index must be a bitvector, got {}",
                t.sort_of(*i)
            )));
        }
    }
    step_sort(pointee, sel).map(|_| ())
}

/// `ult(index, length)` as a term: constant `true` when no value of the
/// index's width can reach the length.
fn bounds_claim(t: &mut TermTable, idx: TermId, len: usize) -> Result<TermId, MemError> {
    let Sort::BitVec(w) = *t.sort_of(idx) else {
        return Err(MemError::BadProjection(format!(
            "array index must be a bitvector, got {}",
            t.sort_of(idx)
        )));
    };
    if len as u128 > mask(w) {
        return Ok(t.const_bool(true));
    }
    let len_t = t.const_bv(w, len as u128)?;
    Ok(t.mk(Opcode::BvULt, &[idx, len_t])?)
}

/// Element `k` of an array term, via a constant-index get (which folds
/// away when the array is constructor-shaped).
fn elem_at(t: &mut TermTable, arr: TermId, k: usize) -> Result<TermId, MemError> {
    let idx = t.const_bv(32, k as u128)?;
    Ok(t.mk(Opcode::ArrayGet, &[arr, idx])?)
}

fn read_path(
    t: &mut TermTable,
    root: TermId,
    path: &[PathSel],
    guard: TermId,
    checks: &mut Vec<BoundsCheck>,
) -> Result<TermId, MemError> {
    let mut cur = root;
    for sel in path {
        let sort = t.sort_of(cur).clone();
        cur = match sel {
            PathSel::Field(i) => match &sort {
                Sort::Tuple(_) => t.mk(Opcode::TupleGet(*i), &[cur])?,
                Sort::Record { .. } => t.mk(Opcode::RecordGet(*i), &[cur])?,
                other => {
                    return Err(MemError::BadProjection(format!(
                        "field projection needs a tuple or record, got {other}"
                    )))
                }
            },
            PathSel::ArmPayload(a) => t.mk(Opcode::VariantGet(*a), &[cur])?,
            PathSel::Index(i) => {
                let Sort::Array(_, n) = &sort else {
                    return Err(MemError::BadProjection(format!(
                        "index projection needs an array, got {sort}"
                    )));
                };
                let n = *n;
                let claim = bounds_claim(t, *i, n)?;
                checks.push(BoundsCheck { guard, claim });
                if t.as_const_bv(*i).is_some() {
                    t.mk(Opcode::ArrayGet, &[cur, *i])?
                } else {
                    // Expand to an Ite chain over the elements; out-of-range
                    // indices fall through to the last element, matching the
                    // clamp semantics of constant gets.
                    let Sort::BitVec(w) = *t.sort_of(*i) else {
                        unreachable!("checked by bounds_claim");
                    };
                    let mut acc = elem_at(t, cur, n - 1)?;
                    for k in (0..n - 1).rev() {
                        if k as u128 > mask(w) {
                            continue; // index can never select this element
                        }
                        let k_t = t.const_bv(w, k as u128)?;
                        let is_k = t.mk(Opcode::Eq, &[*i, k_t])?;
                        let e_k = elem_at(t, cur, k)?;
                        acc = t.mk(Opcode::Ite, &[is_k, e_k, acc])?;
                    }
                    acc
                }
            }
        };
    }
    Ok(cur)
}

fn write_path(
    t: &mut TermTable,
    old: TermId,
    path: &[PathSel],
    v: TermId,
    guard: TermId,
    checks: &mut Vec<BoundsCheck>,
) -> Result<TermId, MemError> {
    let Some((sel, rest)) = path.split_first() else {
        return Ok(v);
    };
    let sort = t.sort_of(old).clone();
    match sel {
        PathSel::Field(i) => {
            let (getter, maker, arity): (fn(u32) -> Opcode, Opcode, usize) = match &sort {
                Sort::Tuple(fs) => (Opcode::TupleGet, Opcode::MkTuple, fs.len()),
                Sort::Record { fields, .. } => (
                    Opcode::RecordGet,
                    Opcode::MkRecord(sort.clone()),
                    fields.len(),
                ),
                other => {
                    return Err(MemError::BadProjection(format!(
                        "field projection needs a tuple or record, got {other}"
                    )))
                }
            };
            let mut children = Vec::with_capacity(arity);
            for j in 0..arity {
                let child = t.mk(getter(j as u32), &[old])?;
                children.push(if j == *i as usize {
                    write_path(t, child, rest, v, guard, checks)?
                } else {
                    child
                });
            }
            Ok(t.mk(maker, &children)?)
        }
        PathSel::ArmPayload(a) => {
            let Sort::Variant { .. } = &sort else {
                return Err(MemError::BadProjection(format!(
                    "arm payload projection needs a variant, got {sort}"
                )));
            };
            let payload = t.mk(Opcode::VariantGet(*a), &[old])?;
            let updated = write_path(t, payload, rest, v, guard, checks)?;
            Ok(t.mk(
                Opcode::MkVariant {
                    sort: sort.clone(),
                    arm: *a,
                },
                &[updated],
            )?)
        }
        PathSel::Index(i) => {
            let Sort::Array(e, n) = &sort else {
                return Err(MemError::BadProjection(format!(
                    "index projection needs an array, got {sort}"
                )));
            };
            let (e, n) = ((**e).clone(), *n);
            let claim = bounds_claim(t, *i, n)?;
            checks.push(BoundsCheck { guard, claim });
            let Sort::BitVec(w) = *t.sort_of(*i) else {
                unreachable!("checked by bounds_claim");
            };
            let konst = t.as_const_bv(*i);
            let mut children = Vec::with_capacity(n);
            for k in 0..n {
                let old_k = elem_at(t, old, k)?;
                let child = match konst {
                    // Constant index: update exactly that element;
                    // out-of-range constants leave the array unchanged
                    // (the bounds claim is refuted separately).
                    Some(c) => {
                        if c == k as u128 {
                            write_path(t, old_k, rest, v, guard, checks)?
                        } else {
                            old_k
                        }
                    }
                    // Symbolic index: per-element Ite(index = k, new, old).
                    None => {
                        if k as u128 > mask(w) {
                            old_k
                        } else {
                            let k_t = t.const_bv(w, k as u128)?;
                            let is_k = t.mk(Opcode::Eq, &[*i, k_t])?;
                            let new_k = write_path(t, old_k, rest, v, guard, checks)?;
                            t.mk(Opcode::Ite, &[is_k, new_k, old_k])?
                        }
                    }
                };
                children.push(child);
            }
            Ok(t.mk(Opcode::MkArray(e), &children)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::term::{ConcreteValue, Env, SymbolId};
    use crate::testgen;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn bv(w: u32, v: u128) -> ConcreteValue {
        ConcreteValue::bv(w, v)
    }

    fn sid(t: &TermTable, term: TermId) -> SymbolId {
        match t.node(term).op {
            Opcode::Symbol(s) => s,
            ref other => panic!("expected a symbol term, got {other:?}"),
        }
    }

    fn setup() -> (TermTable, Heap) {
        (TermTable::new(), Heap::new())
    }

    #[test]
    fn alloc_basics_and_field_projection() {
        let (mut t, mut h) = setup();
        // Zero-filled array: reading the fresh allocation returns the init.
        let zero = t.const_bv(32, 0).unwrap();
        let arr = t.mk(Opcode::MkArray(Sort::BitVec(32)), &[zero; 8]).unwrap();
        let s_arr = t.sort_of(arr).clone();
        let r1 = h.alloc(&mut t, s_arr, arr).unwrap();
        let (v, checks) = h.read(&mut t, &r1).unwrap();
        assert_eq!(v, arr);
        assert!(checks.is_empty());

        // Distinct allocations get distinct ids.
        let pair_sort = testgen::record_sort();
        let rec = t.fresh_symbol("rec", &pair_sort).unwrap();
        let r2 = h.alloc(&mut t, pair_sort, rec).unwrap();
        assert_ne!(r1.alts[0].alloc, r2.alts[0].alloc);

        // Projecting to the second field reads exactly that component.
        let r2y = h.project(&t, &r2, &PathSel::Field(1)).unwrap();
        let (y, checks) = h.read(&mut t, &r2y).unwrap();
        assert!(checks.is_empty());
        let want = t.mk(Opcode::RecordGet(1), &[rec]).unwrap();
        assert_eq!(y, want);
        assert_eq!(h.pointee_sort(&r2y).unwrap(), Sort::Bool);
    }

    #[test]
    fn concrete_index_read_folds_with_trivial_claim() {
        let (mut t, mut h) = setup();
        let elems: Vec<TermId> = (0..8).map(|k| t.const_bv(32, k * 10).unwrap()).collect();
        let arr = t.mk(Opcode::MkArray(Sort::BitVec(32)), &elems).unwrap();
        let s_arr = t.sort_of(arr).clone();
        let r = h.alloc(&mut t, s_arr, arr).unwrap();
        let i3 = t.const_bv(4, 3).unwrap();
        let r3 = h.project(&t, &r, &PathSel::Index(i3)).unwrap();
        let (v, checks) = h.read(&mut t, &r3).unwrap();
        assert_eq!(v, elems[3]);
        assert_eq!(checks.len(), 1);
        assert_eq!(t.as_const_bool(checks[0].claim), Some(true));
    }

    #[test]
    fn symbolic_index_read_matches_enumeration() {
        // Independent oracle: all four bv2 index values against a 2-array.
        let (mut t, mut h) = setup();
        let arr = t
            .fresh_symbol("a", &Sort::Array(Box::new(Sort::BitVec(8)), 2))
            .unwrap();
        let (a0, a1) = (t.node(arr).children[0], t.node(arr).children[1]);
        let i = t.fresh_symbol("i", &Sort::BitVec(2)).unwrap();
        let s_arr = t.sort_of(arr).clone();
        let r = h.alloc(&mut t, s_arr, arr).unwrap();
        let ri = h.project(&t, &r, &PathSel::Index(i)).unwrap();
        let (val, checks) = h.read(&mut t, &ri).unwrap();
        assert_eq!(checks.len(), 1);
        for iv in 0..4u128 {
            let mut env = Env::new();
            env.bind(sid(&t, a0), bv(8, 7));
            env.bind(sid(&t, a1), bv(8, 9));
            env.bind(sid(&t, i), bv(2, iv));
            let got = t.eval(val, &env).unwrap();
            let expect = if iv == 0 { 7 } else { 9 }; // clamp at >= 1
            assert_eq!(got, bv(8, expect), "i = {iv}");
            let claim = t.eval(checks[0].claim, &env).unwrap();
            assert_eq!(claim, ConcreteValue::Bool(iv < 2), "claim at i = {iv}");
        }
    }

    #[test]
    fn concrete_write_then_read_returns_value() {
        let (mut t, mut h) = setup();
        let arr = t
            .fresh_symbol("a", &Sort::Array(Box::new(Sort::BitVec(8)), 4))
            .unwrap();
        let s_arr = t.sort_of(arr).clone();
        let r = h.alloc(&mut t, s_arr, arr).unwrap();
        let i2 = t.const_bv(8, 2).unwrap();
        let r2 = h.project(&t, &r, &PathSel::Index(i2)).unwrap();
        let v = t.const_bv(8, 0xAB).unwrap();
        let wchecks = h.write(&mut t, &r2, v).unwrap();
        assert_eq!(wchecks.len(), 1);
        assert_eq!(t.as_const_bool(wchecks[0].claim), Some(true));
        let (back, _) = h.read(&mut t, &r2).unwrap();
        assert_eq!(back, v, "constant-index read-after-write folds to the value");
    }

    #[test]
    fn symbolic_write_and_read_match_exhaustive_oracle() {
        // i and j range over all bv2 values against a 3-element array:
        // out-of-range writes are no-ops, out-of-range reads clamp, and
        // the bounds claims flag exactly the out-of-range cases.
        let (mut t, mut h) = setup();
        let arr = t
            .fresh_symbol("a", &Sort::Array(Box::new(Sort::BitVec(8)), 3))
            .unwrap();
        let elems: Vec<TermId> = t.node(arr).children.clone();
        let i = t.fresh_symbol("i", &Sort::BitVec(2)).unwrap();
        let j = t.fresh_symbol("j", &Sort::BitVec(2)).unwrap();
        let v = t.fresh_symbol("v", &Sort::BitVec(8)).unwrap();
        let s_arr = t.sort_of(arr).clone();
        let r = h.alloc(&mut t, s_arr, arr).unwrap();
        let ri = h.project(&t, &r, &PathSel::Index(i)).unwrap();
        let wchecks = h.write(&mut t, &ri, v).unwrap();
        let rj = h.project(&t, &r, &PathSel::Index(j)).unwrap();
        let (val, rchecks) = h.read(&mut t, &rj).unwrap();
        assert_eq!((wchecks.len(), rchecks.len()), (1, 1));

        for iv in 0..4u128 {
            for jv in 0..4u128 {
                let mut env = Env::new();
                for (k, e) in elems.iter().enumerate() {
                    env.bind(sid(&t, *e), bv(8, (k as u128 + 1) * 10));
                }
                env.bind(sid(&t, i), bv(2, iv));
                env.bind(sid(&t, j), bv(2, jv));
                env.bind(sid(&t, v), bv(8, 99));

                let mut model = [10u128, 20, 30];
                if iv < 3 {
                    model[iv as usize] = 99;
                }
                let expect = model[(jv as usize).min(2)];

                let got = t.eval(val, &env).unwrap();
                assert_eq!(got, bv(8, expect), "i={iv} j={jv}");
                let wc = t.eval(wchecks[0].claim, &env).unwrap();
                assert_eq!(wc, ConcreteValue::Bool(iv < 3), "write claim i={iv}");
                let rc = t.eval(rchecks[0].claim, &env).unwrap();
                assert_eq!(rc, ConcreteValue::Bool(jv < 3), "read claim j={jv}");
            }
        }
    }

    #[test]
    fn guarded_write_updates_each_alternative_under_its_guard() {
        let (mut t, mut h) = setup();
        let x = t.fresh_symbol("x", &Sort::BitVec(8)).unwrap();
        let y = t.fresh_symbol("y", &Sort::BitVec(8)).unwrap();
        let g = t.fresh_symbol("g", &Sort::Bool).unwrap();
        let ra = h.alloc(&mut t, Sort::BitVec(8), x).unwrap();
        let rb = h.alloc(&mut t, Sort::BitVec(8), y).unwrap();
        let spare = h.alloc(&mut t, Sort::BitVec(8), x).unwrap();
        let spare_before = h.contents(spare.alts[0].alloc).unwrap();

        let merged = h.mux_refs(&mut t, g, &ra, &rb, DEFAULT_REF_MUX_CAP).unwrap();
        assert_eq!(merged.alts.len(), 2);
        assert_eq!(merged.alts[0].guard, g);
        assert_eq!(merged.alts[1].guard, t.mk(Opcode::Not, &[g]).unwrap());

        let v = t.const_bv(8, 5).unwrap();
        let checks = h.write(&mut t, &merged, v).unwrap();
        assert!(checks.is_empty());

        let not_g = t.mk(Opcode::Not, &[g]).unwrap();
        let want_a = t.mk(Opcode::Ite, &[g, v, x]).unwrap();
        let want_b = t.mk(Opcode::Ite, &[not_g, v, y]).unwrap();
        assert_eq!(h.contents(ra.alts[0].alloc).unwrap(), want_a);
        assert_eq!(h.contents(rb.alts[0].alloc).unwrap(), want_b);
        // Frame property: the untouched allocation is bit-identical.
        assert_eq!(h.contents(spare.alts[0].alloc).unwrap(), spare_before);

        // Reading back through the merged reference yields v either way.
        let (rv, _) = h.read(&mut t, &merged).unwrap();
        for gv in [false, true] {
            let mut env = Env::new();
            env.bind(sid(&t, x), bv(8, 1));
            env.bind(sid(&t, y), bv(8, 2));
            env.bind(sid(&t, g), ConcreteValue::Bool(gv));
            assert_eq!(t.eval(rv, &env).unwrap(), bv(8, 5), "g = {gv}");
        }
    }

    #[test]
    fn mux_coalesces_identical_alternatives() {
        let (mut t, mut h) = setup();
        let x = t.const_bv(8, 1).unwrap();
        let r = h.alloc(&mut t, Sort::BitVec(8), x).unwrap();
        let c = t.fresh_symbol("c", &Sort::Bool).unwrap();
        let same = h.mux_refs(&mut t, c, &r, &r, DEFAULT_REF_MUX_CAP).unwrap();
        assert_eq!(same.alts.len(), 1);
        assert_eq!(t.as_const_bool(same.alts[0].guard), Some(true));
        // A reference merged with itself is that reference.
        assert_eq!(same, r);
    }

    #[test]
    fn three_way_mux_reads_agree_for_all_guard_valuations() {
        // Two different mux nestings realizing the same selection
        // function must read identically for every (a, b) valuation.
        let (mut t, mut h) = setup();
        let vals: Vec<TermId> = (0..3).map(|k| t.const_bv(8, 10 + k).unwrap()).collect();
        let refs: Vec<GuardedRef> = vals
            .iter()
            .map(|v| h.alloc(&mut t, Sort::BitVec(8), *v).unwrap())
            .collect();
        let a = t.fresh_symbol("a", &Sort::Bool).unwrap();
        let b = t.fresh_symbol("b", &Sort::Bool).unwrap();

        let inner = h.mux_refs(&mut t, b, &refs[0], &refs[1], 16).unwrap();
        let left = h.mux_refs(&mut t, a, &inner, &refs[2], 16).unwrap();

        let ab = t.mk(Opcode::And, &[a, b]).unwrap();
        let inner2 = h.mux_refs(&mut t, a, &refs[1], &refs[2], 16).unwrap();
        let right = h.mux_refs(&mut t, ab, &refs[0], &inner2, 16).unwrap();

        let (lv, _) = h.read(&mut t, &left).unwrap();
        let (rv, _) = h.read(&mut t, &right).unwrap();
        for av in [false, true] {
            for bv_ in [false, true] {
                let mut env = Env::new();
                env.bind(sid(&t, a), ConcreteValue::Bool(av));
                env.bind(sid(&t, b), ConcreteValue::Bool(bv_));
                let l = t.eval(lv, &env).unwrap();
                let r = t.eval(rv, &env).unwrap();
                assert_eq!(l, r, "a={av} b={bv_}");
                let expect = if av && bv_ {
                    10
                } else if av {
                    11
                } else {
                    12
                };
                assert_eq!(l, bv(8, expect));
            }
        }
    }

    #[test]
    fn read_after_write_over_random_environments() {
        // For every path shape, writing a fresh symbol and reading it back
        // through the same reference evaluates to that symbol whenever the
        // bounds claims hold. 6 shapes x 200 environments > 10^3 checks.
        let rec = testgen::record_sort();
        let var = testgen::variant_sort();
        let arr8 = Sort::Array(Box::new(Sort::BitVec(8)), 3);
        let arr_rec = Sort::Array(Box::new(rec.clone()), 2);
        let tup = Sort::Tuple(vec![Sort::Bool, Sort::BitVec(32)]);

        type PathOf = fn(&mut TermTable) -> (Sort, Path);
        let shapes: Vec<PathOf> = vec![
            |_| (Sort::BitVec(8), vec![]),
            |_| (testgen::record_sort(), vec![PathSel::Field(0)]),
            |_| {
                (
                    Sort::Tuple(vec![Sort::Bool, Sort::BitVec(32)]),
                    vec![PathSel::Field(1)],
                )
            },
            |t| {
                let i = t.fresh_symbol("i", &Sort::BitVec(2)).unwrap();
                (Sort::Array(Box::new(Sort::BitVec(8)), 3), vec![PathSel::Index(i)])
            },
            |t| {
                let i = t.fresh_symbol("i", &Sort::BitVec(1)).unwrap();
                (
                    Sort::Array(Box::new(testgen::record_sort()), 2),
                    vec![PathSel::Index(i), PathSel::Field(0)],
                )
            },
            |_| (testgen::variant_sort(), vec![PathSel::ArmPayload(0)]),
        ];
        let _ = (&rec, &var, &arr8, &arr_rec, &tup);

        let mut rng = ChaCha8Rng::seed_from_u64(0xA110C);
        let mut total = 0usize;
        for (si, shape) in shapes.iter().enumerate() {
            let mut t = TermTable::new();
            let mut h = Heap::new();
            let (sort, path) = shape(&mut t);
            let init = t.fresh_symbol("init", &sort).unwrap();
            let mut r = h.alloc(&mut t, sort, init).unwrap();
            for sel in &path {
                r = h.project(&t, &r, sel).unwrap();
            }
            let vsort = h.pointee_sort(&r).unwrap();
            let v = t.fresh_symbol("v", &vsort).unwrap();
            let wchecks = h.write(&mut t, &r, v).unwrap();
            let (back, rchecks) = h.read(&mut t, &r).unwrap();
            for _ in 0..200 {
                let env = testgen::env_for(&t, &mut rng);
                let in_bounds = wchecks
                    .iter()
                    .chain(rchecks.iter())
                    .all(|c| t.eval(c.claim, &env).unwrap() == ConcreteValue::Bool(true));
                if !in_bounds {
                    continue;
                }
                let got = t.eval(back, &env).unwrap();
                let want = t.eval(v, &env).unwrap();
                assert_eq!(got, want, "shape {si}");
                total += 1;
            }
        }
        assert!(total >= 1000, "only {total} in-bounds checks ran");
    }

    #[test]
    fn frame_property_under_random_writes() {
        // Writing through any reference leaves every allocation not named
        // by its alternatives bit-identical (same interned term).
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for round in 0..40 {
            let mut t = TermTable::new();
            let mut h = Heap::new();
            let mut refs = Vec::new();
            for k in 0..4 {
                let init = t.fresh_symbol(&format!("s{k}"), &Sort::BitVec(8)).unwrap();
                refs.push(h.alloc(&mut t, Sort::BitVec(8), init).unwrap());
            }
            let a = rng.gen_range(0..4);
            let b = rng.gen_range(0..4);
            let g = t.fresh_symbol("g", &Sort::Bool).unwrap();
            let target = h.mux_refs(&mut t, g, &refs[a], &refs[b], 16).unwrap();
            let named: Vec<AllocId> = target.alts.iter().map(|x| x.alloc).collect();
            let before: Vec<(AllocId, TermId)> = h
                .alloc_ids()
                .map(|id| (id, h.contents(id).unwrap()))
                .collect();
            let v = t.const_bv(8, round).unwrap();
            h.write(&mut t, &target, v).unwrap();
            for (id, old) in before {
                if named.contains(&id) {
                    continue;
                }
                assert_eq!(h.contents(id).unwrap(), old, "round {round}: {id} changed");
            }
        }
    }

    #[test]
    fn dead_and_missing_allocations_are_engine_errors() {
        let (mut t, mut h) = setup();
        let x = t.const_bv(8, 1).unwrap();
        let r = h.alloc(&mut t, Sort::BitVec(8), x).unwrap();
        let id = r.alts[0].alloc;
        h.kill(id).unwrap();
        h.kill(id).unwrap(); // idempotent
        assert!(!h.is_live(id));
        assert_eq!(h.read(&mut t, &r).unwrap_err(), MemError::Dead(id));
        assert_eq!(h.write(&mut t, &r, x).unwrap_err(), MemError::Dead(id));
        // Inspection still works on dead cells.
        assert_eq!(h.contents(id).unwrap(), x);
        assert_eq!(h.kill(AllocId(99)).unwrap_err(), MemError::Missing(AllocId(99)));
        assert_eq!(h.contents(AllocId(99)).unwrap_err(), MemError::Missing(AllocId(99)));
    }

    #[test]
    fn invalid_projections_are_sort_errors() {
        let (mut t, mut h) = setup();
        let x = t.const_bv(8, 1).unwrap();
        let r = h.alloc(&mut t, Sort::BitVec(8), x).unwrap();
        assert!(matches!(
            h.project(&t, &r, &PathSel::Field(0)),
            Err(MemError::BadProjection(_))
        ));
        assert!(matches!(
            h.project(&t, &r, &PathSel::ArmPayload(0)),
            Err(MemError::BadProjection(_))
        ));

        let rec = t.fresh_symbol("r", &testgen::record_sort()).unwrap();
        let rr = h.alloc(&mut t, testgen::record_sort(), rec).unwrap();
        assert!(matches!(
            h.project(&t, &rr, &PathSel::Field(7)),
            Err(MemError::BadProjection(_))
        ));
        assert!(matches!(
            h.project(&t, &rr, &PathSel::ArmPayload(0)),
            Err(MemError::BadProjection(_))
        ));

        // Array index must be a bitvector term.
        let arr = t
            .fresh_symbol("a", &Sort::Array(Box::new(Sort::BitVec(8)), 2))
            .unwrap();
        let s_arr = t.sort_of(arr).clone();
        let ra = h.alloc(&mut t, s_arr, arr).unwrap();
        let flag = t.const_bool(true);
        assert!(matches!(
            h.project(&t, &ra, &PathSel::Index(flag)),
            Err(MemError::BadProjection(_))
        ));

        // Zero-length arrays cannot be projected into.
        let empty = t.mk(Opcode::MkArray(Sort::BitVec(8)), &[]).unwrap();
        let s_empty = t.sort_of(empty).clone();
        let re = h.alloc(&mut t, s_empty, empty).unwrap();
        let i = t.const_bv(2, 0).unwrap();
        assert!(matches!(
            h.project(&t, &re, &PathSel::Index(i)),
            Err(MemError::BadProjection(_))
        ));
    }

    #[test]
    fn mux_explosion_is_a_located_error() {
        let (mut t, mut h) = setup();
        let mut refs = Vec::new();
        for k in 0..3 {
            let v = t.const_bv(8, k).unwrap();
            refs.push(h.alloc(&mut t, Sort::BitVec(8), v).unwrap());
        }
        let g1 = t.fresh_symbol("g1", &Sort::Bool).unwrap();
        let g2 = t.fresh_symbol("g2", &Sort::Bool).unwrap();
        let two = h.mux_refs(&mut t, g1, &refs[0], &refs[1], 2).unwrap();
        assert_eq!(two.alts.len(), 2);
        let err = h.mux_refs(&mut t, g2, &two, &refs[2], 2).unwrap_err();
        assert_eq!(err, MemError::MuxExplosion { got: 3, cap: 2 });
        assert!(err.to_string().contains("reference mux explosion"));
    }

    #[test]
    fn sort_mismatches_are_rejected() {
        let (mut t, mut h) = setup();
        let flag = t.const_bool(true);
        assert!(matches!(
            h.alloc(&mut t, Sort::BitVec(8), flag),
            Err(MemError::SortMismatch { .. })
        ));
        let ref_sort = Sort::Ref(Box::new(Sort::BitVec(8)));
        let x = t.const_bv(8, 0).unwrap();
        assert!(matches!(
            h.alloc(&mut t, Sort::Tuple(vec![ref_sort]), x),
            Err(MemError::RefInHeap(_))
        ));
        let r = h.alloc(&mut t, Sort::BitVec(8), x).unwrap();
        assert!(matches!(
            h.write(&mut t, &r, flag),
            Err(MemError::SortMismatch { .. })
        ));
        // Mux of references to different pointee sorts is a sort error.
        let b = h.alloc(&mut t, Sort::Bool, flag).unwrap();
        let g = t.fresh_symbol("g", &Sort::Bool).unwrap();
        assert!(matches!(
            h.mux_refs(&mut t, g, &r, &b, 16),
            Err(MemError::SortMismatch { .. })
        ));
    }

    #[test]
    fn set_contents_swaps_cells_and_checks_sorts() {
        let (mut t, mut h) = setup();
        let x = t.const_bv(8, 1).unwrap();
        let y = t.const_bv(8, 2).unwrap();
        let r = h.alloc(&mut t, Sort::BitVec(8), x).unwrap();
        let id = r.alts[0].alloc;
        h.set_contents(&t, id, y).unwrap();
        assert_eq!(h.contents(id).unwrap(), y);
        let (back, _) = h.read(&mut t, &r).unwrap();
        assert_eq!(back, y);
        // Sort mismatches and missing allocations are rejected.
        let flag = t.const_bool(true);
        assert!(matches!(
            h.set_contents(&t, id, flag),
            Err(MemError::SortMismatch { .. })
        ));
        assert_eq!(
            h.set_contents(&t, AllocId(42), y).unwrap_err(),
            MemError::Missing(AllocId(42))
        );
        // Works on dead cells too: rollback may touch killed allocations.
        h.kill(id).unwrap();
        h.set_contents(&t, id, x).unwrap();
        assert_eq!(h.contents(id).unwrap(), x);
    }

    #[test]
    fn heap_dump_is_deterministic() {
        let (mut t, mut h) = setup();
        let x = t.const_bv(8, 7).unwrap();
        let flag = t.const_bool(false);
        let ra = h.alloc(&mut t, Sort::BitVec(8), x).unwrap();
        let rb = h.alloc(&mut t, Sort::Bool, flag).unwrap();
        h.kill(rb.alts[0].alloc).unwrap();
        let _ = ra;
        let want = format!("@0 : bv8 = %{}\n@1 : bool = %{} (dead)\n", x.0, flag.0);
        assert_eq!(h.dump(&t), want);
    }
}
