//! Emission of queries as SMT-LIB 2 scripts for external solvers.
//!
//! Scalar terms map to the QF_BV vocabulary directly. Aggregates carry no
//! theory of their own: tuples, records, and variants decompose into their
//! scalar components, and so do arrays by default. When
//! [`SolverConfig::arrays_as_theory`] is set, arrays with scalar elements
//! use the SMT array theory instead (`select`/`store` over a canonical
//! 32-bit index sort, with reads clamped and out-of-range writes dropped to
//! match the in-language semantics); Bool elements ride as 1-bit vectors.
//!
//! Shared subterms become `define-fun` bindings so the script stays linear
//! in the DAG size, and emission is deterministic: the same table, query,
//! and configuration always produce byte-identical text.

use std::collections::HashMap;

use crate::term::{mask, ConstVal, Opcode, Sort, TermId, TermTable, TAG_WIDTH};

use super::SolverConfig;

/// Render the conjunction of Bool-sorted `conjuncts` as a complete script:
/// logic header, one declaration per reachable symbol, shared definitions,
/// one `assert` per conjunct, `check-sat`, and `get-model`.
///
/// Malformed input (a non-Bool conjunct, or a reference reaching the
/// printer) is a caller bug and panics.
pub fn emit_smtlib(table: &TermTable, conjuncts: &[TermId], config: &SolverConfig) -> String {
    let mut p = Printer {
        table,
        theory_arrays: config.arrays_as_theory,
        refs: HashMap::new(),
        memo: HashMap::new(),
        defs: Vec::new(),
        base_decls: Vec::new(),
        next_def: 0,
        next_base: 0,
    };
    p.count_refs(conjuncts);

    let mut asserts = Vec::with_capacity(conjuncts.len());
    for &c in conjuncts {
        match p.pv(c) {
            PVal::Bool(s) => asserts.push(s),
            other => panic!("query conjunct is not Bool-sorted: {other:?}"),
        }
    }

    let mut symbols = std::collections::BTreeSet::new();
    for &c in conjuncts {
        symbols.extend(table.symbols_in(c));
    }

    let logic = if config.arrays_as_theory { "QF_ABV" } else { "QF_BV" };
    let mut out = String::new();
    out.push_str(&format!("(set-logic {logic})\n"));
    for s in symbols {
        let info = table.symbol_info(s);
        let sort = match &info.sort {
            Sort::Bool => "Bool".to_string(),
            Sort::BitVec(w) => bv_sort(*w),
            other => panic!("symbol {} has non-scalar sort {other}", info.name),
        };
        out.push_str(&format!(
            "(declare-const {} {sort})\n",
            sym_name(&info.name, info.ordinal)
        ));
    }
    for d in &p.base_decls {
        out.push_str(d);
        out.push('\n');
    }
    for d in &p.defs {
        out.push_str(d);
        out.push('\n');
    }
    for a in &asserts {
        out.push_str(&format!("(assert {a})\n"));
    }
    out.push_str("(check-sat)\n(get-model)\n");
    out
}

/// Quote a symbol as `|name!ordinal|`. The quoted form admits any
/// character except `|` and `\`, which are replaced.
fn sym_name(name: &str, ordinal: u32) -> String {
    let clean: String = name
        .chars()
        .map(|c| if c == '|' || c == '\\' { '_' } else { c })
        .collect();
    format!("|{clean}!{ordinal}|")
}

fn bv_sort(w: u32) -> String {
    format!("(_ BitVec {w})")
}

fn arr_sort(elem_w: u32) -> String {
    format!("(Array (_ BitVec 32) (_ BitVec {elem_w}))")
}

fn const_str(w: u32, v: u128) -> String {
    if w % 4 == 0 {
        format!("#x{v:0width$x}", width = (w / 4) as usize)
    } else {
        format!("#b{v:0width$b}", width = w as usize)
    }
}

/// The printed image of one term.
#[derive(Clone, Debug)]
enum PVal {
    Bool(String),
    Bv { expr: String, width: u32 },
    Unit,
    /// Tuple, record, or scalarized array elements in order.
    Agg(Vec<PVal>),
    /// Variant as tag expression plus one slot per arm; inactive slots hold
    /// the arm default, so equality is component-wise.
    Variant { tag: String, slots: Vec<PVal> },
    /// Theory-array value, always bound to a script-level name.
    Arr { name: String, elem_w: u32, bool_elem: bool, len: usize },
}

struct Printer<'a> {
    table: &'a TermTable,
    theory_arrays: bool,
    refs: HashMap<TermId, u32>,
    memo: HashMap<TermId, PVal>,
    defs: Vec<String>,
    base_decls: Vec<String>,
    next_def: u32,
    next_base: u32,
}

impl<'a> Printer<'a> {
    fn count_refs(&mut self, conjuncts: &[TermId]) {
        let mut stack = Vec::new();
        for &c in conjuncts {
            let r = self.refs.entry(c).or_insert(0);
            *r += 1;
            if *r == 1 {
                stack.push(c);
            }
        }
        while let Some(t) = stack.pop() {
            for &ch in &self.table.node(t).children {
                let r = self.refs.entry(ch).or_insert(0);
                *r += 1;
                if *r == 1 {
                    stack.push(ch);
                }
            }
        }
    }

    fn new_def(&mut self, sort: &str, body: &str) -> String {
        let name = format!("|%d{}|", self.next_def);
        self.next_def += 1;
        self.defs.push(format!("(define-fun {name} () {sort} {body})"));
        name
    }

    fn new_base(&mut self, elem_w: u32) -> String {
        let name = format!("|%a{}|", self.next_base);
        self.next_base += 1;
        self.base_decls
            .push(format!("(declare-const {name} {})", arr_sort(elem_w)));
        name
    }

    /// Replace compound scalar expressions with named definitions so later
    /// references stay one token wide.
    fn defify(&mut self, v: PVal) -> PVal {
        match v {
            PVal::Bool(s) if s.starts_with('(') => PVal::Bool(self.new_def("Bool", &s)),
            PVal::Bv { expr, width } if expr.starts_with('(') => PVal::Bv {
                expr: self.new_def(&bv_sort(width), &expr),
                width,
            },
            PVal::Variant { tag, slots } => {
                let tag = if tag.starts_with('(') {
                    self.new_def(&bv_sort(TAG_WIDTH), &tag)
                } else {
                    tag
                };
                let slots = slots.into_iter().map(|s| self.defify(s)).collect();
                PVal::Variant { tag, slots }
            }
            PVal::Agg(es) => PVal::Agg(es.into_iter().map(|e| self.defify(e)).collect()),
            other => other,
        }
    }

    fn bool_pv(&mut self, t: TermId) -> String {
        match self.pv(t) {
            PVal::Bool(s) => s,
            other => panic!("expected Bool, got {other:?}"),
        }
    }

    fn bv_pv(&mut self, t: TermId) -> (String, u32) {
        match self.pv(t) {
            PVal::Bv { expr, width } => (expr, width),
            other => panic!("expected bitvector, got {other:?}"),
        }
    }

    /// `true` when this array sort prints through the SMT array theory.
    fn uses_theory(&self, elem: &Sort) -> bool {
        self.theory_arrays && matches!(elem, Sort::Bool | Sort::BitVec(_))
    }

    /// Component-wise equality, folded into one Bool expression.
    fn eq_pv(&mut self, a: &PVal, b: &PVal) -> String {
        let mut parts = Vec::new();
        self.eq_parts(a, b, &mut parts);
        match parts.len() {
            0 => "true".to_string(),
            1 => parts.pop().unwrap(),
            _ => format!("(and {})", parts.join(" ")),
        }
    }

    fn eq_parts(&mut self, a: &PVal, b: &PVal, out: &mut Vec<String>) {
        match (a, b) {
            (PVal::Bool(x), PVal::Bool(y)) | (PVal::Bv { expr: x, .. }, PVal::Bv { expr: y, .. }) => {
                out.push(format!("(= {x} {y})"));
            }
            (PVal::Unit, PVal::Unit) => {}
            (PVal::Agg(xs), PVal::Agg(ys)) => {
                for (x, y) in xs.iter().zip(ys) {
                    self.eq_parts(x, y, out);
                }
            }
            (PVal::Variant { tag: ta, slots: sa }, PVal::Variant { tag: tb, slots: sb }) => {
                out.push(format!("(= {ta} {tb})"));
                for (x, y) in sa.iter().zip(sb) {
                    self.eq_parts(x, y, out);
                }
            }
            (PVal::Arr { name: na, len, .. }, PVal::Arr { name: nb, .. }) => {
                // Structural equality quantifies only over the in-range
                // indices; extensional array equality would also compare
                // the unconstrained tails.
                for k in 0..*len {
                    let idx = const_str(32, k as u128);
                    out.push(format!("(= (select {na} {idx}) (select {nb} {idx}))"));
                }
            }
            (a, b) => panic!("sort-checked equality over mismatched shapes {a:?} / {b:?}"),
        }
    }

    /// Component-wise conditional.
    fn mux_pv(&mut self, c: &str, a: &PVal, b: &PVal) -> PVal {
        match (a, b) {
            (PVal::Bool(x), PVal::Bool(y)) => PVal::Bool(format!("(ite {c} {x} {y})")),
            (PVal::Bv { expr: x, width }, PVal::Bv { expr: y, .. }) => PVal::Bv {
                expr: format!("(ite {c} {x} {y})"),
                width: *width,
            },
            (PVal::Unit, PVal::Unit) => PVal::Unit,
            (PVal::Agg(xs), PVal::Agg(ys)) => PVal::Agg(
                xs.iter()
                    .zip(ys)
                    .map(|(x, y)| self.mux_pv(c, x, y))
                    .collect(),
            ),
            (PVal::Variant { tag: ta, slots: sa }, PVal::Variant { tag: tb, slots: sb }) => {
                PVal::Variant {
                    tag: format!("(ite {c} {ta} {tb})"),
                    slots: sa
                        .iter()
                        .zip(sb)
                        .map(|(x, y)| self.mux_pv(c, x, y))
                        .collect(),
                }
            }
            (
                PVal::Arr { name: na, elem_w, bool_elem, len },
                PVal::Arr { name: nb, .. },
            ) => {
                let body = format!("(ite {c} {na} {nb})");
                let name = self.new_def(&arr_sort(*elem_w), &body);
                PVal::Arr {
                    name,
                    elem_w: *elem_w,
                    bool_elem: *bool_elem,
                    len: *len,
                }
            }
            (a, b) => panic!("sort-checked conditional over mismatched shapes {a:?} / {b:?}"),
        }
    }

    /// The printed image of a sort's default value.
    fn default_pv(&mut self, sort: &Sort) -> PVal {
        match sort {
            Sort::Bool => PVal::Bool("false".to_string()),
            Sort::BitVec(w) => PVal::Bv {
                expr: const_str(*w, 0),
                width: *w,
            },
            Sort::Unit => PVal::Unit,
            Sort::Array(elem, len) if self.uses_theory(elem) => {
                let (elem_w, bool_elem) = scalar_elem(elem);
                let base = self.new_base(elem_w);
                let zero = const_str(elem_w, 0);
                let mut chain = base;
                for k in 0..*len {
                    chain = format!("(store {chain} {} {zero})", const_str(32, k as u128));
                }
                let name = self.new_def(&arr_sort(elem_w), &chain);
                PVal::Arr {
                    name,
                    elem_w,
                    bool_elem,
                    len: *len,
                }
            }
            Sort::Array(elem, len) => {
                let d = self.default_pv(elem);
                PVal::Agg(vec![d; *len])
            }
            Sort::Tuple(fs) => {
                PVal::Agg(fs.iter().map(|s| self.default_pv(s)).collect())
            }
            Sort::Record { fields, .. } => {
                PVal::Agg(fields.iter().map(|(_, s)| self.default_pv(s)).collect())
            }
            Sort::Variant { arms, .. } => PVal::Variant {
                tag: const_str(TAG_WIDTH, 0),
                slots: arms.iter().map(|(_, s)| self.default_pv(s)).collect(),
            },
            Sort::Ref(_) => panic!("references cannot appear in queries"),
        }
    }

    fn pv(&mut self, t: TermId) -> PVal {
        if let Some(v) = self.memo.get(&t) {
            return v.clone();
        }
        let table = self.table;
        let node = table.node(t);
        let ch = node.children.clone();
        let v = match &node.op {
            Opcode::Const(ConstVal::Bool(b)) => PVal::Bool(b.to_string()),
            Opcode::Const(ConstVal::Bv { width, value }) => PVal::Bv {
                expr: const_str(*width, *value),
                width: *width,
            },
            Opcode::UnitConst => PVal::Unit,
            Opcode::Symbol(s) => {
                let info = table.symbol_info(*s);
                let name = sym_name(&info.name, info.ordinal);
                match &info.sort {
                    Sort::Bool => PVal::Bool(name),
                    Sort::BitVec(w) => PVal::Bv {
                        expr: name,
                        width: *w,
                    },
                    other => panic!("symbol {} has non-scalar sort {other}", info.name),
                }
            }
            Opcode::Not => PVal::Bool(format!("(not {})", self.bool_pv(ch[0]))),
            Opcode::And | Opcode::Or | Opcode::Xor | Opcode::Implies => {
                let a = self.bool_pv(ch[0]);
                let b = self.bool_pv(ch[1]);
                let op = match node.op {
                    Opcode::And => "and",
                    Opcode::Or => "or",
                    Opcode::Xor => "xor",
                    _ => "=>",
                };
                PVal::Bool(format!("({op} {a} {b})"))
            }
            Opcode::Ite => {
                let c = self.bool_pv(ch[0]);
                let a = self.pv(ch[1]);
                let b = self.pv(ch[2]);
                self.mux_pv(&c, &a, &b)
            }
            Opcode::Eq => {
                let a = self.pv(ch[0]);
                let b = self.pv(ch[1]);
                PVal::Bool(self.eq_pv(&a, &b))
            }
            Opcode::BvAdd
            | Opcode::BvSub
            | Opcode::BvMul
            | Opcode::BvUDiv
            | Opcode::BvAnd
            | Opcode::BvOr
            | Opcode::BvXor
            | Opcode::BvShl
            | Opcode::BvLShr => {
                let (a, w) = self.bv_pv(ch[0]);
                let (b, _) = self.bv_pv(ch[1]);
                let op = match node.op {
                    Opcode::BvAdd => "bvadd",
                    Opcode::BvSub => "bvsub",
                    Opcode::BvMul => "bvmul",
                    Opcode::BvUDiv => "bvudiv",
                    Opcode::BvAnd => "bvand",
                    Opcode::BvOr => "bvor",
                    Opcode::BvXor => "bvxor",
                    Opcode::BvShl => "bvshl",
                    _ => "bvlshr",
                };
                PVal::Bv {
                    expr: format!("({op} {a} {b})"),
                    width: w,
                }
            }
            Opcode::BvURem => {
                // The in-language remainder by zero is zero, while the SMT
                // operator returns the dividend; guard the mismatch.
                let (a, w) = self.bv_pv(ch[0]);
                let (b, _) = self.bv_pv(ch[1]);
                let z = const_str(w, 0);
                PVal::Bv {
                    expr: format!("(ite (= {b} {z}) {z} (bvurem {a} {b}))"),
                    width: w,
                }
            }
            Opcode::BvNot | Opcode::BvNeg => {
                let (a, w) = self.bv_pv(ch[0]);
                let op = if matches!(node.op, Opcode::BvNot) {
                    "bvnot"
                } else {
                    "bvneg"
                };
                PVal::Bv {
                    expr: format!("({op} {a})"),
                    width: w,
                }
            }
            Opcode::BvULt | Opcode::BvULe | Opcode::BvUGt | Opcode::BvUGe
            | Opcode::BvSLt | Opcode::BvSLe => {
                let (a, _) = self.bv_pv(ch[0]);
                let (b, _) = self.bv_pv(ch[1]);
                let op = match node.op {
                    Opcode::BvULt => "bvult",
                    Opcode::BvULe => "bvule",
                    Opcode::BvUGt => "bvugt",
                    Opcode::BvUGe => "bvuge",
                    Opcode::BvSLt => "bvslt",
                    _ => "bvsle",
                };
                PVal::Bool(format!("({op} {a} {b})"))
            }
            Opcode::BvZeroExtend(target) => {
                let (a, w) = self.bv_pv(ch[0]);
                if *target == w {
                    PVal::Bv { expr: a, width: w }
                } else {
                    PVal::Bv {
                        expr: format!("((_ zero_extend {}) {a})", target - w),
                        width: *target,
                    }
                }
            }
            Opcode::BvTruncate(target) => {
                let (a, w) = self.bv_pv(ch[0]);
                if *target == w {
                    PVal::Bv { expr: a, width: w }
                } else {
                    PVal::Bv {
                        expr: format!("((_ extract {} 0) {a})", target - 1),
                        width: *target,
                    }
                }
            }
            Opcode::BvConcat => {
                let (hi, wh) = self.bv_pv(ch[0]);
                let (lo, wl) = self.bv_pv(ch[1]);
                PVal::Bv {
                    expr: format!("(concat {hi} {lo})"),
                    width: wh + wl,
                }
            }
            Opcode::MkTuple | Opcode::MkRecord(_) => {
                PVal::Agg(ch.iter().map(|&c| self.pv(c)).collect())
            }
            Opcode::MkArray(elem) if self.uses_theory(elem) => {
                let (elem_w, bool_elem) = scalar_elem(elem);
                let elems: Vec<PVal> = ch.iter().map(|&c| self.pv(c)).collect();
                let base = self.new_base(elem_w);
                let mut chain = base;
                for (k, e) in elems.iter().enumerate() {
                    let ev = elem_to_bv(e, bool_elem);
                    chain = format!("(store {chain} {} {ev})", const_str(32, k as u128));
                }
                let name = self.new_def(&arr_sort(elem_w), &chain);
                PVal::Arr {
                    name,
                    elem_w,
                    bool_elem,
                    len: elems.len(),
                }
            }
            Opcode::MkArray(_) => PVal::Agg(ch.iter().map(|&c| self.pv(c)).collect()),
            Opcode::TupleGet(i) | Opcode::RecordGet(i) => match self.pv(ch[0]) {
                PVal::Agg(es) => es[*i as usize].clone(),
                other => panic!("projection from non-aggregate {other:?}"),
            },
            Opcode::ArrayGet => {
                let arr = self.pv(ch[0]);
                let (idx, w) = self.bv_pv(ch[1]);
                match arr {
                    PVal::Arr { name, elem_w, bool_elem, len } => {
                        // Clamp the index to the last element, then resize
                        // to the canonical 32-bit index sort; the clamped
                        // value always fits.
                        let eff = if (len as u128 - 1) >= mask(w) {
                            idx
                        } else {
                            let c = const_str(w, len as u128 - 1);
                            format!("(ite (bvule {idx} {c}) {idx} {c})")
                        };
                        let sel = format!("(select {name} {})", to32(&eff, w));
                        if bool_elem {
                            PVal::Bool(format!("(= {sel} #b1)"))
                        } else {
                            PVal::Bv {
                                expr: sel,
                                width: elem_w,
                            }
                        }
                    }
                    PVal::Agg(elems) => {
                        let top = (mask(w).min(elems.len() as u128 - 1)) as usize;
                        let mut acc = elems[top].clone();
                        for k in (0..top).rev() {
                            let cond = format!("(= {idx} {})", const_str(w, k as u128));
                            acc = self.mux_pv(&cond, &elems[k], &acc);
                        }
                        acc
                    }
                    other => panic!("read from non-array {other:?}"),
                }
            }
            Opcode::ArraySet => {
                let arr = self.pv(ch[0]);
                let (idx, w) = self.bv_pv(ch[1]);
                let val = self.pv(ch[2]);
                match arr {
                    PVal::Arr { name, elem_w, bool_elem, len } => {
                        let ev = elem_to_bv(&val, bool_elem);
                        let store = format!("(store {name} {} {ev})", to32(&idx, w));
                        // Out-of-range writes leave the array unchanged.
                        let body = if (len as u128 - 1) >= mask(w) {
                            store
                        } else {
                            let c = const_str(w, len as u128 - 1);
                            format!("(ite (bvule {idx} {c}) {store} {name})")
                        };
                        let name = self.new_def(&arr_sort(elem_w), &body);
                        PVal::Arr {
                            name,
                            elem_w,
                            bool_elem,
                            len,
                        }
                    }
                    PVal::Agg(elems) => {
                        let mut out = Vec::with_capacity(elems.len());
                        for (k, old) in elems.iter().enumerate() {
                            if (k as u128) > mask(w) {
                                out.push(old.clone());
                                continue;
                            }
                            let cond = format!("(= {idx} {})", const_str(w, k as u128));
                            out.push(self.mux_pv(&cond, &val, old));
                        }
                        PVal::Agg(out)
                    }
                    other => panic!("write to non-array {other:?}"),
                }
            }
            Opcode::MkVariant { sort, arm } => {
                let arms = match sort {
                    Sort::Variant { arms, .. } => arms.clone(),
                    other => panic!("variant of non-variant sort {other}"),
                };
                let payload = self.pv(ch[0]);
                let mut slots = Vec::with_capacity(arms.len());
                for (j, (_, s)) in arms.iter().enumerate() {
                    if j as u32 == *arm {
                        slots.push(payload.clone());
                    } else {
                        slots.push(self.default_pv(s));
                    }
                }
                PVal::Variant {
                    tag: const_str(TAG_WIDTH, *arm as u128),
                    slots,
                }
            }
            Opcode::VariantTag => match self.pv(ch[0]) {
                PVal::Variant { tag, .. } => PVal::Bv {
                    expr: tag,
                    width: TAG_WIDTH,
                },
                other => panic!("tag of non-variant {other:?}"),
            },
            Opcode::VariantGet(i) => match self.pv(ch[0]) {
                PVal::Variant { slots, .. } => slots[*i as usize].clone(),
                other => panic!("payload of non-variant {other:?}"),
            },
        };
        let v = if self.refs.get(&t).copied().unwrap_or(0) >= 2 {
            self.defify(v)
        } else {
            v
        };
        self.memo.insert(t, v.clone());
        v
    }
}

/// Element width and Bool-ness of a scalar array element sort.
fn scalar_elem(elem: &Sort) -> (u32, bool) {
    match elem {
        Sort::Bool => (1, true),
        Sort::BitVec(w) => (*w, false),
        other => panic!("non-scalar theory array element {other}"),
    }
}

/// Print an element value as the bitvector stored in a theory array.
fn elem_to_bv(v: &PVal, bool_elem: bool) -> String {
    match v {
        PVal::Bool(s) if bool_elem => match s.as_str() {
            "true" => "#b1".to_string(),
            "false" => "#b0".to_string(),
            _ => format!("(ite {s} #b1 #b0)"),
        },
        PVal::Bv { expr, .. } if !bool_elem => expr.clone(),
        other => panic!("element/array sort mismatch {other:?}"),
    }
}

/// Resize a width-`w` index expression to the canonical 32-bit index sort.
/// Wider indices are only resized after clamping, so the extract is exact.
fn to32(expr: &str, w: u32) -> String {
    use std::cmp::Ordering::*;
    match w.cmp(&32) {
        Equal => expr.to_string(),
        Less => format!("((_ zero_extend {}) {expr})", 32 - w),
        Greater => format!("((_ extract 31 0) {expr})"),
    }
}
