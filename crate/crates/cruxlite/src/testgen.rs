//! Randomized term generation and an independent tree-walking evaluator.
//!
//! Used by unit, property, and acceptance tests as the oracle side of
//! dual-route checks: the generator builds well-sorted terms through the
//! public constructors, and [`tree_eval`] evaluates the resulting DAG as a
//! plain tree with its own arithmetic, sharing none of the table's
//! evaluation or folding code.

#![doc(hidden)]

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::term::{
    mask, ConcreteValue, ConstVal, Env, Opcode, Sort, SymbolId, TermId, TermTable,
    TAG_WIDTH,
};

/// Term generator over a fixed pool of sorts and pre-introduced symbols.
pub struct Gen {
    pub table: TermTable,
    pub rng: ChaCha8Rng,
    sorts: Vec<Sort>,
    syms: Vec<(Sort, Vec<TermId>)>,
}

pub fn record_sort() -> Sort {
    Sort::Record {
        name: "R".into(),
        fields: vec![("x".into(), Sort::BitVec(8)), ("y".into(), Sort::Bool)],
    }
}

pub fn variant_sort() -> Sort {
    Sort::Variant {
        name: "V".into(),
        arms: vec![("A".into(), Sort::BitVec(4)), ("B".into(), Sort::Bool)],
    }
}

impl Gen {
    pub fn new(seed: u64) -> Gen {
        let mut table = TermTable::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sorts = vec![
            Sort::Bool,
            Sort::BitVec(1),
            Sort::BitVec(4),
            Sort::BitVec(8),
            Sort::BitVec(32),
            Sort::BitVec(128),
            Sort::Array(Box::new(Sort::BitVec(8)), 3),
            Sort::Tuple(vec![Sort::BitVec(4), Sort::Bool]),
            record_sort(),
            variant_sort(),
        ];
        let mut syms = Vec::new();
        for (i, s) in sorts.iter().enumerate() {
            let mut ids = Vec::new();
            for k in 0..2 {
                ids.push(
                    table
                        .fresh_symbol(&format!("g{i}_{k}"), s)
                        .expect("generator sorts are symbol-friendly"),
                );
            }
            syms.push((s.clone(), ids.clone()));
        }
        let _ = rng.gen::<u64>();
        Gen { table, rng, sorts, syms }
    }

    fn sym_of(&mut self, sort: &Sort) -> Option<TermId> {
        let pool = self.syms.iter().find(|(s, _)| s == sort)?;
        Some(pool.1[self.rng.gen_range(0..pool.1.len())])
    }

    fn pool_sort(&mut self) -> Sort {
        self.sorts[self.rng.gen_range(0..self.sorts.len())].clone()
    }

    fn const_of(&mut self, sort: &Sort) -> TermId {
        match sort {
            Sort::Bool => {
                let b = self.rng.gen();
                self.table.const_bool(b)
            }
            Sort::BitVec(w) => {
                let v = self.rng.gen::<u128>() & mask(*w);
                self.table.const_bv(*w, v).unwrap()
            }
            Sort::Unit => self.table.unit(),
            _ => self.gen(sort, 0),
        }
    }

    /// Generate a well-sorted term of the given sort with the given depth
    /// budget.
    pub fn gen(&mut self, sort: &Sort, depth: u32) -> TermId {
        if depth == 0 {
            return match sort {
                Sort::Bool | Sort::BitVec(_) | Sort::Unit => {
                    if self.rng.gen_bool(0.5) {
                        self.sym_of(sort).unwrap_or_else(|| self.const_of(sort))
                    } else {
                        self.const_of(sort)
                    }
                }
                Sort::Array(e, n) => {
                    if let Some(s) = self.sym_of(sort) {
                        if self.rng.gen_bool(0.5) {
                            return s;
                        }
                    }
                    let elems: Vec<TermId> = (0..*n).map(|_| self.const_of(e)).collect();
                    self.table.mk(Opcode::MkArray((**e).clone()), &elems).unwrap()
                }
                Sort::Tuple(fs) => {
                    if let Some(s) = self.sym_of(sort) {
                        if self.rng.gen_bool(0.5) {
                            return s;
                        }
                    }
                    let fs = fs.clone();
                    let elems: Vec<TermId> = fs.iter().map(|f| self.const_of(f)).collect();
                    self.table.mk(Opcode::MkTuple, &elems).unwrap()
                }
                Sort::Record { fields, .. } => {
                    if let Some(s) = self.sym_of(sort) {
                        if self.rng.gen_bool(0.5) {
                            return s;
                        }
                    }
                    let fields = fields.clone();
                    let elems: Vec<TermId> =
                        fields.iter().map(|(_, f)| self.const_of(f)).collect();
                    self.table.mk(Opcode::MkRecord(sort.clone()), &elems).unwrap()
                }
                Sort::Variant { arms, .. } => {
                    if let Some(s) = self.sym_of(sort) {
                        if self.rng.gen_bool(0.5) {
                            return s;
                        }
                    }
                    let arms = arms.clone();
                    let arm = self.rng.gen_range(0..arms.len());
                    let payload = self.const_of(&arms[arm].1);
                    self.table
                        .mk(
                            Opcode::MkVariant {
                                sort: sort.clone(),
                                arm: arm as u32,
                            },
                            &[payload],
                        )
                        .unwrap()
                }
                Sort::Ref(_) => unreachable!("generator never produces references"),
            };
        }
        let d = depth - 1;
        match sort {
            Sort::Bool => self.gen_bool(d),
            Sort::BitVec(w) => self.gen_bv(*w, d),
            Sort::Unit => self.table.unit(),
            Sort::Array(e, n) => {
                let e = (**e).clone();
                let n = *n;
                match self.rng.gen_range(0..3) {
                    0 => {
                        let elems: Vec<TermId> = (0..n).map(|_| self.gen(&e, d)).collect();
                        self.table.mk(Opcode::MkArray(e.clone()), &elems).unwrap()
                    }
                    1 => {
                        let a = self.gen(sort, d);
                        let i = self.gen_bv(8, d.min(1));
                        let v = self.gen(&e, d);
                        self.table.mk(Opcode::ArraySet, &[a, i, v]).unwrap()
                    }
                    _ => self.gen_ite(sort, d),
                }
            }
            Sort::Tuple(fs) => {
                let fs = fs.clone();
                if self.rng.gen_bool(0.6) {
                    let elems: Vec<TermId> = fs.iter().map(|f| self.gen(f, d)).collect();
                    self.table.mk(Opcode::MkTuple, &elems).unwrap()
                } else {
                    self.gen_ite(sort, d)
                }
            }
            Sort::Record { fields, .. } => {
                let fields = fields.clone();
                if self.rng.gen_bool(0.6) {
                    let elems: Vec<TermId> = fields.iter().map(|(_, f)| self.gen(f, d)).collect();
                    self.table.mk(Opcode::MkRecord(sort.clone()), &elems).unwrap()
                } else {
                    self.gen_ite(sort, d)
                }
            }
            Sort::Variant { arms, .. } => {
                let arms = arms.clone();
                if self.rng.gen_bool(0.6) {
                    let arm = self.rng.gen_range(0..arms.len());
                    let payload = self.gen(&arms[arm].1, d);
                    self.table
                        .mk(
                            Opcode::MkVariant {
                                sort: sort.clone(),
                                arm: arm as u32,
                            },
                            &[payload],
                        )
                        .unwrap()
                } else {
                    self.gen_ite(sort, d)
                }
            }
            Sort::Ref(_) => unreachable!("generator never produces references"),
        }
    }

    fn gen_ite(&mut self, sort: &Sort, d: u32) -> TermId {
        let c = self.gen_bool(d);
        let a = self.gen(sort, d);
        let b = self.gen(sort, d);
        self.table.mk(Opcode::Ite, &[c, a, b]).unwrap()
    }

    fn gen_bool(&mut self, d: u32) -> TermId {
        if d == 0 {
            return self.gen(&Sort::Bool, 0);
        }
        let d = d - 1;
        match self.rng.gen_range(0..9) {
            0 => {
                let a = self.gen_bool(d);
                self.table.mk(Opcode::Not, &[a]).unwrap()
            }
            1..=4 => {
                let op = match self.rng.gen_range(0..4) {
                    0 => Opcode::And,
                    1 => Opcode::Or,
                    2 => Opcode::Xor,
                    _ => Opcode::Implies,
                };
                let a = self.gen_bool(d);
                let b = self.gen_bool(d);
                self.table.mk(op, &[a, b]).unwrap()
            }
            5 => self.gen_ite(&Sort::Bool, d),
            6 => {
                // Structural equality at a random pool sort.
                let s = self.pool_sort();
                let a = self.gen(&s, d.min(2));
                let b = self.gen(&s, d.min(2));
                self.table.mk(Opcode::Eq, &[a, b]).unwrap()
            }
            _ => {
                let w = *[1u32, 4, 8, 32, 128].choose(&mut self.rng).unwrap();
                let op = [
                    Opcode::BvULt,
                    Opcode::BvULe,
                    Opcode::BvUGt,
                    Opcode::BvUGe,
                    Opcode::BvSLt,
                    Opcode::BvSLe,
                ]
                .choose(&mut self.rng)
                .unwrap()
                .clone();
                let a = self.gen_bv(w, d);
                let b = self.gen_bv(w, d);
                self.table.mk(op, &[a, b]).unwrap()
            }
        }
    }

    fn gen_bv(&mut self, w: u32, d: u32) -> TermId {
        if d == 0 {
            return self.gen(&Sort::BitVec(w), 0);
        }
        let d = d - 1;
        match self.rng.gen_range(0..12) {
            0..=4 => {
                let op = [
                    Opcode::BvAdd,
                    Opcode::BvSub,
                    Opcode::BvMul,
                    Opcode::BvUDiv,
                    Opcode::BvURem,
                    Opcode::BvAnd,
                    Opcode::BvOr,
                    Opcode::BvXor,
                    Opcode::BvShl,
                    Opcode::BvLShr,
                ]
                .choose(&mut self.rng)
                .unwrap()
                .clone();
                let a = self.gen_bv(w, d);
                let b = self.gen_bv(w, d);
                self.table.mk(op, &[a, b]).unwrap()
            }
            5 => {
                let op = if self.rng.gen_bool(0.5) {
                    Opcode::BvNot
                } else {
                    Opcode::BvNeg
                };
                let a = self.gen_bv(w, d);
                self.table.mk(op, &[a]).unwrap()
            }
            6 if w > 1 => {
                // Zero-extend from a narrower width.
                let src = self.rng.gen_range(1..w);
                let a = self.gen_bv(src, d);
                self.table.mk(Opcode::BvZeroExtend(w), &[a]).unwrap()
            }
            7 if w < 128 => {
                // Truncate from a wider width.
                let src = self.rng.gen_range(w + 1..=(w + 8).min(128));
                let a = self.gen_bv(src, d);
                self.table.mk(Opcode::BvTruncate(w), &[a]).unwrap()
            }
            8 if w > 1 => {
                let hi = self.rng.gen_range(1..w);
                let a = self.gen_bv(hi, d);
                let b = self.gen_bv(w - hi, d);
                self.table.mk(Opcode::BvConcat, &[a, b]).unwrap()
            }
            9 if w == 8 => {
                let arr = self.gen(&Sort::Array(Box::new(Sort::BitVec(8)), 3), d);
                let i = self.gen_bv(8, d.min(1));
                self.table.mk(Opcode::ArrayGet, &[arr, i]).unwrap()
            }
            10 if w == 4 => {
                let t = self.gen(&Sort::Tuple(vec![Sort::BitVec(4), Sort::Bool]), d);
                self.table.mk(Opcode::TupleGet(0), &[t]).unwrap()
            }
            10 if w == 8 => {
                if self.rng.gen_bool(0.5) {
                    let r = self.gen(&record_sort(), d);
                    self.table.mk(Opcode::RecordGet(0), &[r]).unwrap()
                } else {
                    debug_assert_eq!(TAG_WIDTH, 8);
                    let v = self.gen(&variant_sort(), d);
                    self.table.mk(Opcode::VariantTag, &[v]).unwrap()
                }
            }
            11 if w == 4 => {
                let v = self.gen(&variant_sort(), d);
                self.table.mk(Opcode::VariantGet(0), &[v]).unwrap()
            }
            _ => self.gen_ite(&Sort::BitVec(w), d),
        }
    }

    /// A random environment binding every symbol registered so far.
    pub fn random_env(&mut self) -> Env {
        let mut env = Env::new();
        let symbols: Vec<(SymbolId, Sort)> = self
            .table
            .symbols()
            .iter()
            .enumerate()
            .map(|(i, s)| (SymbolId(i as u32), s.sort.clone()))
            .collect();
        for (id, sort) in symbols {
            let v = self.random_value(&sort);
            env.bind(id, v);
        }
        env
    }

    pub fn random_value(&mut self, sort: &Sort) -> ConcreteValue {
        match sort {
            Sort::Bool => ConcreteValue::Bool(self.rng.gen()),
            Sort::BitVec(w) => ConcreteValue::Bv {
                width: *w,
                value: self.rng.gen::<u128>() & mask(*w),
            },
            Sort::Unit => ConcreteValue::Unit,
            Sort::Array(e, n) => {
                ConcreteValue::Array((0..*n).map(|_| self.random_value(e)).collect())
            }
            Sort::Tuple(fs) => {
                ConcreteValue::Tuple(fs.iter().map(|f| self.random_value(f)).collect())
            }
            Sort::Record { fields, .. } => ConcreteValue::Record(
                fields.iter().map(|(_, f)| self.random_value(f)).collect(),
            ),
            Sort::Variant { arms, .. } => {
                let arm = self.rng.gen_range(0..arms.len());
                ConcreteValue::Variant {
                    arm: arm as u32,
                    payload: Box::new(self.random_value(&arms[arm].1)),
                }
            }
            Sort::Ref(_) => unreachable!(),
        }
    }
}

/// Independent reference evaluator: walks the DAG as a tree (no memo, no
/// sharing awareness) and implements every operation itself rather than
/// via [`crate::term::concrete_op`]. Semantics are the documented ones:
/// udiv by zero is all-ones, urem by zero is zero, oversize shifts are
/// zero, out-of-range reads clamp to the last element, wrong-arm variant
/// reads give the arm default.
pub fn tree_eval(table: &TermTable, t: TermId, env: &Env) -> ConcreteValue {
    use ConcreteValue as V;
    let node = table.node(t);
    let kid = |i: usize| tree_eval(table, node.children[i], env);
    let bits = |v: &V| -> u128 {
        match v {
            V::Bool(b) => *b as u128,
            V::Bv { value, .. } => *value,
            _ => panic!("scalar expected"),
        }
    };
    let width = |v: &V| -> u32 {
        match v {
            V::Bv { width, .. } => *width,
            _ => panic!("bitvector expected"),
        }
    };
    // Unsigned comparison via borrow of a long subtraction, so this route
    // does not reuse the `<` the implementation uses.
    fn borrow_lt(w: u32, a: u128, b: u128) -> bool {
        let mut borrow = false;
        for i in 0..w {
            let ab = (a >> i) & 1 == 1;
            let bb = (b >> i) & 1 == 1;
            // borrow-out of a - b at bit i
            borrow = (!ab && bb) || ((!ab || bb) && borrow);
        }
        borrow
    }
    fn to_signed_pair(w: u32, a: u128, b: u128) -> (bool, bool, u128, u128) {
        let sa = (a >> (w - 1)) & 1 == 1;
        let sb = (b >> (w - 1)) & 1 == 1;
        (sa, sb, a, b)
    }
    match &node.op {
        Opcode::Const(ConstVal::Bool(b)) => V::Bool(*b),
        Opcode::Const(ConstVal::Bv { width, value }) => V::Bv {
            width: *width,
            value: *value,
        },
        Opcode::UnitConst => V::Unit,
        Opcode::Symbol(s) => env.get(*s).expect("env binds all symbols").clone(),
        Opcode::Not => V::Bool(!matches!(kid(0), V::Bool(true))),
        Opcode::And => {
            let (a, b) = (kid(0), kid(1));
            V::Bool(bits(&a) & bits(&b) == 1)
        }
        Opcode::Or => {
            let (a, b) = (kid(0), kid(1));
            V::Bool(bits(&a) | bits(&b) == 1)
        }
        Opcode::Xor => {
            let (a, b) = (kid(0), kid(1));
            V::Bool(bits(&a) ^ bits(&b) == 1)
        }
        Opcode::Implies => {
            let (a, b) = (kid(0), kid(1));
            V::Bool(bits(&a) <= bits(&b))
        }
        Opcode::Ite => {
            if matches!(kid(0), V::Bool(true)) {
                kid(1)
            } else {
                kid(2)
            }
        }
        Opcode::Eq => V::Bool(values_equal(&kid(0), &kid(1))),
        Opcode::BvAdd | Opcode::BvSub | Opcode::BvMul | Opcode::BvUDiv | Opcode::BvURem
        | Opcode::BvAnd | Opcode::BvOr | Opcode::BvXor | Opcode::BvShl | Opcode::BvLShr => {
            let (a, b) = (kid(0), kid(1));
            let (w, x, y) = (width(&a), bits(&a), bits(&b));
            let m = mask(w);
            let value = match node.op {
                Opcode::BvAdd => x.overflowing_add(y).0 & m,
                Opcode::BvSub => x.overflowing_sub(y).0 & m,
                Opcode::BvMul => x.overflowing_mul(y).0 & m,
                Opcode::BvUDiv => {
                    if y == 0 {
                        m
                    } else {
                        x.checked_div(y).unwrap() & m
                    }
                }
                Opcode::BvURem => {
                    if y == 0 {
                        0
                    } else {
                        x.checked_rem(y).unwrap() & m
                    }
                }
                Opcode::BvAnd => x & y,
                Opcode::BvOr => x | y,
                Opcode::BvXor => x ^ y,
                Opcode::BvShl => x.checked_shl(y.try_into().unwrap_or(u32::MAX))
                    .map(|v| if y >= w as u128 { 0 } else { v & m })
                    .unwrap_or(0),
                Opcode::BvLShr => {
                    if y >= w as u128 {
                        0
                    } else {
                        (x >> y) & m
                    }
                }
                _ => unreachable!(),
            };
            V::Bv { width: w, value }
        }
        Opcode::BvNot => {
            let a = kid(0);
            let (w, x) = (width(&a), bits(&a));
            V::Bv {
                width: w,
                value: x ^ mask(w),
            }
        }
        Opcode::BvNeg => {
            let a = kid(0);
            let (w, x) = (width(&a), bits(&a));
            V::Bv {
                width: w,
                value: (x ^ mask(w)).overflowing_add(1).0 & mask(w),
            }
        }
        Opcode::BvULt | Opcode::BvULe | Opcode::BvUGt | Opcode::BvUGe => {
            let (a, b) = (kid(0), kid(1));
            let (w, x, y) = (width(&a), bits(&a), bits(&b));
            let lt = borrow_lt(w, x, y);
            let gt = borrow_lt(w, y, x);
            V::Bool(match node.op {
                Opcode::BvULt => lt,
                Opcode::BvULe => !gt,
                Opcode::BvUGt => gt,
                _ => !lt,
            })
        }
        Opcode::BvSLt | Opcode::BvSLe => {
            let (a, b) = (kid(0), kid(1));
            let (w, x, y) = (width(&a), bits(&a), bits(&b));
            let (sa, sb, x, y) = to_signed_pair(w, x, y);
            let lt = match (sa, sb) {
                (true, false) => true,
                (false, true) => false,
                _ => borrow_lt(w, x, y),
            };
            V::Bool(match node.op {
                Opcode::BvSLt => lt,
                _ => lt || x == y,
            })
        }
        Opcode::BvZeroExtend(target) => {
            let a = kid(0);
            V::Bv {
                width: *target,
                value: bits(&a),
            }
        }
        Opcode::BvTruncate(target) => {
            let a = kid(0);
            V::Bv {
                width: *target,
                value: bits(&a) & mask(*target),
            }
        }
        Opcode::BvConcat => {
            let (a, b) = (kid(0), kid(1));
            let (wh, wl) = (width(&a), width(&b));
            V::Bv {
                width: wh + wl,
                value: (bits(&a) << wl) | bits(&b),
            }
        }
        Opcode::MkTuple => V::Tuple(node.children.iter().enumerate().map(|(i, _)| kid(i)).collect()),
        Opcode::MkRecord(_) => {
            V::Record(node.children.iter().enumerate().map(|(i, _)| kid(i)).collect())
        }
        Opcode::MkArray(_) => {
            V::Array(node.children.iter().enumerate().map(|(i, _)| kid(i)).collect())
        }
        Opcode::TupleGet(i) => match kid(0) {
            V::Tuple(fs) => fs[*i as usize].clone(),
            _ => panic!("tuple expected"),
        },
        Opcode::RecordGet(i) => match kid(0) {
            V::Record(fs) => fs[*i as usize].clone(),
            _ => panic!("record expected"),
        },
        Opcode::ArrayGet => match (kid(0), kid(1)) {
            (V::Array(es), idx) => {
                let i = bits(&idx) as usize;
                es[if i >= es.len() { es.len() - 1 } else { i }].clone()
            }
            _ => panic!("array expected"),
        },
        Opcode::ArraySet => match (kid(0), kid(1)) {
            (V::Array(mut es), idx) => {
                let i = bits(&idx) as usize;
                if i < es.len() {
                    es[i] = kid(2);
                }
                V::Array(es)
            }
            _ => panic!("array expected"),
        },
        Opcode::MkVariant { arm, .. } => V::Variant {
            arm: *arm,
            payload: Box::new(kid(0)),
        },
        Opcode::VariantTag => match kid(0) {
            V::Variant { arm, .. } => V::Bv {
                width: TAG_WIDTH,
                value: arm as u128,
            },
            _ => panic!("variant expected"),
        },
        Opcode::VariantGet(want) => match kid(0) {
            V::Variant { arm, payload } if arm == *want => *payload,
            V::Variant { .. } => ConcreteValue::default_of(&node.sort),
            _ => panic!("variant expected"),
        },
    }
}

fn values_equal(a: &ConcreteValue, b: &ConcreteValue) -> bool {
    use ConcreteValue as V;
    match (a, b) {
        (V::Bool(x), V::Bool(y)) => x == y,
        (V::Bv { value: x, .. }, V::Bv { value: y, .. }) => x == y,
        (V::Unit, V::Unit) => true,
        (V::Array(xs), V::Array(ys))
        | (V::Tuple(xs), V::Tuple(ys))
        | (V::Record(xs), V::Record(ys)) => {
            xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| values_equal(x, y))
        }
        (
            V::Variant { arm: ax, payload: px },
            V::Variant { arm: ay, payload: py },
        ) => ax == ay && values_equal(px, py),
        _ => false,
    }
}

/// One randomly instantiated left-hand side per rewrite rule, built with
/// `mk_raw` so the rule has not fired, paired with the result of building
/// the same node through `mk`. Rule soundness tests evaluate both sides.
pub fn rule_instances(g: &mut Gen) -> Vec<(&'static str, TermId, TermId)> {
    let mut out = Vec::new();
    let bool_s = Sort::Bool;
    let bv8 = Sort::BitVec(8);

    let x = g.gen(&bool_s, 2);
    let t = g.table.const_bool(true);
    let f = g.table.const_bool(false);
    let mut pair = |name: &'static str, g: &mut Gen, op: Opcode, ch: Vec<TermId>| {
        let lhs = g.table.mk_raw(op.clone(), &ch).unwrap();
        let rhs = g.table.mk(op, &ch).unwrap();
        out.push((name, lhs, rhs));
    };

    pair("and_true", g, Opcode::And, vec![x, t]);
    pair("and_false", g, Opcode::And, vec![f, x]);
    pair("or_false", g, Opcode::Or, vec![x, f]);
    pair("or_true", g, Opcode::Or, vec![t, x]);
    let nx = g.table.mk(Opcode::Not, &[x]).unwrap();
    pair("not_not", g, Opcode::Not, vec![nx]);
    let a8 = g.gen(&bv8, 2);
    let b8 = g.gen(&bv8, 2);
    pair("eq_same", g, Opcode::Eq, vec![a8, a8]);
    let c = g.gen(&bool_s, 2);
    pair("ite_true", g, Opcode::Ite, vec![t, a8, b8]);
    pair("ite_false", g, Opcode::Ite, vec![f, a8, b8]);
    pair("ite_same", g, Opcode::Ite, vec![c, a8, a8]);
    pair("ite_bool_collapse", g, Opcode::Ite, vec![c, t, f]);
    let z8 = g.table.const_bv(8, 0).unwrap();
    let one8 = g.table.const_bv(8, 1).unwrap();
    pair("bvadd_zero", g, Opcode::BvAdd, vec![a8, z8]);
    pair("bvxor_same", g, Opcode::BvXor, vec![a8, a8]);
    pair("bvand_zero", g, Opcode::BvAnd, vec![a8, z8]);
    pair("bvmul_one", g, Opcode::BvMul, vec![a8, one8]);

    // Constant folding, one arithmetic and one boolean instance.
    let (cv1, cv2) = (g.rng.gen::<u8>() as u128, g.rng.gen::<u8>() as u128);
    let k1 = g.table.const_bv(8, cv1).unwrap();
    let k2 = g.table.const_bv(8, cv2).unwrap();
    pair("fold_bvmul", g, Opcode::BvMul, vec![k1, k2]);
    pair("fold_xor", g, Opcode::Xor, vec![t, t]);

    // Projections over freshly built constructors.
    let fx = g.gen(&bv8, 1);
    let fy = g.gen(&bool_s, 1);
    let tup = g.table.mk(Opcode::MkTuple, &[fx, fy]).unwrap();
    pair("tupleget_mk", g, Opcode::TupleGet(0), vec![tup]);
    let rec = g.table.mk(Opcode::MkRecord(record_sort()), &[fx, fy]).unwrap();
    pair("recordget_mk", g, Opcode::RecordGet(1), vec![rec]);
    let pay = g.gen(&Sort::BitVec(4), 1);
    let var = g
        .table
        .mk(
            Opcode::MkVariant {
                sort: variant_sort(),
                arm: 0,
            },
            &[pay],
        )
        .unwrap();
    pair("variantget_mk", g, Opcode::VariantGet(0), vec![var]);
    pair("varianttag_mk", g, Opcode::VariantTag, vec![var]);
    let e0 = g.gen(&bv8, 1);
    let e1 = g.gen(&bv8, 1);
    let e2 = g.gen(&bv8, 1);
    let arr = g.table.mk(Opcode::MkArray(Sort::BitVec(8)), &[e0, e1, e2]).unwrap();
    let i1 = g.table.const_bv(8, 1).unwrap();
    pair("arrayget_const_mk", g, Opcode::ArrayGet, vec![arr, i1]);

    // Interval-driven Bool constants: zext keeps the operand below 16, so
    // the comparison with 200 is provably true.
    let small = g.gen(&Sort::BitVec(4), 2);
    let wide = g.table.mk(Opcode::BvZeroExtend(8), &[small]).unwrap();
    let k200 = g.table.const_bv(8, 200).unwrap();
    pair("interval_bool", g, Opcode::BvULt, vec![wide, k200]);

    out
}

/// An environment for a standalone table whose symbols were created by
/// arbitrary code: binds every registered symbol to a random value.
pub fn env_for(table: &TermTable, rng: &mut ChaCha8Rng) -> Env {
    let mut env = Env::new();
    for (i, info) in table.symbols().iter().enumerate() {
        let v = random_value_of(&info.sort, rng);
        env.bind(SymbolId(i as u32), v);
    }
    env
}

pub fn random_value_of(sort: &Sort, rng: &mut ChaCha8Rng) -> ConcreteValue {
    match sort {
        Sort::Bool => ConcreteValue::Bool(rng.gen()),
        Sort::BitVec(w) => ConcreteValue::Bv {
            width: *w,
            value: rng.gen::<u128>() & mask(*w),
        },
        Sort::Unit => ConcreteValue::Unit,
        Sort::Array(e, n) => {
            ConcreteValue::Array((0..*n).map(|_| random_value_of(e, rng)).collect())
        }
        Sort::Tuple(fs) => ConcreteValue::Tuple(fs.iter().map(|f| random_value_of(f, rng)).collect()),
        Sort::Record { fields, .. } => {
            ConcreteValue::Record(fields.iter().map(|(_, f)| random_value_of(f, rng)).collect())
        }
        Sort::Variant { arms, .. } => {
            let arm = rng.gen_range(0..arms.len());
            ConcreteValue::Variant {
                arm: arm as u32,
                payload: Box::new(random_value_of(&arms[arm].1, rng)),
            }
        }
        Sort::Ref(_) => unreachable!(),
    }
}

/// Check that every scalar node's interval contains its value under `env`.
pub fn check_interval_containment(table: &TermTable, env: &Env) -> Result<(), String> {
    for i in 0..table.num_terms() {
        let t = TermId(i as u32);
        if let Some(iv) = table.interval_of(t) {
            let v = table
                .eval(t, env)
                .map_err(|e| format!("eval failed on %{i}: {e}"))?;
            let bits = v.scalar_bits().expect("interval implies scalar");
            if !iv.contains(bits) {
                return Err(format!(
                    "interval violation at %{i}: value {bits} outside [{},{}]",
                    iv.lo, iv.hi
                ));
            }
        }
    }
    Ok(())
}


// ---- Random well-formed programs ------------------------------------------
//
// Used by the frontend round-trip tests: every generated program prints to
// valid surface syntax, parses back to the identical structure, and passes
// the sort checker. Locals are only ever introduced as assignment
// destinations (never first seen as a read), which makes the generator's
// numbering agree with the parser's first-use numbering.

use crate::ir::{
    AggregateKind, Annotation, BinOpKind, Block, BlockId, CheckedKind, Function, LocalDecl,
    LocalId, Operand, Program, RefSelector, Rvalue, Selector, SortDecl, SourceSpan, Stmt,
    StmtKind, TermKind, Terminator,
};
use crate::ir::UnOpKind as IrUnOp;

const GEN_WIDTHS: &[u32] = &[1, 4, 8, 32, 128];

pub fn gen_program(seed: u64) -> Program {
    let mut g = ProgGen {
        rng: ChaCha8Rng::seed_from_u64(seed),
        funcs: Vec::new(),
    };
    let nf = g.rng.gen_range(1..=3);
    for i in 0..nf {
        let f = g.gen_function(i);
        g.funcs.push(f);
    }
    Program {
        sort_decls: vec![
            SortDecl {
                name: "R".into(),
                sort: record_sort(),
                span: SourceSpan::default(),
            },
            SortDecl {
                name: "V".into(),
                sort: variant_sort(),
                span: SourceSpan::default(),
            },
        ],
        functions: g.funcs,
    }
}

struct ProgGen {
    rng: ChaCha8Rng,
    funcs: Vec<Function>,
}

struct FnBuild {
    locals: Vec<LocalDecl>,
    next_tmp: usize,
    next_sym: usize,
}

impl FnBuild {
    fn of_sort(&self, sort: &Sort) -> Vec<LocalId> {
        self.locals
            .iter()
            .enumerate()
            .filter(|(_, d)| d.sort == *sort)
            .map(|(i, _)| LocalId(i as u32))
            .collect()
    }

    fn matching(&self, pred: impl Fn(&Sort) -> bool) -> Vec<LocalId> {
        self.locals
            .iter()
            .enumerate()
            .filter(|(_, d)| pred(&d.sort))
            .map(|(i, _)| LocalId(i as u32))
            .collect()
    }

    fn fresh(&mut self, sort: Sort) -> LocalId {
        let id = LocalId(self.locals.len() as u32);
        self.locals.push(LocalDecl {
            name: format!("t{}", self.next_tmp),
            sort,
        });
        self.next_tmp += 1;
        id
    }
}

impl ProgGen {
    fn pool(&mut self) -> Sort {
        let sorts = [
            Sort::Bool,
            Sort::BitVec(1),
            Sort::BitVec(4),
            Sort::BitVec(8),
            Sort::BitVec(32),
            Sort::BitVec(128),
            Sort::Array(Box::new(Sort::BitVec(8)), 3),
            Sort::Tuple(vec![Sort::BitVec(4), Sort::Bool]),
            record_sort(),
            variant_sort(),
            Sort::Unit,
        ];
        sorts.choose(&mut self.rng).expect("nonempty").clone()
    }

    fn width(&mut self) -> u32 {
        *GEN_WIDTHS.choose(&mut self.rng).expect("nonempty")
    }

    /// An operand of the given sort: an existing local when available,
    /// otherwise a literal for sorts that have them.
    fn operand_of(&mut self, fb: &FnBuild, sort: &Sort) -> Option<Operand> {
        let locals = fb.of_sort(sort);
        if !locals.is_empty() && self.rng.gen_bool(0.6) {
            return Some(Operand::Local(*locals.choose(&mut self.rng).expect("nonempty")));
        }
        match sort {
            Sort::Bool => Some(Operand::ConstBool(self.rng.gen())),
            Sort::BitVec(w) => Some(Operand::ConstBv {
                width: *w,
                value: self.rng.gen::<u128>() & mask(*w),
            }),
            Sort::Unit => Some(Operand::Unit),
            _ if !locals.is_empty() => {
                Some(Operand::Local(*locals.choose(&mut self.rng).expect("nonempty")))
            }
            _ => None,
        }
    }

    fn gen_rvalue(&mut self, fb: &FnBuild) -> (Rvalue, Sort) {
        for _ in 0..24 {
            if let Some(x) = self.try_rvalue(fb) {
                return x;
            }
        }
        let w = self.width();
        let op = self.operand_of(fb, &Sort::BitVec(w)).expect("bv literal always available");
        (Rvalue::Use(op), Sort::BitVec(w))
    }

    fn try_rvalue(&mut self, fb: &FnBuild) -> Option<(Rvalue, Sort)> {
        let form = self.rng.gen_range(0..18u32);
        Some(match form {
            0 => {
                let sort = self.pool();
                let op = self.operand_of(fb, &sort)?;
                (Rvalue::Use(op), sort)
            }
            1 => {
                use BinOpKind::*;
                let k = *[Add, Sub, Mul, UDiv, URem, Shl, LShr]
                    .choose(&mut self.rng)
                    .expect("nonempty");
                let w = self.width();
                let a = self.operand_of(fb, &Sort::BitVec(w))?;
                let b = self.operand_of(fb, &Sort::BitVec(w))?;
                (Rvalue::BinOp(k, a, b), Sort::BitVec(w))
            }
            2 => {
                use BinOpKind::*;
                let k = *[Ult, Ule, Ugt, Uge, Slt, Sle, Eq, Ne]
                    .choose(&mut self.rng)
                    .expect("nonempty");
                let s = if matches!(k, Eq | Ne) && self.rng.gen_bool(0.3) {
                    Sort::Bool
                } else {
                    Sort::BitVec(self.width())
                };
                let a = self.operand_of(fb, &s)?;
                let b = self.operand_of(fb, &s)?;
                (Rvalue::BinOp(k, a, b), Sort::Bool)
            }
            3 => {
                use BinOpKind::*;
                let k = *[And, Or, Xor, Implies].choose(&mut self.rng).expect("nonempty");
                let s = if k != Implies && self.rng.gen_bool(0.4) {
                    Sort::BitVec(self.width())
                } else {
                    Sort::Bool
                };
                let a = self.operand_of(fb, &s)?;
                let b = self.operand_of(fb, &s)?;
                (Rvalue::BinOp(k, a, b), s)
            }
            4 => {
                let w1 = self.width().min(64);
                let w2 = self.width().min(64);
                let a = self.operand_of(fb, &Sort::BitVec(w1))?;
                let b = self.operand_of(fb, &Sort::BitVec(w2))?;
                (Rvalue::BinOp(BinOpKind::Concat, a, b), Sort::BitVec(w1 + w2))
            }
            5 => {
                if self.rng.gen_bool(0.5) {
                    let s = if self.rng.gen_bool(0.5) {
                        Sort::Bool
                    } else {
                        Sort::BitVec(self.width())
                    };
                    let a = self.operand_of(fb, &s)?;
                    (Rvalue::UnOp(IrUnOp::Not, a), s)
                } else {
                    let w = self.width();
                    let a = self.operand_of(fb, &Sort::BitVec(w))?;
                    (Rvalue::UnOp(IrUnOp::Neg, a), Sort::BitVec(w))
                }
            }
            6 => {
                let from = self.width();
                let a = self.operand_of(fb, &Sort::BitVec(from))?;
                if self.rng.gen_bool(0.5) {
                    let to = *GEN_WIDTHS.iter().filter(|w| **w >= from).choose(&mut self.rng)?;
                    (Rvalue::UnOp(IrUnOp::ZeroExtend(to), a), Sort::BitVec(to))
                } else {
                    let to = *GEN_WIDTHS.iter().filter(|w| **w <= from).choose(&mut self.rng)?;
                    (Rvalue::UnOp(IrUnOp::Truncate(to), a), Sort::BitVec(to))
                }
            }
            7 => {
                let k = *[CheckedKind::Add, CheckedKind::Sub, CheckedKind::Mul]
                    .choose(&mut self.rng)
                    .expect("nonempty");
                let w = self.width();
                let a = self.operand_of(fb, &Sort::BitVec(w))?;
                let b = self.operand_of(fb, &Sort::BitVec(w))?;
                (Rvalue::Checked(k, a, b), Sort::BitVec(w))
            }
            8 => {
                let n = self.rng.gen_range(0..=3);
                let mut sorts = Vec::new();
                let mut ops = Vec::new();
                for _ in 0..n {
                    let s = match self.rng.gen_range(0..3) {
                        0 => Sort::Bool,
                        1 => Sort::BitVec(self.width()),
                        _ => Sort::Unit,
                    };
                    ops.push(self.operand_of(fb, &s)?);
                    sorts.push(s);
                }
                (
                    Rvalue::Aggregate(AggregateKind::Tuple, ops),
                    Sort::Tuple(sorts),
                )
            }
            9 => {
                let elem = if self.rng.gen_bool(0.7) {
                    Sort::BitVec(8)
                } else {
                    Sort::Bool
                };
                let n = self.rng.gen_range(1..=3);
                let mut ops = Vec::new();
                for _ in 0..n {
                    ops.push(self.operand_of(fb, &elem)?);
                }
                (
                    Rvalue::Aggregate(AggregateKind::Array(elem.clone()), ops),
                    Sort::Array(Box::new(elem), n),
                )
            }
            10 => {
                if self.rng.gen_bool(0.5) {
                    let x = self.operand_of(fb, &Sort::BitVec(8))?;
                    let y = self.operand_of(fb, &Sort::Bool)?;
                    (
                        Rvalue::Aggregate(AggregateKind::Record(record_sort()), vec![x, y]),
                        record_sort(),
                    )
                } else {
                    let arm = self.rng.gen_range(0..2u32);
                    let payload = if arm == 0 {
                        self.operand_of(fb, &Sort::BitVec(4))?
                    } else {
                        self.operand_of(fb, &Sort::Bool)?
                    };
                    (
                        Rvalue::Aggregate(
                            AggregateKind::Variant(variant_sort(), arm),
                            vec![payload],
                        ),
                        variant_sort(),
                    )
                }
            }
            11 => {
                let cands = fb.matching(|s| {
                    matches!(s, Sort::Tuple(fs) if !fs.is_empty())
                        || matches!(s, Sort::Record { .. })
                });
                let l = *cands.choose(&mut self.rng)?;
                let sort = fb.locals[l.0 as usize].sort.clone();
                match sort {
                    Sort::Tuple(fs) => {
                        let i = self.rng.gen_range(0..fs.len());
                        (
                            Rvalue::Project(Operand::Local(l), Selector::Tuple(i as u32)),
                            fs[i].clone(),
                        )
                    }
                    Sort::Record { fields, .. } => {
                        let (name, fsort) = fields.choose(&mut self.rng)?.clone();
                        (
                            Rvalue::Project(Operand::Local(l), Selector::Named(name)),
                            fsort,
                        )
                    }
                    _ => return None,
                }
            }
            12 => {
                let cands = fb.matching(|s| matches!(s, Sort::Variant { .. }));
                let l = *cands.choose(&mut self.rng)?;
                let Sort::Variant { arms, .. } = fb.locals[l.0 as usize].sort.clone() else {
                    return None;
                };
                if self.rng.gen_bool(0.4) {
                    (
                        Rvalue::Project(Operand::Local(l), Selector::Tag),
                        Sort::BitVec(8),
                    )
                } else {
                    let (name, asort) = arms.choose(&mut self.rng)?.clone();
                    (
                        Rvalue::Project(Operand::Local(l), Selector::Named(name)),
                        asort,
                    )
                }
            }
            13 => {
                let cands = fb.matching(|s| matches!(s, Sort::Array(_, n) if *n > 0));
                let l = *cands.choose(&mut self.rng)?;
                let Sort::Array(e, _) = fb.locals[l.0 as usize].sort.clone() else {
                    return None;
                };
                let iw = self.width();
                let idx = self.operand_of(fb, &Sort::BitVec(iw))?;
                (Rvalue::Index(Operand::Local(l), idx), *e)
            }
            14 => {
                let pointee = self.pool();
                let init = self.operand_of(fb, &pointee)?;
                (
                    Rvalue::Alloc(pointee.clone(), init),
                    Sort::Ref(Box::new(pointee)),
                )
            }
            15 => {
                let cands = fb.matching(|s| matches!(s, Sort::Ref(_)));
                let l = *cands.choose(&mut self.rng)?;
                let Sort::Ref(p) = fb.locals[l.0 as usize].sort.clone() else {
                    return None;
                };
                (Rvalue::Load(Operand::Local(l)), *p)
            }
            16 => {
                let cands = fb.matching(|s| {
                    matches!(
                        s,
                        Sort::Ref(p) if matches!(
                            &**p,
                            Sort::Tuple(fs) if !fs.is_empty()
                        ) || matches!(&**p, Sort::Record { .. })
                            || matches!(&**p, Sort::Array(_, n) if *n > 0)
                    )
                });
                let l = *cands.choose(&mut self.rng)?;
                let Sort::Ref(p) = fb.locals[l.0 as usize].sort.clone() else {
                    return None;
                };
                match *p {
                    Sort::Tuple(fs) => {
                        let i = self.rng.gen_range(0..fs.len());
                        (
                            Rvalue::RefProject(Operand::Local(l), RefSelector::Tuple(i as u32)),
                            Sort::Ref(Box::new(fs[i].clone())),
                        )
                    }
                    Sort::Record { fields, .. } => {
                        let (name, fsort) = fields.choose(&mut self.rng)?.clone();
                        (
                            Rvalue::RefProject(Operand::Local(l), RefSelector::Named(name)),
                            Sort::Ref(Box::new(fsort)),
                        )
                    }
                    Sort::Array(e, _) => {
                        let iw = self.width();
                        let idx = self.operand_of(fb, &Sort::BitVec(iw))?;
                        (
                            Rvalue::RefProject(Operand::Local(l), RefSelector::Elem(idx)),
                            Sort::Ref(e),
                        )
                    }
                    _ => return None,
                }
            }
            _ => {
                let fi = self.rng.gen_range(0..self.funcs.len().max(1));
                let callee = self.funcs.get(fi)?;
                let name = callee.name.clone();
                let params: Vec<Sort> = callee.params.iter().map(|p| p.sort.clone()).collect();
                let ret = callee.ret_sort.clone();
                let mut args = Vec::new();
                for s in &params {
                    args.push(self.operand_of(fb, s)?);
                }
                (Rvalue::Call(name, args), ret)
            }
        })
    }

    fn gen_function(&mut self, idx: usize) -> Function {
        let mut fb = FnBuild {
            locals: Vec::new(),
            next_tmp: 0,
            next_sym: 0,
        };
        let nparams = self.rng.gen_range(0..=3usize);
        let mut params = Vec::new();
        for pi in 0..nparams {
            let sort = self.pool();
            let d = LocalDecl {
                name: format!("p{pi}"),
                sort,
            };
            params.push(d.clone());
            fb.locals.push(d);
        }
        let ret_sort = self.pool();
        let nblocks = self.rng.gen_range(1..=4usize);
        let mut blocks = Vec::new();
        let mut block_names = Vec::new();
        for bi in 0..nblocks {
            block_names.push(format!("b{bi}"));
            let nstmts = self.rng.gen_range(0..=5usize);
            let mut stmts = Vec::new();
            for _ in 0..nstmts {
                if let Some(kind) = self.gen_stmt(&mut fb) {
                    stmts.push(Stmt {
                        kind,
                        span: SourceSpan::default(),
                    });
                }
            }
            let term = self.gen_terminator(&mut fb, &ret_sort, nblocks);
            blocks.push(Block {
                stmts,
                term: Terminator {
                    kind: term,
                    span: SourceSpan::default(),
                },
            });
        }
        let annotations = if params.is_empty() && self.rng.gen_bool(0.3) {
            vec![Annotation::Test]
        } else {
            Vec::new()
        };
        Function {
            name: format!("f{idx}"),
            annotations,
            params,
            ret_sort,
            locals: fb.locals,
            blocks,
            block_names,
            span: SourceSpan::default(),
        }
    }

    fn gen_stmt(&mut self, fb: &mut FnBuild) -> Option<StmtKind> {
        match self.rng.gen_range(0..10u32) {
            0..=4 => {
                let (rv, sort) = self.gen_rvalue(fb);
                let dst = fb.fresh(sort);
                Some(StmtKind::Assign(dst, rv))
            }
            5 => {
                let mut sort = self.pool();
                while matches!(sort, Sort::Ref(_)) {
                    sort = self.pool();
                }
                let name = format!("sym{}", fb.next_sym);
                fb.next_sym += 1;
                let dst = fb.fresh(sort.clone());
                Some(StmtKind::SymbolicIntro(dst, sort, name))
            }
            6 => {
                let refs = fb.matching(|s| matches!(s, Sort::Ref(_)));
                let l = *refs.choose(&mut self.rng)?;
                let Sort::Ref(p) = fb.locals[l.0 as usize].sort.clone() else {
                    return None;
                };
                let v = self.operand_of(fb, &p)?;
                Some(StmtKind::Store(Operand::Local(l), v))
            }
            7 => {
                let c = self.operand_of(fb, &Sort::Bool)?;
                Some(StmtKind::Assume(c))
            }
            8 => {
                let c = self.operand_of(fb, &Sort::Bool)?;
                let msg = if self.rng.gen_bool(0.5) {
                    Some("claim \"quoted\" with\nnewline\tand\\slash".to_string())
                } else {
                    None
                };
                Some(StmtKind::Assert(c, msg))
            }
            _ => Some(StmtKind::Nop),
        }
    }

    fn gen_terminator(&mut self, fb: &mut FnBuild, ret_sort: &Sort, nblocks: usize) -> TermKind {
        match self.rng.gen_range(0..10u32) {
            0..=2 => TermKind::Goto(BlockId(self.rng.gen_range(0..nblocks) as u32)),
            3..=5 => {
                let c = self
                    .operand_of(fb, &Sort::Bool)
                    .expect("bool literal always available");
                TermKind::Branch(
                    c,
                    BlockId(self.rng.gen_range(0..nblocks) as u32),
                    BlockId(self.rng.gen_range(0..nblocks) as u32),
                )
            }
            6 => TermKind::Panic("generated failure \"path\"".to_string()),
            7 => TermKind::Unreachable,
            _ => match self.operand_of(fb, ret_sort) {
                Some(v) => TermKind::Return(v),
                None => TermKind::Panic("no value of the return sort yet".to_string()),
            },
        }
    }
}
