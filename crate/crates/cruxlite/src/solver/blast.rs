//! Tseitin bit-blasting of term queries to CNF.
//!
//! Every Bool term becomes one propositional bit, every `bv w` term a
//! vector of `w` bits (LSB first), and aggregates decompose structurally.
//! Variant values carry their tag bits plus one slot per arm; slots other
//! than the active arm always hold the arm sort's default bit pattern,
//! which makes projection a plain slot read and keeps structural equality
//! a bitwise comparison.
//!
//! Encodings: ripple-carry adders, shift-and-add multipliers, restoring
//! long division, barrel shifters, and per-bit multiplexers for `Ite`.
//! Shared subterms blast exactly once (the memo follows the DAG), and
//! identical gates are reused.

use std::collections::{BTreeSet, HashMap};

use crate::term::{
    mask, ConcreteValue, Opcode, Sort, SymbolId, TermId, TermTable, TAG_WIDTH,
};

use super::{CnfFormula, Lit, Model};

/// One propositional bit: either a known constant or a CNF literal.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub enum Bit {
    Const(bool),
    Var(Lit),
}

use Bit::{Const, Var};

fn neg(b: Bit) -> Bit {
    match b {
        Const(x) => Const(!x),
        Var(l) => Var(-l),
    }
}

/// The propositional image of one term.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Bits {
    Bool(Bit),
    /// LSB first.
    Bv(Vec<Bit>),
    Unit,
    /// Tuple, record, or array elements in declaration order.
    Agg(Vec<Bits>),
    /// Tag bits (LSB first, [`TAG_WIDTH`] wide) plus one slot per arm.
    Variant { tag: Vec<Bit>, slots: Vec<Bits> },
}

impl Bits {
    fn flatten_into(&self, out: &mut Vec<Bit>) {
        match self {
            Bits::Bool(b) => out.push(*b),
            Bits::Bv(v) => out.extend_from_slice(v),
            Bits::Unit => {}
            Bits::Agg(es) => {
                for e in es {
                    e.flatten_into(out);
                }
            }
            Bits::Variant { tag, slots } => {
                out.extend_from_slice(tag);
                for s in slots {
                    s.flatten_into(out);
                }
            }
        }
    }

    fn flatten(&self) -> Vec<Bit> {
        let mut out = Vec::new();
        self.flatten_into(&mut out);
        out
    }
}

/// Map from blasted terms to their bit representations, plus the variable
/// bits backing each symbol, used to decode CNF models back to values.
#[derive(Debug, Default)]
pub struct BlastMap {
    map: HashMap<TermId, Bits>,
    sym_bits: HashMap<SymbolId, Vec<Bit>>,
}

impl BlastMap {
    pub fn bits_of(&self, t: TermId) -> Option<&Bits> {
        self.map.get(&t)
    }

    /// The flattened literal vector of a blasted term: one entry for Bool,
    /// `w` LSB-first entries for `bv w`, structural concatenation for
    /// aggregates.
    pub fn literal_vector(&self, t: TermId) -> Option<Vec<Bit>> {
        self.map.get(&t).map(Bits::flatten)
    }

    /// The variable bits allocated for a symbol, if it was reached.
    pub fn symbol_bits(&self, s: SymbolId) -> Option<&[Bit]> {
        self.sym_bits.get(&s).map(Vec::as_slice)
    }

    /// Decode a satisfying assignment into a model covering `symbols`.
    /// Symbols the query never constrained take their sort's default.
    pub fn decode(
        &self,
        table: &TermTable,
        symbols: &BTreeSet<SymbolId>,
        assignment: &[bool],
    ) -> Model {
        let mut m = Model::new();
        for &s in symbols {
            let info = table.symbol_info(s);
            let v = match self.sym_bits.get(&s) {
                None => ConcreteValue::default_of(&info.sort),
                Some(bits) => {
                    let mut val: u128 = 0;
                    for b in bits.iter().rev() {
                        val = (val << 1) | bit_value(*b, assignment) as u128;
                    }
                    match &info.sort {
                        Sort::Bool => ConcreteValue::Bool(val != 0),
                        Sort::BitVec(w) => ConcreteValue::bv(*w, val),
                        other => unreachable!("symbol of non-scalar sort {other}"),
                    }
                }
            };
            m.insert(&info.name, info.ordinal, v);
        }
        m
    }
}

/// The value of a bit under a CNF assignment.
pub fn bit_value(b: Bit, assignment: &[bool]) -> bool {
    match b {
        Const(c) => c,
        Var(l) => {
            let v = assignment[(l.unsigned_abs() - 1) as usize];
            if l > 0 {
                v
            } else {
                !v
            }
        }
    }
}

/// Blasting failed because the query left the supported fragment. Reaching
/// a reference or an aggregate-sorted symbol is an internal invariant
/// violation: the engine resolves references before discharge, and symbols
/// are only ever introduced at scalar sorts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlastError(pub String);

impl std::fmt::Display for BlastError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "blast error: {}", self.0)
    }
}

impl std::error::Error for BlastError {}

/// Blast the conjunction of Bool-sorted `conjuncts` into CNF. The formula
/// is satisfiable exactly when some assignment to the symbols makes every
/// conjunct true.
pub fn blast(
    table: &TermTable,
    conjuncts: &[TermId],
) -> Result<(CnfFormula, BlastMap), BlastError> {
    let mut b = Blaster {
        table,
        cnf: CnfFormula::new(),
        memo: HashMap::new(),
        sym_bits: HashMap::new(),
        gates: HashMap::new(),
    };
    for &c in conjuncts {
        let bits = b.bits_of(c)?;
        match bits {
            Bits::Bool(bit) => b.assert_true(bit),
            other => {
                return Err(BlastError(format!(
                    "expected a Bool conjunct, found {other:?}"
                )))
            }
        }
    }
    Ok((
        b.cnf,
        BlastMap {
            map: b.memo,
            sym_bits: b.sym_bits,
        },
    ))
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum GateKey {
    And(Lit, Lit),
    Xor(Lit, Lit),
    Ite(Lit, Lit, Lit),
}

struct Blaster<'a> {
    table: &'a TermTable,
    cnf: CnfFormula,
    memo: HashMap<TermId, Bits>,
    sym_bits: HashMap<SymbolId, Vec<Bit>>,
    gates: HashMap<GateKey, Lit>,
}

impl<'a> Blaster<'a> {
    // ---- Gates ----------------------------------------------------------

    fn assert_true(&mut self, b: Bit) {
        match b {
            Const(true) => {}
            // The query is trivially unsatisfiable; the empty clause is the
            // canonical CNF encoding of `false`.
            Const(false) => self.cnf.clauses.push(vec![]),
            Var(l) => self.cnf.add_clause(&[l]),
        }
    }

    fn and2(&mut self, a: Bit, b: Bit) -> Bit {
        match (a, b) {
            (Const(false), _) | (_, Const(false)) => Const(false),
            (Const(true), x) | (x, Const(true)) => x,
            (Var(x), Var(y)) => {
                if x == y {
                    return Var(x);
                }
                if x == -y {
                    return Const(false);
                }
                let (p, q) = (x.min(y), x.max(y));
                if let Some(&g) = self.gates.get(&GateKey::And(p, q)) {
                    return Var(g);
                }
                let g = self.cnf.new_var();
                self.cnf.add_clause(&[-g, p]);
                self.cnf.add_clause(&[-g, q]);
                self.cnf.add_clause(&[g, -p, -q]);
                self.gates.insert(GateKey::And(p, q), g);
                Var(g)
            }
        }
    }

    fn or2(&mut self, a: Bit, b: Bit) -> Bit {
        neg(self.and2(neg(a), neg(b)))
    }

    fn xor2(&mut self, a: Bit, b: Bit) -> Bit {
        match (a, b) {
            (Const(x), Const(y)) => Const(x ^ y),
            (Const(false), v) | (v, Const(false)) => v,
            (Const(true), v) | (v, Const(true)) => neg(v),
            (Var(x), Var(y)) => {
                if x == y {
                    return Const(false);
                }
                if x == -y {
                    return Const(true);
                }
                // xor(¬x, y) = ¬xor(x, y): canonicalize to positive inputs.
                let flip = (x < 0) ^ (y < 0);
                let (p, q) = (x.abs().min(y.abs()), x.abs().max(y.abs()));
                let g = if let Some(&g) = self.gates.get(&GateKey::Xor(p, q)) {
                    g
                } else {
                    let g = self.cnf.new_var();
                    self.cnf.add_clause(&[-g, p, q]);
                    self.cnf.add_clause(&[-g, -p, -q]);
                    self.cnf.add_clause(&[g, -p, q]);
                    self.cnf.add_clause(&[g, p, -q]);
                    self.gates.insert(GateKey::Xor(p, q), g);
                    g
                };
                if flip {
                    Var(-g)
                } else {
                    Var(g)
                }
            }
        }
    }

    fn iff2(&mut self, a: Bit, b: Bit) -> Bit {
        neg(self.xor2(a, b))
    }

    fn ite_bit(&mut self, c: Bit, a: Bit, b: Bit) -> Bit {
        match c {
            Const(true) => return a,
            Const(false) => return b,
            Var(_) => {}
        }
        if a == b {
            return a;
        }
        if a == neg(b) {
            // ite(c, a, ¬a) = (c ↔ a).
            return self.iff2(c, a);
        }
        match (a, b) {
            (Const(true), _) => return self.or2(c, b),
            (Const(false), _) => {
                let nc = neg(c);
                return self.and2(nc, b);
            }
            (_, Const(true)) => {
                let nc = neg(c);
                return self.or2(nc, a);
            }
            (_, Const(false)) => return self.and2(c, a),
            _ => {}
        }
        let (mut cl, mut al, mut bl) = match (c, a, b) {
            (Var(cl), Var(al), Var(bl)) => (cl, al, bl),
            _ => unreachable!("constants handled above"),
        };
        if cl < 0 {
            cl = -cl;
            std::mem::swap(&mut al, &mut bl);
        }
        if let Some(&g) = self.gates.get(&GateKey::Ite(cl, al, bl)) {
            return Var(g);
        }
        let g = self.cnf.new_var();
        self.cnf.add_clause(&[-cl, -al, g]);
        self.cnf.add_clause(&[-cl, al, -g]);
        self.cnf.add_clause(&[cl, -bl, g]);
        self.cnf.add_clause(&[cl, bl, -g]);
        // Redundant but propagation-friendly: when both branches agree the
        // output agrees regardless of the condition.
        self.cnf.add_clause(&[-al, -bl, g]);
        self.cnf.add_clause(&[al, bl, -g]);
        self.gates.insert(GateKey::Ite(cl, al, bl), g);
        Var(g)
    }

    fn and_many(&mut self, bits: &[Bit]) -> Bit {
        let mut acc = Const(true);
        for &b in bits {
            acc = self.and2(acc, b);
            if acc == Const(false) {
                return acc;
            }
        }
        acc
    }

    fn or_many(&mut self, bits: &[Bit]) -> Bit {
        let mut acc = Const(false);
        for &b in bits {
            acc = self.or2(acc, b);
            if acc == Const(true) {
                return acc;
            }
        }
        acc
    }

    // ---- Word-level circuits ---------------------------------------------

    fn full_add(&mut self, a: Bit, b: Bit, cin: Bit) -> (Bit, Bit) {
        let ab = self.xor2(a, b);
        let sum = self.xor2(ab, cin);
        let t1 = self.and2(a, b);
        let t2 = self.and2(ab, cin);
        let cout = self.or2(t1, t2);
        (sum, cout)
    }

    /// Ripple-carry addition `a + b + cin`; returns (sum, carry out).
    fn add_bits(&mut self, a: &[Bit], b: &[Bit], cin: Bit) -> (Vec<Bit>, Bit) {
        debug_assert_eq!(a.len(), b.len());
        let mut sum = Vec::with_capacity(a.len());
        let mut carry = cin;
        for i in 0..a.len() {
            let (s, c) = self.full_add(a[i], b[i], carry);
            sum.push(s);
            carry = c;
        }
        (sum, carry)
    }

    fn not_bits(bits: &[Bit]) -> Vec<Bit> {
        bits.iter().map(|&b| neg(b)).collect()
    }

    fn sub_bits(&mut self, a: &[Bit], b: &[Bit]) -> Vec<Bit> {
        let nb = Self::not_bits(b);
        self.add_bits(a, &nb, Const(true)).0
    }

    /// Unsigned less-than via an LSB-to-MSB comparison chain.
    fn ult_bits(&mut self, a: &[Bit], b: &[Bit]) -> Bit {
        debug_assert_eq!(a.len(), b.len());
        let mut lt = Const(false);
        for i in 0..a.len() {
            let same = self.iff2(a[i], b[i]);
            let na = neg(a[i]);
            let below = self.and2(na, b[i]);
            lt = self.ite_bit(same, lt, below);
        }
        lt
    }

    /// Shift-and-add multiplication, truncated to the operand width.
    fn mul_bits(&mut self, a: &[Bit], b: &[Bit]) -> Vec<Bit> {
        let w = a.len();
        let mut acc = vec![Const(false); w];
        for i in 0..w {
            if b[i] == Const(false) {
                continue;
            }
            let mut row = vec![Const(false); w];
            for j in i..w {
                row[j] = self.and2(b[i], a[j - i]);
            }
            acc = self.add_bits(&acc, &row, Const(false)).0;
        }
        acc
    }

    /// Restoring long division. Returns (quotient, remainder) with the
    /// evaluator's conventions: division by zero yields all ones, remainder
    /// by zero yields zero.
    fn divmod_bits(&mut self, a: &[Bit], b: &[Bit]) -> (Vec<Bit>, Vec<Bit>) {
        let w = a.len();
        // One extra bit so `2r + a_i` and the comparison never overflow.
        let mut r: Vec<Bit> = vec![Const(false); w + 1];
        let mut q: Vec<Bit> = vec![Const(false); w];
        let mut b_ext: Vec<Bit> = b.to_vec();
        b_ext.push(Const(false));
        for i in (0..w).rev() {
            let mut rs = Vec::with_capacity(w + 1);
            rs.push(a[i]);
            rs.extend_from_slice(&r[0..w]);
            let lt = self.ult_bits(&rs, &b_ext);
            let ge = neg(lt);
            let sub = self.sub_bits(&rs, &b_ext);
            r = self.mux_bits(ge, &sub, &rs);
            q[i] = ge;
        }
        // With b = 0 the circuit leaves r = a, but remainder-by-zero is
        // defined as zero.
        let b_zero = neg(self.or_many(b));
        let zeros = vec![Const(false); w];
        let rem = self.mux_bits(b_zero, &zeros, &r[0..w]);
        (q, rem)
    }

    fn shift_const_left(bits: &[Bit], k: usize) -> Vec<Bit> {
        let w = bits.len();
        if k >= w {
            return vec![Const(false); w];
        }
        let mut out = vec![Const(false); k];
        out.extend_from_slice(&bits[0..w - k]);
        out
    }

    fn shift_const_right(bits: &[Bit], k: usize) -> Vec<Bit> {
        let w = bits.len();
        if k >= w {
            return vec![Const(false); w];
        }
        let mut out = bits[k..].to_vec();
        out.resize(w, Const(false));
        out
    }

    /// Barrel shifter: one mux stage per shift-amount bit. Amounts of the
    /// operand width or more produce zero.
    fn barrel(&mut self, a: &[Bit], s: &[Bit], left: bool) -> Vec<Bit> {
        let w = a.len();
        let mut cur = a.to_vec();
        for (j, &sbit) in s.iter().enumerate() {
            let k = if j >= 31 { w } else { (1usize << j).min(w) };
            let shifted = if left {
                Self::shift_const_left(&cur, k)
            } else {
                Self::shift_const_right(&cur, k)
            };
            cur = self.mux_bits(sbit, &shifted, &cur);
        }
        cur
    }

    fn mux_bits(&mut self, c: Bit, a: &[Bit], b: &[Bit]) -> Vec<Bit> {
        debug_assert_eq!(a.len(), b.len());
        a.iter()
            .zip(b)
            .map(|(&x, &y)| self.ite_bit(c, x, y))
            .collect()
    }

    fn mux_struct(&mut self, c: Bit, a: &Bits, b: &Bits) -> Bits {
        match (a, b) {
            (Bits::Bool(x), Bits::Bool(y)) => Bits::Bool(self.ite_bit(c, *x, *y)),
            (Bits::Bv(x), Bits::Bv(y)) => Bits::Bv(self.mux_bits(c, x, y)),
            (Bits::Unit, Bits::Unit) => Bits::Unit,
            (Bits::Agg(xs), Bits::Agg(ys)) => Bits::Agg(
                xs.iter()
                    .zip(ys)
                    .map(|(x, y)| self.mux_struct(c, x, y))
                    .collect(),
            ),
            (
                Bits::Variant { tag: ta, slots: sa },
                Bits::Variant { tag: tb, slots: sb },
            ) => Bits::Variant {
                tag: self.mux_bits(c, ta, tb),
                slots: sa
                    .iter()
                    .zip(sb)
                    .map(|(x, y)| self.mux_struct(c, x, y))
                    .collect(),
            },
            (a, b) => unreachable!("sort-checked mux over mismatched shapes {a:?} / {b:?}"),
        }
    }

    /// Structural equality as a single bit. Inactive variant slots hold
    /// canonical defaults on both sides, so flat bitwise comparison is
    /// exactly structural equality.
    fn eq_bits(&mut self, a: &Bits, b: &Bits) -> Bit {
        let fa = a.flatten();
        let fb = b.flatten();
        debug_assert_eq!(fa.len(), fb.len());
        let pairs: Vec<Bit> = fa
            .iter()
            .zip(&fb)
            .map(|(&x, &y)| self.iff2(x, y))
            .collect();
        self.and_many(&pairs)
    }

    fn const_bits(width: u32, value: u128) -> Vec<Bit> {
        (0..width).map(|i| Const((value >> i) & 1 == 1)).collect()
    }

    /// The blasted image of a sort's default value.
    fn default_bits(sort: &Sort) -> Bits {
        match sort {
            Sort::Bool => Bits::Bool(Const(false)),
            Sort::BitVec(w) => Bits::Bv(vec![Const(false); *w as usize]),
            Sort::Unit => Bits::Unit,
            Sort::Array(e, n) => Bits::Agg(vec![Self::default_bits(e); *n]),
            Sort::Tuple(fs) => Bits::Agg(fs.iter().map(Self::default_bits).collect()),
            Sort::Record { fields, .. } => {
                Bits::Agg(fields.iter().map(|(_, s)| Self::default_bits(s)).collect())
            }
            Sort::Variant { arms, .. } => Bits::Variant {
                tag: Self::const_bits(TAG_WIDTH, 0),
                slots: arms.iter().map(|(_, s)| Self::default_bits(s)).collect(),
            },
            Sort::Ref(_) => unreachable!("references cannot appear in terms"),
        }
    }

    /// A bit that is true exactly when `idx` equals the constant `k`.
    fn eq_const(&mut self, idx: &[Bit], k: u128) -> Bit {
        let matches: Vec<Bit> = idx
            .iter()
            .enumerate()
            .map(|(i, &b)| if (k >> i) & 1 == 1 { b } else { neg(b) })
            .collect();
        self.and_many(&matches)
    }

    // ---- Term dispatch ---------------------------------------------------

    fn bool_of(&mut self, t: TermId) -> Result<Bit, BlastError> {
        match self.bits_of(t)? {
            Bits::Bool(b) => Ok(b),
            other => Err(BlastError(format!("expected Bool bits, got {other:?}"))),
        }
    }

    fn bv_of(&mut self, t: TermId) -> Result<Vec<Bit>, BlastError> {
        match self.bits_of(t)? {
            Bits::Bv(v) => Ok(v),
            other => Err(BlastError(format!("expected bitvector bits, got {other:?}"))),
        }
    }

    fn bits_of(&mut self, t: TermId) -> Result<Bits, BlastError> {
        if let Some(b) = self.memo.get(&t) {
            return Ok(b.clone());
        }
        let node = self.table.node(t).clone();
        let bits = match &node.op {
            Opcode::Const(crate::term::ConstVal::Bool(b)) => Bits::Bool(Const(*b)),
            Opcode::Const(crate::term::ConstVal::Bv { width, value }) => {
                Bits::Bv(Self::const_bits(*width, *value))
            }
            Opcode::UnitConst => Bits::Unit,
            Opcode::Symbol(s) => {
                let info = self.table.symbol_info(*s);
                let width = match &info.sort {
                    Sort::Bool => 1,
                    Sort::BitVec(w) => *w,
                    other => {
                        return Err(BlastError(format!(
                            "symbol {}!{} has non-scalar sort {other}",
                            info.name, info.ordinal
                        )))
                    }
                };
                let vars: Vec<Bit> = (0..width).map(|_| Var(self.cnf.new_var())).collect();
                self.sym_bits.insert(*s, vars.clone());
                if matches!(info.sort, Sort::Bool) {
                    Bits::Bool(vars[0])
                } else {
                    Bits::Bv(vars)
                }
            }
            Opcode::Not => {
                let a = self.bool_of(node.children[0])?;
                Bits::Bool(neg(a))
            }
            Opcode::And | Opcode::Or | Opcode::Xor | Opcode::Implies => {
                let a = self.bool_of(node.children[0])?;
                let b = self.bool_of(node.children[1])?;
                let r = match node.op {
                    Opcode::And => self.and2(a, b),
                    Opcode::Or => self.or2(a, b),
                    Opcode::Xor => self.xor2(a, b),
                    Opcode::Implies => {
                        let na = neg(a);
                        self.or2(na, b)
                    }
                    _ => unreachable!(),
                };
                Bits::Bool(r)
            }
            Opcode::Ite => {
                let c = self.bool_of(node.children[0])?;
                let a = self.bits_of(node.children[1])?;
                let b = self.bits_of(node.children[2])?;
                self.mux_struct(c, &a, &b)
            }
            Opcode::Eq => {
                let a = self.bits_of(node.children[0])?;
                let b = self.bits_of(node.children[1])?;
                Bits::Bool(self.eq_bits(&a, &b))
            }
            Opcode::BvAdd
            | Opcode::BvSub
            | Opcode::BvMul
            | Opcode::BvUDiv
            | Opcode::BvURem
            | Opcode::BvAnd
            | Opcode::BvOr
            | Opcode::BvXor
            | Opcode::BvShl
            | Opcode::BvLShr => {
                let a = self.bv_of(node.children[0])?;
                let b = self.bv_of(node.children[1])?;
                let r = match node.op {
                    Opcode::BvAdd => self.add_bits(&a, &b, Const(false)).0,
                    Opcode::BvSub => self.sub_bits(&a, &b),
                    Opcode::BvMul => self.mul_bits(&a, &b),
                    Opcode::BvUDiv => self.divmod_bits(&a, &b).0,
                    Opcode::BvURem => self.divmod_bits(&a, &b).1,
                    Opcode::BvAnd => a
                        .iter()
                        .zip(&b)
                        .map(|(&x, &y)| self.and2(x, y))
                        .collect(),
                    Opcode::BvOr => {
                        a.iter().zip(&b).map(|(&x, &y)| self.or2(x, y)).collect()
                    }
                    Opcode::BvXor => {
                        a.iter().zip(&b).map(|(&x, &y)| self.xor2(x, y)).collect()
                    }
                    Opcode::BvShl => self.barrel(&a, &b, true),
                    Opcode::BvLShr => self.barrel(&a, &b, false),
                    _ => unreachable!(),
                };
                Bits::Bv(r)
            }
            Opcode::BvNot => {
                let a = self.bv_of(node.children[0])?;
                Bits::Bv(Self::not_bits(&a))
            }
            Opcode::BvNeg => {
                let a = self.bv_of(node.children[0])?;
                let na = Self::not_bits(&a);
                let zeros = vec![Const(false); a.len()];
                Bits::Bv(self.add_bits(&na, &zeros, Const(true)).0)
            }
            Opcode::BvULt | Opcode::BvULe | Opcode::BvUGt | Opcode::BvUGe => {
                let a = self.bv_of(node.children[0])?;
                let b = self.bv_of(node.children[1])?;
                let r = match node.op {
                    Opcode::BvULt => self.ult_bits(&a, &b),
                    Opcode::BvUGt => self.ult_bits(&b, &a),
                    Opcode::BvULe => {
                        let gt = self.ult_bits(&b, &a);
                        neg(gt)
                    }
                    Opcode::BvUGe => {
                        let lt = self.ult_bits(&a, &b);
                        neg(lt)
                    }
                    _ => unreachable!(),
                };
                Bits::Bool(r)
            }
            Opcode::BvSLt | Opcode::BvSLe => {
                // Flip the sign bits and compare unsigned.
                let mut a = self.bv_of(node.children[0])?;
                let mut b = self.bv_of(node.children[1])?;
                let msb = a.len() - 1;
                a[msb] = neg(a[msb]);
                b[msb] = neg(b[msb]);
                let r = match node.op {
                    Opcode::BvSLt => self.ult_bits(&a, &b),
                    Opcode::BvSLe => {
                        let gt = self.ult_bits(&b, &a);
                        neg(gt)
                    }
                    _ => unreachable!(),
                };
                Bits::Bool(r)
            }
            Opcode::BvZeroExtend(target) => {
                let mut a = self.bv_of(node.children[0])?;
                a.resize(*target as usize, Const(false));
                Bits::Bv(a)
            }
            Opcode::BvTruncate(target) => {
                let mut a = self.bv_of(node.children[0])?;
                a.truncate(*target as usize);
                Bits::Bv(a)
            }
            Opcode::BvConcat => {
                let hi = self.bv_of(node.children[0])?;
                let mut lo = self.bv_of(node.children[1])?;
                lo.extend(hi);
                Bits::Bv(lo)
            }
            Opcode::MkTuple | Opcode::MkRecord(_) | Opcode::MkArray(_) => {
                let mut es = Vec::with_capacity(node.children.len());
                for &c in &node.children {
                    es.push(self.bits_of(c)?);
                }
                Bits::Agg(es)
            }
            Opcode::TupleGet(i) | Opcode::RecordGet(i) => {
                match self.bits_of(node.children[0])? {
                    Bits::Agg(es) => es[*i as usize].clone(),
                    other => {
                        return Err(BlastError(format!(
                            "projection from non-aggregate {other:?}"
                        )))
                    }
                }
            }
            Opcode::ArrayGet => {
                let arr = match self.bits_of(node.children[0])? {
                    Bits::Agg(es) => es,
                    other => {
                        return Err(BlastError(format!("read from non-array {other:?}")))
                    }
                };
                let idx = self.bv_of(node.children[1])?;
                if arr.is_empty() {
                    return Err(BlastError("read from zero-length array".into()));
                }
                let idx_w = idx.len() as u32;
                // Out-of-range indices clamp to the last element; indices the
                // width cannot express are unreachable.
                let top = mask(idx_w).min((arr.len() - 1) as u128) as usize;
                let mut acc = arr[top].clone();
                for k in (0..top).rev() {
                    let is_k = self.eq_const(&idx, k as u128);
                    acc = self.mux_struct(is_k, &arr[k], &acc);
                }
                acc
            }
            Opcode::ArraySet => {
                let arr = match self.bits_of(node.children[0])? {
                    Bits::Agg(es) => es,
                    other => {
                        return Err(BlastError(format!("write to non-array {other:?}")))
                    }
                };
                let idx = self.bv_of(node.children[1])?;
                let v = self.bits_of(node.children[2])?;
                let idx_w = idx.len() as u32;
                let mut out = Vec::with_capacity(arr.len());
                for (k, old) in arr.iter().enumerate() {
                    // Indices the width cannot express leave the element
                    // unchanged; out-of-range writes are a no-op anyway.
                    if (k as u128) > mask(idx_w) {
                        out.push(old.clone());
                        continue;
                    }
                    let is_k = self.eq_const(&idx, k as u128);
                    out.push(self.mux_struct(is_k, &v, old));
                }
                Bits::Agg(out)
            }
            Opcode::MkVariant { sort, arm } => {
                let arms = match sort {
                    Sort::Variant { arms, .. } => arms,
                    other => {
                        return Err(BlastError(format!("variant of non-variant sort {other}")))
                    }
                };
                let payload = self.bits_of(node.children[0])?;
                let mut slots = Vec::with_capacity(arms.len());
                for (j, (_, s)) in arms.iter().enumerate() {
                    if j as u32 == *arm {
                        slots.push(payload.clone());
                    } else {
                        slots.push(Self::default_bits(s));
                    }
                }
                Bits::Variant {
                    tag: Self::const_bits(TAG_WIDTH, *arm as u128),
                    slots,
                }
            }
            Opcode::VariantTag => match self.bits_of(node.children[0])? {
                Bits::Variant { tag, .. } => Bits::Bv(tag),
                other => {
                    return Err(BlastError(format!("tag of non-variant {other:?}")))
                }
            },
            Opcode::VariantGet(i) => match self.bits_of(node.children[0])? {
                // Inactive slots hold the arm default, which is exactly the
                // wrong-arm read semantics.
                Bits::Variant { slots, .. } => slots[*i as usize].clone(),
                other => {
                    return Err(BlastError(format!("payload of non-variant {other:?}")))
                }
            },
        };
        self.memo.insert(t, bits.clone());
        Ok(bits)
    }
}
