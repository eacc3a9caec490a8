//! Hash-consed term DAG with sorts, constructor-time simplification, and an
//! interval abstract domain.
//!
//! All symbolic values in the engine are [`TermId`]s into one [`TermTable`].
//! Construction goes through [`TermTable::mk`], which sort-checks the node,
//! applies a fixed simplification rule set, computes an unsigned interval for
//! scalar nodes, and interns the result so structurally identical terms share
//! one id. Terms are immutable once interned.

use std::collections::HashMap;
use std::fmt::{self, Write as _};

use thiserror::Error;

/// Maximum bitvector width supported by the term language.
pub const MAX_WIDTH: u32 = 128;

/// Identifier of an interned term. Dense, starting at 0.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct TermId(pub u32);

impl fmt::Display for TermId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%{}", self.0)
    }
}

/// Identifier of a symbol registered in the table. Symbols are always
/// scalar (Bool or BitVec); aggregate symbolic values are built as
/// aggregates of scalar symbols by [`TermTable::fresh_symbol`].
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct SymbolId(pub u32);

/// Sorts of the term language. Bitvectors carry their width; there are no
/// unbounded integers. Signedness is a property of operations, not sorts.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum Sort {
    Bool,
    /// Width in bits, 1..=128.
    BitVec(u32),
    Unit,
    /// Fixed element sort and compile-time length.
    Array(Box<Sort>, usize),
    Tuple(Vec<Sort>),
    /// Named record; the field list is carried inline so sort checking is
    /// self-contained. Name resolution happens in the frontend.
    Record {
        name: String,
        fields: Vec<(String, Sort)>,
    },
    /// Named sum type; each arm has a payload sort.
    Variant {
        name: String,
        arms: Vec<(String, Sort)>,
    },
    /// Reference to a mutable allocation holding the pointee sort.
    /// References live in locals and parameters only; they never appear
    /// inside heap allocations, aggregates, or solver queries.
    Ref(Box<Sort>),
}

impl Sort {
    pub fn is_scalar(&self) -> bool {
        matches!(self, Sort::Bool | Sort::BitVec(_) | Sort::Unit)
    }

    /// Does the sort contain a reference anywhere?
    pub fn has_ref(&self) -> bool {
        match self {
            Sort::Bool | Sort::BitVec(_) | Sort::Unit => false,
            Sort::Array(e, _) => e.has_ref(),
            Sort::Tuple(fs) => fs.iter().any(Sort::has_ref),
            Sort::Record { fields, .. } => fields.iter().any(|(_, s)| s.has_ref()),
            Sort::Variant { arms, .. } => arms.iter().any(|(_, s)| s.has_ref()),
            Sort::Ref(_) => true,
        }
    }
}

impl fmt::Display for Sort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sort::Bool => write!(f, "bool"),
            Sort::BitVec(w) => write!(f, "bv{w}"),
            Sort::Unit => write!(f, "unit"),
            Sort::Array(e, n) => write!(f, "[{e}; {n}]"),
            Sort::Tuple(fs) => {
                write!(f, "(")?;
                for (i, s) in fs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{s}")?;
                }
                write!(f, ")")
            }
            Sort::Record { name, .. } | Sort::Variant { name, .. } => write!(f, "{name}"),
            Sort::Ref(p) => write!(f, "ref<{p}>"),
        }
    }
}

/// Scalar constant payload of [`Opcode::Const`].
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum ConstVal {
    Bool(bool),
    Bv { width: u32, value: u128 },
}

/// Term node opcodes. Widths/indices that cannot be recovered from child
/// sorts are carried in the opcode payload.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum Opcode {
    Const(ConstVal),
    Symbol(SymbolId),
    // Boolean connectives.
    Not,
    And,
    Or,
    Xor,
    Implies,
    Ite,
    /// Structural equality at any non-reference sort.
    Eq,
    // Bitvector arithmetic (modular) and logic.
    BvAdd,
    BvSub,
    BvMul,
    BvUDiv,
    BvURem,
    BvAnd,
    BvOr,
    BvXor,
    BvNot,
    BvNeg,
    BvShl,
    BvLShr,
    BvULt,
    BvULe,
    BvUGt,
    BvUGe,
    BvSLt,
    BvSLe,
    /// Zero-extend to the given target width.
    BvZeroExtend(u32),
    /// Truncate to the given target width (keeps low bits).
    BvTruncate(u32),
    /// Concat(hi, lo): result value is `hi << width(lo) | lo`.
    BvConcat,
    // Aggregates.
    MkTuple,
    TupleGet(u32),
    /// Payload is the full record sort being constructed.
    MkRecord(Sort),
    RecordGet(u32),
    /// Payload is the element sort (needed for zero-length arrays).
    MkArray(Sort),
    ArrayGet,
    ArraySet,
    /// Payload: the full variant sort plus which arm is constructed.
    MkVariant { sort: Sort, arm: u32 },
    /// Tag of a variant value as a bv8 constant-indexable tag.
    VariantTag,
    VariantGet(u32),
    UnitConst,
}

/// Width of the bv tag produced by [`Opcode::VariantTag`]. Variant
/// declarations are limited to 256 arms.
pub const TAG_WIDTH: u32 = 8;

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Opcode::Const(ConstVal::Bool(b)) => write!(f, "const {b}"),
            Opcode::Const(ConstVal::Bv { value, .. }) => write!(f, "const {value}"),
            Opcode::Symbol(_) => write!(f, "symbol"),
            Opcode::Not => write!(f, "not"),
            Opcode::And => write!(f, "and"),
            Opcode::Or => write!(f, "or"),
            Opcode::Xor => write!(f, "xor"),
            Opcode::Implies => write!(f, "implies"),
            Opcode::Ite => write!(f, "ite"),
            Opcode::Eq => write!(f, "eq"),
            Opcode::BvAdd => write!(f, "bvadd"),
            Opcode::BvSub => write!(f, "bvsub"),
            Opcode::BvMul => write!(f, "bvmul"),
            Opcode::BvUDiv => write!(f, "bvudiv"),
            Opcode::BvURem => write!(f, "bvurem"),
            Opcode::BvAnd => write!(f, "bvand"),
            Opcode::BvOr => write!(f, "bvor"),
            Opcode::BvXor => write!(f, "bvxor"),
            Opcode::BvNot => write!(f, "bvnot"),
            Opcode::BvNeg => write!(f, "bvneg"),
            Opcode::BvShl => write!(f, "bvshl"),
            Opcode::BvLShr => write!(f, "bvlshr"),
            Opcode::BvULt => write!(f, "bvult"),
            Opcode::BvULe => write!(f, "bvule"),
            Opcode::BvUGt => write!(f, "bvugt"),
            Opcode::BvUGe => write!(f, "bvuge"),
            Opcode::BvSLt => write!(f, "bvslt"),
            Opcode::BvSLe => write!(f, "bvsle"),
            Opcode::BvZeroExtend(w) => write!(f, "zext {w}"),
            Opcode::BvTruncate(w) => write!(f, "trunc {w}"),
            Opcode::BvConcat => write!(f, "bvconcat"),
            Opcode::MkTuple => write!(f, "mktuple"),
            Opcode::TupleGet(i) => write!(f, "tupleget {i}"),
            Opcode::MkRecord(_) => write!(f, "mkrecord"),
            Opcode::RecordGet(i) => write!(f, "recordget {i}"),
            Opcode::MkArray(_) => write!(f, "mkarray"),
            Opcode::ArrayGet => write!(f, "arrayget"),
            Opcode::ArraySet => write!(f, "arrayset"),
            Opcode::MkVariant { arm, .. } => write!(f, "mkvariant {arm}"),
            Opcode::VariantTag => write!(f, "varianttag"),
            Opcode::VariantGet(i) => write!(f, "variantget {i}"),
            Opcode::UnitConst => write!(f, "unitconst"),
        }
    }
}

/// Unsigned interval `[lo, hi]` over a term's bit pattern. Bool terms use
/// width 1 with false = 0 and true = 1.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Interval {
    pub lo: u128,
    pub hi: u128,
}

impl Interval {
    pub fn point(v: u128) -> Interval {
        Interval { lo: v, hi: v }
    }

    pub fn full(width: u32) -> Interval {
        Interval {
            lo: 0,
            hi: mask(width),
        }
    }

    pub fn hull(a: Interval, b: Interval) -> Interval {
        Interval {
            lo: a.lo.min(b.lo),
            hi: a.hi.max(b.hi),
        }
    }

    pub fn contains(&self, v: u128) -> bool {
        self.lo <= v && v <= self.hi
    }

    fn is_point(&self) -> bool {
        self.lo == self.hi
    }
}

/// All-ones mask for a bitvector width (width 0 is never used).
pub fn mask(width: u32) -> u128 {
    if width >= 128 {
        u128::MAX
    } else {
        (1u128 << width) - 1
    }
}

/// A concrete value of the term language, used by the evaluator, the
/// solver's models, and the concrete interpreter.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum ConcreteValue {
    Bool(bool),
    Bv { width: u32, value: u128 },
    Unit,
    Array(Vec<ConcreteValue>),
    Tuple(Vec<ConcreteValue>),
    Record(Vec<ConcreteValue>),
    Variant { arm: u32, payload: Box<ConcreteValue> },
}

impl ConcreteValue {
    pub fn bv(width: u32, value: u128) -> ConcreteValue {
        ConcreteValue::Bv {
            width,
            value: value & mask(width),
        }
    }

    /// The all-zero value of a sort (false, 0, empty aggregates of zeros,
    /// first arm for variants). Total for every non-reference sort.
    pub fn default_of(sort: &Sort) -> ConcreteValue {
        match sort {
            Sort::Bool => ConcreteValue::Bool(false),
            Sort::BitVec(w) => ConcreteValue::Bv { width: *w, value: 0 },
            Sort::Unit => ConcreteValue::Unit,
            Sort::Array(e, n) => {
                ConcreteValue::Array(vec![ConcreteValue::default_of(e); *n])
            }
            Sort::Tuple(fs) => {
                ConcreteValue::Tuple(fs.iter().map(ConcreteValue::default_of).collect())
            }
            Sort::Record { fields, .. } => ConcreteValue::Record(
                fields.iter().map(|(_, s)| ConcreteValue::default_of(s)).collect(),
            ),
            Sort::Variant { arms, .. } => ConcreteValue::Variant {
                arm: 0,
                payload: Box::new(ConcreteValue::default_of(&arms[0].1)),
            },
            Sort::Ref(_) => panic!("references have no default value"),
        }
    }

    /// The bit pattern of a scalar value (Bool as 0/1).
    pub fn scalar_bits(&self) -> Option<u128> {
        match self {
            ConcreteValue::Bool(b) => Some(*b as u128),
            ConcreteValue::Bv { value, .. } => Some(*value),
            _ => None,
        }
    }
}

impl fmt::Display for ConcreteValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConcreteValue::Bool(b) => write!(f, "{b}"),
            ConcreteValue::Bv { value, .. } => write!(f, "{value}"),
            ConcreteValue::Unit => write!(f, "()"),
            ConcreteValue::Array(vs) | ConcreteValue::Tuple(vs) | ConcreteValue::Record(vs) => {
                write!(f, "[")?;
                for (i, v) in vs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, "]")
            }
            ConcreteValue::Variant { arm, payload } => write!(f, "#{arm}({payload})"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SymbolInfo {
    pub name: String,
    pub ordinal: u32,
    pub sort: Sort,
}

/// One interned node of the DAG.
#[derive(Clone, Debug)]
pub struct Node {
    pub op: Opcode,
    pub children: Vec<TermId>,
    pub sort: Sort,
    /// Present exactly for Bool and BitVec sorts.
    pub interval: Option<Interval>,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum TermError {
    #[error("sort mismatch in {op}: {detail}")]
    SortMismatch { op: String, detail: String },
    #[error("bitvector width {0} out of range 1..={MAX_WIDTH}")]
    BadWidth(u32),
    #[error("cannot introduce a symbolic value of sort {0}: it contains a reference")]
    SymbolicReference(String),
    #[error("aggregates must not contain reference sorts (found {0})")]
    RefInAggregate(String),
}

fn sort_err(op: &Opcode, detail: impl Into<String>) -> TermError {
    TermError::SortMismatch {
        op: op.to_string(),
        detail: detail.into(),
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("no binding for symbol {name}!{ordinal}")]
    MissingSymbol { name: String, ordinal: u32 },
}

/// Concrete environment binding symbols for [`TermTable::eval`].
#[derive(Clone, Debug, Default)]
pub struct Env {
    map: HashMap<SymbolId, ConcreteValue>,
}

impl Env {
    pub fn new() -> Env {
        Env::default()
    }

    pub fn bind(&mut self, sym: SymbolId, v: ConcreteValue) {
        self.map.insert(sym, v);
    }

    pub fn get(&self, sym: SymbolId) -> Option<&ConcreteValue> {
        self.map.get(&sym)
    }
}

/// The hash-consing table. Interns nodes, owns the symbol registry, and
/// exposes evaluation and the interval query.
#[derive(Clone, Debug)]
pub struct TermTable {
    nodes: Vec<Node>,
    index: HashMap<(Opcode, Vec<TermId>), TermId>,
    symbols: Vec<SymbolInfo>,
}

impl Default for TermTable {
    fn default() -> Self {
        TermTable::new()
    }
}

impl TermTable {
    pub fn new() -> TermTable {
        TermTable {
            nodes: Vec::new(),
            index: HashMap::new(),
            symbols: Vec::new(),
        }
    }

    pub fn num_terms(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, t: TermId) -> &Node {
        &self.nodes[t.0 as usize]
    }

    pub fn sort_of(&self, t: TermId) -> &Sort {
        &self.nodes[t.0 as usize].sort
    }

    /// The interval of a Bool or BitVec term; `None` for other sorts.
    pub fn interval_of(&self, t: TermId) -> Option<Interval> {
        self.nodes[t.0 as usize].interval
    }

    pub fn symbols(&self) -> &[SymbolInfo] {
        &self.symbols
    }

    pub fn symbol_info(&self, s: SymbolId) -> &SymbolInfo {
        &self.symbols[s.0 as usize]
    }

    pub fn find_symbol(&self, name: &str, ordinal: u32) -> Option<SymbolId> {
        self.symbols
            .iter()
            .position(|s| s.ordinal == ordinal && s.name == name)
            .map(|i| SymbolId(i as u32))
    }

    // ---- Convenience constructors -------------------------------------

    pub fn const_bool(&mut self, b: bool) -> TermId {
        self.mk(Opcode::Const(ConstVal::Bool(b)), &[])
            .expect("const bool is well-sorted")
    }

    pub fn const_bv(&mut self, width: u32, value: u128) -> Result<TermId, TermError> {
        self.mk(
            Opcode::Const(ConstVal::Bv {
                width,
                value: value & mask(width),
            }),
            &[],
        )
    }

    pub fn unit(&mut self) -> TermId {
        self.mk(Opcode::UnitConst, &[]).expect("unit is well-sorted")
    }

    /// Is the term a Bool constant, and which one?
    pub fn as_const_bool(&self, t: TermId) -> Option<bool> {
        match self.node(t).op {
            Opcode::Const(ConstVal::Bool(b)) => Some(b),
            _ => None,
        }
    }

    pub fn as_const_bv(&self, t: TermId) -> Option<u128> {
        match self.node(t).op {
            Opcode::Const(ConstVal::Bv { value, .. }) => Some(value),
            _ => None,
        }
    }

    // ---- Symbol introduction ------------------------------------------

    /// Introduce a fresh symbolic value of the given sort. Scalar sorts get
    /// a single new symbol with a table-unique ordinal; aggregate sorts
    /// expand to aggregates of fresh scalar symbols with derived names
    /// (`a[0]`, `a.field`, `a.0`, `a.tag`). Reference sorts are rejected.
    pub fn fresh_symbol(&mut self, name: &str, sort: &Sort) -> Result<TermId, TermError> {
        if sort.has_ref() {
            return Err(TermError::SymbolicReference(sort.to_string()));
        }
        self.fresh_inner(name, sort)
    }

    fn fresh_inner(&mut self, name: &str, sort: &Sort) -> Result<TermId, TermError> {
        match sort {
            Sort::Bool | Sort::BitVec(_) => {
                let id = SymbolId(self.symbols.len() as u32);
                let ordinal = self.symbols.len() as u32;
                self.symbols.push(SymbolInfo {
                    name: name.to_string(),
                    ordinal,
                    sort: sort.clone(),
                });
                self.mk(Opcode::Symbol(id), &[])
            }
            Sort::Unit => Ok(self.unit()),
            Sort::Array(e, n) => {
                let mut elems = Vec::with_capacity(*n);
                for i in 0..*n {
                    elems.push(self.fresh_inner(&format!("{name}[{i}]"), e)?);
                }
                self.mk(Opcode::MkArray((**e).clone()), &elems)
            }
            Sort::Tuple(fs) => {
                let mut elems = Vec::with_capacity(fs.len());
                for (i, s) in fs.iter().enumerate() {
                    elems.push(self.fresh_inner(&format!("{name}.{i}"), s)?);
                }
                self.mk(Opcode::MkTuple, &elems)
            }
            Sort::Record { fields, .. } => {
                let fields = fields.clone();
                let mut elems = Vec::with_capacity(fields.len());
                for (fname, s) in &fields {
                    elems.push(self.fresh_inner(&format!("{name}.{fname}"), s)?);
                }
                self.mk(Opcode::MkRecord(sort.clone()), &elems)
            }
            Sort::Variant { arms, .. } => {
                // A fresh variant is a fresh tag selecting among fresh
                // payloads; tags beyond the last arm fall through to it.
                let arms = arms.clone();
                let tag = if arms.len() > 1 {
                    Some(self.fresh_inner(&format!("{name}.tag"), &Sort::BitVec(TAG_WIDTH))?)
                } else {
                    None
                };
                let mut cases = Vec::with_capacity(arms.len());
                for (i, (aname, psort)) in arms.iter().enumerate() {
                    let payload = self.fresh_inner(&format!("{name}.{aname}"), psort)?;
                    let v = self.mk(
                        Opcode::MkVariant {
                            sort: sort.clone(),
                            arm: i as u32,
                        },
                        &[payload],
                    )?;
                    cases.push(v);
                }
                let mut acc = *cases.last().expect("variant has at least one arm");
                for i in (0..cases.len() - 1).rev() {
                    let tag = tag.expect("multi-arm variant has a tag");
                    let k = self.const_bv(TAG_WIDTH, i as u128)?;
                    let is_i = self.mk(Opcode::Eq, &[tag, k])?;
                    acc = self.mk(Opcode::Ite, &[is_i, cases[i], acc])?;
                }
                Ok(acc)
            }
            Sort::Ref(_) => Err(TermError::SymbolicReference(sort.to_string())),
        }
    }

    // ---- Construction ---------------------------------------------------

    /// Intern a node: sort-check, simplify with the fixed rule set, compute
    /// the interval, and return the (possibly pre-existing) id. Calling `mk`
    /// twice with equal arguments returns the same id.
    pub fn mk(&mut self, op: Opcode, children: &[TermId]) -> Result<TermId, TermError> {
        let sort = self.result_sort(&op, children)?;
        if let Some(done) = self.simplify(&op, children, &sort)? {
            return Ok(done);
        }
        self.intern(op, children.to_vec(), sort, true)
    }

    /// Intern without applying the simplification rule set. Sort checking
    /// and interval computation still happen, but Bool nodes with a
    /// constant interval are kept as-is. Exists so tests can build rule
    /// left-hand sides verbatim; the engine itself always uses [`mk`].
    #[doc(hidden)]
    pub fn mk_raw(&mut self, op: Opcode, children: &[TermId]) -> Result<TermId, TermError> {
        let sort = self.result_sort(&op, children)?;
        self.intern(op, children.to_vec(), sort, false)
    }

    fn intern(
        &mut self,
        op: Opcode,
        children: Vec<TermId>,
        sort: Sort,
        fold_bool_interval: bool,
    ) -> Result<TermId, TermError> {
        let key = (op.clone(), children.clone());
        if let Some(&id) = self.index.get(&key) {
            return Ok(id);
        }
        let interval = self.transfer(&op, &children, &sort);
        if fold_bool_interval && sort == Sort::Bool {
            // If the interval layer proves a Bool term constant, replace it
            // by that constant.
            if let Some(iv) = interval {
                if iv.is_point() && !matches!(op, Opcode::Const(_)) {
                    return Ok(self.const_bool(iv.lo == 1));
                }
            }
        }
        let id = TermId(self.nodes.len() as u32);
        self.nodes.push(Node {
            op,
            children,
            sort,
            interval,
        });
        self.index.insert(key, id);
        Ok(id)
    }

    // ---- Sort checking --------------------------------------------------

    fn width_of(&self, t: TermId) -> Option<u32> {
        match self.sort_of(t) {
            Sort::BitVec(w) => Some(*w),
            _ => None,
        }
    }

    fn result_sort(&self, op: &Opcode, ch: &[TermId]) -> Result<Sort, TermError> {
        let arity = |n: usize| -> Result<(), TermError> {
            if ch.len() != n {
                Err(sort_err(op, format!("expected {n} children, got {}", ch.len())))
            } else {
                Ok(())
            }
        };
        let bool_child = |i: usize| -> Result<(), TermError> {
            if *self.sort_of(ch[i]) != Sort::Bool {
                Err(sort_err(op, format!("child {i} must be bool, got {}", self.sort_of(ch[i]))))
            } else {
                Ok(())
            }
        };
        let bv_child = |i: usize| -> Result<u32, TermError> {
            self.width_of(ch[i]).ok_or_else(|| {
                sort_err(op, format!("child {i} must be a bitvector, got {}", self.sort_of(ch[i])))
            })
        };
        let same_width = || -> Result<u32, TermError> {
            arity(2)?;
            let a = bv_child(0)?;
            let b = bv_child(1)?;
            if a != b {
                return Err(sort_err(op, format!("operand widths differ: bv{a} vs bv{b}")));
            }
            Ok(a)
        };

        match op {
            Opcode::Const(ConstVal::Bool(_)) => {
                arity(0)?;
                Ok(Sort::Bool)
            }
            Opcode::Const(ConstVal::Bv { width, value }) => {
                arity(0)?;
                if *width == 0 || *width > MAX_WIDTH {
                    return Err(TermError::BadWidth(*width));
                }
                if *value != value & mask(*width) {
                    return Err(sort_err(op, "constant value exceeds its width"));
                }
                Ok(Sort::BitVec(*width))
            }
            Opcode::Symbol(s) => {
                arity(0)?;
                Ok(self.symbols[s.0 as usize].sort.clone())
            }
            Opcode::UnitConst => {
                arity(0)?;
                Ok(Sort::Unit)
            }
            Opcode::Not => {
                arity(1)?;
                bool_child(0)?;
                Ok(Sort::Bool)
            }
            Opcode::And | Opcode::Or | Opcode::Xor | Opcode::Implies => {
                arity(2)?;
                bool_child(0)?;
                bool_child(1)?;
                Ok(Sort::Bool)
            }
            Opcode::Ite => {
                arity(3)?;
                bool_child(0)?;
                let t = self.sort_of(ch[1]);
                let e = self.sort_of(ch[2]);
                if t != e {
                    return Err(sort_err(op, format!("branch sorts differ: {t} vs {e}")));
                }
                if t.has_ref() {
                    return Err(sort_err(op, "ite over reference sorts (references merge via mux_refs)"));
                }
                Ok(t.clone())
            }
            Opcode::Eq => {
                arity(2)?;
                let a = self.sort_of(ch[0]);
                let b = self.sort_of(ch[1]);
                if a != b {
                    return Err(sort_err(op, format!("operand sorts differ: {a} vs {b}")));
                }
                if a.has_ref() {
                    return Err(sort_err(op, "references cannot be compared"));
                }
                Ok(Sort::Bool)
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
                let w = same_width()?;
                Ok(Sort::BitVec(w))
            }
            Opcode::BvULt
            | Opcode::BvULe
            | Opcode::BvUGt
            | Opcode::BvUGe
            | Opcode::BvSLt
            | Opcode::BvSLe => {
                same_width()?;
                Ok(Sort::Bool)
            }
            Opcode::BvNot | Opcode::BvNeg => {
                arity(1)?;
                let w = bv_child(0)?;
                Ok(Sort::BitVec(w))
            }
            Opcode::BvZeroExtend(target) => {
                arity(1)?;
                let w = bv_child(0)?;
                if *target < w || *target > MAX_WIDTH {
                    return Err(sort_err(op, format!("cannot zero-extend bv{w} to bv{target}")));
                }
                Ok(Sort::BitVec(*target))
            }
            Opcode::BvTruncate(target) => {
                arity(1)?;
                let w = bv_child(0)?;
                if *target == 0 || *target > w {
                    return Err(sort_err(op, format!("cannot truncate bv{w} to bv{target}")));
                }
                Ok(Sort::BitVec(*target))
            }
            Opcode::BvConcat => {
                arity(2)?;
                let a = bv_child(0)?;
                let b = bv_child(1)?;
                if a + b > MAX_WIDTH {
                    return Err(sort_err(op, format!("concat width {} exceeds {MAX_WIDTH}", a + b)));
                }
                Ok(Sort::BitVec(a + b))
            }
            Opcode::MkTuple => {
                let fs: Vec<Sort> = ch.iter().map(|&c| self.sort_of(c).clone()).collect();
                if let Some(bad) = fs.iter().find(|s| s.has_ref()) {
                    return Err(TermError::RefInAggregate(bad.to_string()));
                }
                Ok(Sort::Tuple(fs))
            }
            Opcode::TupleGet(i) => {
                arity(1)?;
                match self.sort_of(ch[0]) {
                    Sort::Tuple(fs) if (*i as usize) < fs.len() => Ok(fs[*i as usize].clone()),
                    s => Err(sort_err(op, format!("no field {i} in {s}"))),
                }
            }
            Opcode::MkRecord(rsort) => {
                let Sort::Record { fields, .. } = rsort else {
                    return Err(sort_err(op, "payload sort is not a record"));
                };
                if rsort.has_ref() {
                    return Err(TermError::RefInAggregate(rsort.to_string()));
                }
                arity(fields.len())?;
                for (i, (fname, fsort)) in fields.iter().enumerate() {
                    if self.sort_of(ch[i]) != fsort {
                        return Err(sort_err(
                            op,
                            format!("field {fname} expects {fsort}, got {}", self.sort_of(ch[i])),
                        ));
                    }
                }
                Ok(rsort.clone())
            }
            Opcode::RecordGet(i) => {
                arity(1)?;
                match self.sort_of(ch[0]) {
                    Sort::Record { fields, .. } if (*i as usize) < fields.len() => {
                        Ok(fields[*i as usize].1.clone())
                    }
                    s => Err(sort_err(op, format!("no field {i} in {s}"))),
                }
            }
            Opcode::MkArray(elem) => {
                if elem.has_ref() {
                    return Err(TermError::RefInAggregate(elem.to_string()));
                }
                for (i, &c) in ch.iter().enumerate() {
                    if self.sort_of(c) != elem {
                        return Err(sort_err(
                            op,
                            format!("element {i} expects {elem}, got {}", self.sort_of(c)),
                        ));
                    }
                }
                Ok(Sort::Array(Box::new(elem.clone()), ch.len()))
            }
            Opcode::ArrayGet => {
                arity(2)?;
                bv_child(1)?;
                match self.sort_of(ch[0]) {
                    Sort::Array(e, n) => {
                        if *n == 0 {
                            return Err(sort_err(op, "cannot read a zero-length array"));
                        }
                        Ok((**e).clone())
                    }
                    s => Err(sort_err(op, format!("child 0 must be an array, got {s}"))),
                }
            }
            Opcode::ArraySet => {
                arity(3)?;
                bv_child(1)?;
                match self.sort_of(ch[0]).clone() {
                    Sort::Array(e, n) => {
                        if self.sort_of(ch[2]) != &*e {
                            return Err(sort_err(
                                op,
                                format!("value expects {e}, got {}", self.sort_of(ch[2])),
                            ));
                        }
                        Ok(Sort::Array(e, n))
                    }
                    s => Err(sort_err(op, format!("child 0 must be an array, got {s}"))),
                }
            }
            Opcode::MkVariant { sort, arm } => {
                let Sort::Variant { arms, .. } = sort else {
                    return Err(sort_err(op, "payload sort is not a variant"));
                };
                if sort.has_ref() {
                    return Err(TermError::RefInAggregate(sort.to_string()));
                }
                if arms.len() > (1 << TAG_WIDTH) {
                    return Err(sort_err(op, "variant has more than 256 arms"));
                }
                arity(1)?;
                let Some((aname, psort)) = arms.get(*arm as usize) else {
                    return Err(sort_err(op, format!("no arm {arm}")));
                };
                if self.sort_of(ch[0]) != psort {
                    return Err(sort_err(
                        op,
                        format!("arm {aname} expects {psort}, got {}", self.sort_of(ch[0])),
                    ));
                }
                Ok(sort.clone())
            }
            Opcode::VariantTag => {
                arity(1)?;
                match self.sort_of(ch[0]) {
                    Sort::Variant { .. } => Ok(Sort::BitVec(TAG_WIDTH)),
                    s => Err(sort_err(op, format!("child must be a variant, got {s}"))),
                }
            }
            Opcode::VariantGet(arm) => {
                arity(1)?;
                match self.sort_of(ch[0]) {
                    Sort::Variant { arms, .. } if (*arm as usize) < arms.len() => {
                        Ok(arms[*arm as usize].1.clone())
                    }
                    s => Err(sort_err(op, format!("no arm {arm} in {s}"))),
                }
            }
        }
    }

    // ---- Simplification ---------------------------------------------------

    fn is_const_leaf(&self, t: TermId) -> bool {
        matches!(self.node(t).op, Opcode::Const(_) | Opcode::UnitConst)
    }

    /// The fixed rule set, applied once per construction. Every rule right-
    /// hand side is an existing term or a constant, and children arrive
    /// already simplified, so one pass reaches the local fixed point.
    /// Returns `Some(id)` when a rule fired.
    fn simplify(
        &mut self,
        op: &Opcode,
        ch: &[TermId],
        sort: &Sort,
    ) -> Result<Option<TermId>, TermError> {
        // Constant folding for all opcodes with scalar results.
        if sort.is_scalar()
            && !ch.is_empty()
            && ch.iter().all(|&c| self.is_const_leaf(c))
            && !matches!(op, Opcode::Const(_) | Opcode::Symbol(_) | Opcode::UnitConst)
        {
            let vals: Vec<ConcreteValue> = ch.iter().map(|&c| self.const_value(c)).collect();
            let v = concrete_op(op, &vals);
            return Ok(Some(self.intern_const(&v)?));
        }

        let folded = match op {
            Opcode::And => match (self.as_const_bool(ch[0]), self.as_const_bool(ch[1])) {
                (Some(true), _) => Some(ch[1]),
                (_, Some(true)) => Some(ch[0]),
                (Some(false), _) | (_, Some(false)) => Some(self.const_bool(false)),
                _ => None,
            },
            Opcode::Or => match (self.as_const_bool(ch[0]), self.as_const_bool(ch[1])) {
                (Some(false), _) => Some(ch[1]),
                (_, Some(false)) => Some(ch[0]),
                (Some(true), _) | (_, Some(true)) => Some(self.const_bool(true)),
                _ => None,
            },
            Opcode::Not => match &self.node(ch[0]).op {
                Opcode::Not => Some(self.node(ch[0]).children[0]),
                _ => None,
            },
            Opcode::Eq if ch[0] == ch[1] => Some(self.const_bool(true)),
            Opcode::Ite => {
                if let Some(c) = self.as_const_bool(ch[0]) {
                    Some(if c { ch[1] } else { ch[2] })
                } else if ch[1] == ch[2] {
                    Some(ch[1])
                } else if self.as_const_bool(ch[1]) == Some(true)
                    && self.as_const_bool(ch[2]) == Some(false)
                {
                    Some(ch[0])
                } else {
                    None
                }
            }
            Opcode::BvAdd => match (self.as_const_bv(ch[0]), self.as_const_bv(ch[1])) {
                (Some(0), _) => Some(ch[1]),
                (_, Some(0)) => Some(ch[0]),
                _ => None,
            },
            Opcode::BvXor if ch[0] == ch[1] => {
                let w = self.width_of(ch[0]).expect("sort-checked");
                Some(self.const_bv(w, 0)?)
            }
            Opcode::BvAnd => match (self.as_const_bv(ch[0]), self.as_const_bv(ch[1])) {
                (Some(0), _) | (_, Some(0)) => {
                    let w = self.width_of(ch[0]).expect("sort-checked");
                    Some(self.const_bv(w, 0)?)
                }
                _ => None,
            },
            Opcode::BvMul => match (self.as_const_bv(ch[0]), self.as_const_bv(ch[1])) {
                (Some(1), _) => Some(ch[1]),
                (_, Some(1)) => Some(ch[0]),
                _ => None,
            },
            Opcode::TupleGet(i) => match &self.node(ch[0]).op {
                Opcode::MkTuple => Some(self.node(ch[0]).children[*i as usize]),
                _ => None,
            },
            Opcode::RecordGet(i) => match &self.node(ch[0]).op {
                Opcode::MkRecord(_) => Some(self.node(ch[0]).children[*i as usize]),
                _ => None,
            },
            Opcode::VariantGet(want) => match &self.node(ch[0]).op {
                Opcode::MkVariant { arm, .. } if arm == want => {
                    Some(self.node(ch[0]).children[0])
                }
                _ => None,
            },
            Opcode::VariantTag => match &self.node(ch[0]).op {
                Opcode::MkVariant { arm, .. } => {
                    let arm = *arm;
                    Some(self.const_bv(TAG_WIDTH, arm as u128)?)
                }
                _ => None,
            },
            Opcode::ArrayGet => {
                let idx = self.as_const_bv(ch[1]);
                match (&self.node(ch[0]).op, idx) {
                    (Opcode::MkArray(_), Some(i)) => {
                        let elems = &self.node(ch[0]).children;
                        if (i as usize) < elems.len() {
                            Some(elems[i as usize])
                        } else {
                            None
                        }
                    }
                    _ => None,
                }
            }
            _ => None,
        };
        Ok(folded)
    }

    fn const_value(&self, t: TermId) -> ConcreteValue {
        match &self.node(t).op {
            Opcode::Const(ConstVal::Bool(b)) => ConcreteValue::Bool(*b),
            Opcode::Const(ConstVal::Bv { width, value }) => ConcreteValue::Bv {
                width: *width,
                value: *value,
            },
            Opcode::UnitConst => ConcreteValue::Unit,
            _ => panic!("const_value on non-constant"),
        }
    }

    fn intern_const(&mut self, v: &ConcreteValue) -> Result<TermId, TermError> {
        match v {
            ConcreteValue::Bool(b) => Ok(self.const_bool(*b)),
            ConcreteValue::Bv { width, value } => self.const_bv(*width, *value),
            ConcreteValue::Unit => Ok(self.unit()),
            _ => panic!("intern_const on aggregate"),
        }
    }

    // ---- Interval transfer ------------------------------------------------

    fn iv(&self, t: TermId) -> Interval {
        self.interval_of(t).expect("scalar child has an interval")
    }

    fn transfer(&self, op: &Opcode, ch: &[TermId], sort: &Sort) -> Option<Interval> {
        let width = match sort {
            Sort::Bool => 1,
            Sort::BitVec(w) => *w,
            _ => return None,
        };
        let full = Interval::full(width);
        let iv = match op {
            Opcode::Const(ConstVal::Bool(b)) => Interval::point(*b as u128),
            Opcode::Const(ConstVal::Bv { value, .. }) => Interval::point(*value),
            Opcode::Symbol(_) => full,
            Opcode::Not => {
                let a = self.iv(ch[0]);
                Interval { lo: 1 - a.hi, hi: 1 - a.lo }
            }
            // And/Or are monotone over {0,1}.
            Opcode::And => {
                let (a, b) = (self.iv(ch[0]), self.iv(ch[1]));
                Interval { lo: a.lo & b.lo, hi: a.hi & b.hi }
            }
            Opcode::Or => {
                let (a, b) = (self.iv(ch[0]), self.iv(ch[1]));
                Interval { lo: a.lo | b.lo, hi: a.hi | b.hi }
            }
            Opcode::Xor => {
                let (a, b) = (self.iv(ch[0]), self.iv(ch[1]));
                if a.is_point() && b.is_point() {
                    Interval::point(a.lo ^ b.lo)
                } else {
                    full
                }
            }
            Opcode::Implies => {
                let (a, b) = (self.iv(ch[0]), self.iv(ch[1]));
                // Antitone in the premise, monotone in the conclusion.
                Interval {
                    lo: (1 - a.hi) | b.lo,
                    hi: (1 - a.lo) | b.hi,
                }
            }
            Opcode::Ite => {
                let c = self.iv(ch[0]);
                let (t, e) = (self.iv(ch[1]), self.iv(ch[2]));
                if c == Interval::point(1) {
                    t
                } else if c == Interval::point(0) {
                    e
                } else {
                    Interval::hull(t, e)
                }
            }
            Opcode::Eq => {
                // Only bitvector/bool operands carry intervals to refine on.
                match (self.interval_of(ch[0]), self.interval_of(ch[1])) {
                    (Some(a), Some(b)) => {
                        if a.hi < b.lo || b.hi < a.lo {
                            Interval::point(0)
                        } else if a.is_point() && b.is_point() && a.lo == b.lo {
                            Interval::point(1)
                        } else {
                            full
                        }
                    }
                    _ => full,
                }
            }
            Opcode::BvAdd => {
                let (a, b) = (self.iv(ch[0]), self.iv(ch[1]));
                match (a.lo.checked_add(b.lo), a.hi.checked_add(b.hi)) {
                    (Some(lo), Some(hi)) if hi <= mask(width) => Interval { lo, hi },
                    _ => full,
                }
            }
            Opcode::BvSub => {
                let (a, b) = (self.iv(ch[0]), self.iv(ch[1]));
                if a.lo >= b.hi {
                    Interval { lo: a.lo - b.hi, hi: a.hi - b.lo }
                } else {
                    full
                }
            }
            Opcode::BvMul => {
                let (a, b) = (self.iv(ch[0]), self.iv(ch[1]));
                match (a.lo.checked_mul(b.lo), a.hi.checked_mul(b.hi)) {
                    (Some(lo), Some(hi)) if hi <= mask(width) => Interval { lo, hi },
                    _ => full,
                }
            }
            Opcode::BvUDiv => {
                let (a, b) = (self.iv(ch[0]), self.iv(ch[1]));
                if b.lo > 0 {
                    Interval { lo: a.lo / b.hi, hi: a.hi / b.lo }
                } else {
                    // Division by zero yields all-ones, so the range is full.
                    full
                }
            }
            Opcode::BvURem => {
                let (a, b) = (self.iv(ch[0]), self.iv(ch[1]));
                if b.hi == 0 {
                    Interval::point(0)
                } else {
                    Interval { lo: 0, hi: a.hi.min(b.hi - 1) }
                }
            }
            Opcode::BvAnd => {
                let (a, b) = (self.iv(ch[0]), self.iv(ch[1]));
                Interval { lo: 0, hi: a.hi.min(b.hi) }
            }
            Opcode::BvOr => {
                let (a, b) = (self.iv(ch[0]), self.iv(ch[1]));
                Interval { lo: a.lo.max(b.lo), hi: mask(width) }
            }
            Opcode::BvXor | Opcode::BvNeg => full,
            Opcode::BvNot => {
                let a = self.iv(ch[0]);
                Interval {
                    lo: !a.hi & mask(width),
                    hi: !a.lo & mask(width),
                }
            }
            Opcode::BvShl => {
                let (a, b) = (self.iv(ch[0]), self.iv(ch[1]));
                if b.is_point() {
                    let k = b.lo;
                    if k >= width as u128 {
                        Interval::point(0)
                    } else {
                        match (
                            a.lo.checked_shl(k as u32),
                            a.hi.checked_shl(k as u32),
                        ) {
                            (Some(lo), Some(hi)) if hi <= mask(width) => Interval { lo, hi },
                            _ => full,
                        }
                    }
                } else {
                    full
                }
            }
            Opcode::BvLShr => {
                let (a, b) = (self.iv(ch[0]), self.iv(ch[1]));
                if b.is_point() {
                    let k = b.lo;
                    if k >= width as u128 {
                        Interval::point(0)
                    } else {
                        Interval { lo: a.lo >> k, hi: a.hi >> k }
                    }
                } else {
                    Interval { lo: 0, hi: a.hi }
                }
            }
            Opcode::BvULt => self.cmp_interval(ch, |a, b| a.hi < b.lo, |a, b| a.lo >= b.hi),
            Opcode::BvULe => self.cmp_interval(ch, |a, b| a.hi <= b.lo, |a, b| a.lo > b.hi),
            Opcode::BvUGt => self.cmp_interval(ch, |a, b| a.lo > b.hi, |a, b| a.hi <= b.lo),
            Opcode::BvUGe => self.cmp_interval(ch, |a, b| a.lo >= b.hi, |a, b| a.hi < b.lo),
            Opcode::BvSLt | Opcode::BvSLe => {
                // Refine only when both operands stay within one sign half,
                // where signed order agrees with unsigned order.
                let (a, b) = (self.iv(ch[0]), self.iv(ch[1]));
                let w = self.width_of(ch[0]).expect("sort-checked");
                let half = 1u128 << (w - 1).min(127);
                let same_half = (a.hi < half && b.hi < half) || (a.lo >= half && b.lo >= half);
                if same_half {
                    match op {
                        Opcode::BvSLt => {
                            self.cmp_interval(ch, |a, b| a.hi < b.lo, |a, b| a.lo >= b.hi)
                        }
                        _ => self.cmp_interval(ch, |a, b| a.hi <= b.lo, |a, b| a.lo > b.hi),
                    }
                } else {
                    full
                }
            }
            Opcode::BvZeroExtend(_) => self.iv(ch[0]),
            Opcode::BvTruncate(target) => {
                let a = self.iv(ch[0]);
                if a.hi <= mask(*target) {
                    a
                } else {
                    full
                }
            }
            Opcode::BvConcat => {
                let (a, b) = (self.iv(ch[0]), self.iv(ch[1]));
                let lw = self.width_of(ch[1]).expect("sort-checked");
                Interval {
                    lo: (a.lo << lw) | b.lo,
                    hi: (a.hi << lw) | b.hi,
                }
            }
            Opcode::VariantTag | Opcode::ArrayGet | Opcode::TupleGet(_)
            | Opcode::RecordGet(_) | Opcode::VariantGet(_) => full,
            Opcode::UnitConst
            | Opcode::MkTuple
            | Opcode::MkRecord(_)
            | Opcode::MkArray(_)
            | Opcode::ArraySet
            | Opcode::MkVariant { .. } => return None,
        };
        Some(iv)
    }

    fn cmp_interval(
        &self,
        ch: &[TermId],
        always: impl Fn(Interval, Interval) -> bool,
        never: impl Fn(Interval, Interval) -> bool,
    ) -> Interval {
        let (a, b) = (self.iv(ch[0]), self.iv(ch[1]));
        if always(a, b) {
            Interval::point(1)
        } else if never(a, b) {
            Interval::point(0)
        } else {
            Interval::full(1)
        }
    }

    // ---- Evaluation ---------------------------------------------------------

    /// Evaluate a term under a concrete environment. Total for every
    /// well-sorted reference-free term whose symbols are all bound.
    pub fn eval(&self, t: TermId, env: &Env) -> Result<ConcreteValue, EvalError> {
        let mut memo: HashMap<TermId, ConcreteValue> = HashMap::new();
        self.eval_memo(t, env, &mut memo)
    }

    fn eval_memo(
        &self,
        t: TermId,
        env: &Env,
        memo: &mut HashMap<TermId, ConcreteValue>,
    ) -> Result<ConcreteValue, EvalError> {
        if let Some(v) = memo.get(&t) {
            return Ok(v.clone());
        }
        let node = self.node(t);
        let v = match &node.op {
            Opcode::Symbol(s) => {
                let info = &self.symbols[s.0 as usize];
                env.get(*s)
                    .cloned()
                    .ok_or_else(|| EvalError::MissingSymbol {
                        name: info.name.clone(),
                        ordinal: info.ordinal,
                    })?
            }
            op => {
                let mut vals = Vec::with_capacity(node.children.len());
                for &c in &node.children {
                    vals.push(self.eval_memo(c, env, memo)?);
                }
                // Wrong-arm variant reads need the result sort for their
                // default value, which concrete_op cannot see.
                match op {
                    Opcode::VariantGet(want) => match &vals[0] {
                        ConcreteValue::Variant { arm, .. } if arm != want => {
                            ConcreteValue::default_of(&node.sort)
                        }
                        _ => concrete_op(op, &vals),
                    },
                    _ => concrete_op(op, &vals),
                }
            }
        };
        memo.insert(t, v.clone());
        Ok(v)
    }

    // ---- Substitution ---------------------------------------------------

    /// Rebuild `t` with every occurrence of a key term replaced by its
    /// mapped term. Replacement happens before descending, so keys shadow
    /// their own subterms.
    pub fn substitute(
        &mut self,
        t: TermId,
        map: &HashMap<TermId, TermId>,
    ) -> Result<TermId, TermError> {
        let mut memo: HashMap<TermId, TermId> = HashMap::new();
        self.subst_memo(t, map, &mut memo)
    }

    fn subst_memo(
        &mut self,
        t: TermId,
        map: &HashMap<TermId, TermId>,
        memo: &mut HashMap<TermId, TermId>,
    ) -> Result<TermId, TermError> {
        if let Some(&r) = map.get(&t) {
            return Ok(r);
        }
        if let Some(&r) = memo.get(&t) {
            return Ok(r);
        }
        let node = self.node(t).clone();
        let mut changed = false;
        let mut children = Vec::with_capacity(node.children.len());
        for &c in &node.children {
            let nc = self.subst_memo(c, map, memo)?;
            changed |= nc != c;
            children.push(nc);
        }
        let r = if changed {
            self.mk(node.op, &children)?
        } else {
            t
        };
        memo.insert(t, r);
        Ok(r)
    }

    /// All symbols reachable from `t`, in ascending id order.
    pub fn symbols_in(&self, t: TermId) -> Vec<SymbolId> {
        let mut seen = vec![false; self.nodes.len()];
        let mut out = std::collections::BTreeSet::new();
        let mut stack = vec![t];
        while let Some(x) = stack.pop() {
            if seen[x.0 as usize] {
                continue;
            }
            seen[x.0 as usize] = true;
            let n = &self.nodes[x.0 as usize];
            if let Opcode::Symbol(s) = n.op {
                out.insert(s);
            }
            stack.extend(n.children.iter().copied());
        }
        out.into_iter().collect()
    }

    // ---- Debug dump ---------------------------------------------------------

    /// Render the whole table, one term per line in id order:
    /// `%id = op [children] : sort [lo,hi]`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let _ = write!(out, "%{i} = ");
            match n.op {
                Opcode::Symbol(s) => {
                    let info = &self.symbols[s.0 as usize];
                    let _ = write!(out, "symbol {}!{}", info.name, info.ordinal);
                }
                ref op => {
                    let _ = write!(out, "{op}");
                }
            }
            let _ = write!(out, " [");
            for (k, c) in n.children.iter().enumerate() {
                if k > 0 {
                    let _ = write!(out, ", ");
                }
                let _ = write!(out, "{c}");
            }
            let _ = write!(out, "] : {}", n.sort);
            if let Some(iv) = n.interval {
                let _ = write!(out, " [{},{}]", iv.lo, iv.hi);
            }
            out.push('\n');
        }
        out
    }
}

/// Apply an opcode to concrete child values. This is the single definition
/// of operational semantics shared by the evaluator and constant folding.
/// Division by zero yields all-ones, remainder by zero yields zero, shifts
/// of `width` or more yield zero, and out-of-range array reads clamp to
/// the last element. Wrong-arm variant reads are resolved by callers that
/// know the result sort (the value is the arm's default).
pub fn concrete_op(op: &Opcode, vals: &[ConcreteValue]) -> ConcreteValue {
    use ConcreteValue as V;
    let b = |i: usize| -> bool {
        match &vals[i] {
            V::Bool(x) => *x,
            _ => panic!("expected bool"),
        }
    };
    let bv = |i: usize| -> (u32, u128) {
        match &vals[i] {
            V::Bv { width, value } => (*width, *value),
            _ => panic!("expected bitvector"),
        }
    };
    match op {
        Opcode::Const(ConstVal::Bool(x)) => V::Bool(*x),
        Opcode::Const(ConstVal::Bv { width, value }) => V::Bv {
            width: *width,
            value: *value,
        },
        Opcode::UnitConst => V::Unit,
        Opcode::Symbol(_) => panic!("symbols are resolved by the environment"),
        Opcode::Not => V::Bool(!b(0)),
        Opcode::And => V::Bool(b(0) && b(1)),
        Opcode::Or => V::Bool(b(0) || b(1)),
        Opcode::Xor => V::Bool(b(0) ^ b(1)),
        Opcode::Implies => V::Bool(!b(0) || b(1)),
        Opcode::Ite => {
            if b(0) {
                vals[1].clone()
            } else {
                vals[2].clone()
            }
        }
        Opcode::Eq => V::Bool(vals[0] == vals[1]),
        Opcode::BvAdd => {
            let ((w, a), (_, c)) = (bv(0), bv(1));
            V::bv(w, a.wrapping_add(c))
        }
        Opcode::BvSub => {
            let ((w, a), (_, c)) = (bv(0), bv(1));
            V::bv(w, a.wrapping_sub(c))
        }
        Opcode::BvMul => {
            let ((w, a), (_, c)) = (bv(0), bv(1));
            V::bv(w, a.wrapping_mul(c))
        }
        Opcode::BvUDiv => {
            let ((w, a), (_, c)) = (bv(0), bv(1));
            V::bv(w, if c == 0 { mask(w) } else { a / c })
        }
        Opcode::BvURem => {
            let ((w, a), (_, c)) = (bv(0), bv(1));
            V::bv(w, if c == 0 { 0 } else { a % c })
        }
        Opcode::BvAnd => {
            let ((w, a), (_, c)) = (bv(0), bv(1));
            V::bv(w, a & c)
        }
        Opcode::BvOr => {
            let ((w, a), (_, c)) = (bv(0), bv(1));
            V::bv(w, a | c)
        }
        Opcode::BvXor => {
            let ((w, a), (_, c)) = (bv(0), bv(1));
            V::bv(w, a ^ c)
        }
        Opcode::BvNot => {
            let (w, a) = bv(0);
            V::bv(w, !a)
        }
        Opcode::BvNeg => {
            let (w, a) = bv(0);
            V::bv(w, a.wrapping_neg())
        }
        Opcode::BvShl => {
            let ((w, a), (_, s)) = (bv(0), bv(1));
            if s >= w as u128 {
                V::bv(w, 0)
            } else {
                V::bv(w, a << s)
            }
        }
        Opcode::BvLShr => {
            let ((w, a), (_, s)) = (bv(0), bv(1));
            if s >= w as u128 {
                V::bv(w, 0)
            } else {
                V::bv(w, a >> s)
            }
        }
        Opcode::BvULt => V::Bool(bv(0).1 < bv(1).1),
        Opcode::BvULe => V::Bool(bv(0).1 <= bv(1).1),
        Opcode::BvUGt => V::Bool(bv(0).1 > bv(1).1),
        Opcode::BvUGe => V::Bool(bv(0).1 >= bv(1).1),
        Opcode::BvSLt => {
            let ((w, a), (_, c)) = (bv(0), bv(1));
            V::Bool(sign(w, a) < sign(w, c))
        }
        Opcode::BvSLe => {
            let ((w, a), (_, c)) = (bv(0), bv(1));
            V::Bool(sign(w, a) <= sign(w, c))
        }
        Opcode::BvZeroExtend(target) => {
            let (_, a) = bv(0);
            V::Bv {
                width: *target,
                value: a,
            }
        }
        Opcode::BvTruncate(target) => {
            let (_, a) = bv(0);
            V::bv(*target, a)
        }
        Opcode::BvConcat => {
            let ((wh, h), (wl, l)) = (bv(0), bv(1));
            V::Bv {
                width: wh + wl,
                value: (h << wl) | l,
            }
        }
        Opcode::MkTuple => V::Tuple(vals.to_vec()),
        Opcode::TupleGet(i) => match &vals[0] {
            V::Tuple(fs) => fs[*i as usize].clone(),
            _ => panic!("expected tuple"),
        },
        Opcode::MkRecord(_) => V::Record(vals.to_vec()),
        Opcode::RecordGet(i) => match &vals[0] {
            V::Record(fs) => fs[*i as usize].clone(),
            _ => panic!("expected record"),
        },
        Opcode::MkArray(_) => V::Array(vals.to_vec()),
        Opcode::ArrayGet => match (&vals[0], &vals[1]) {
            (V::Array(es), V::Bv { value, .. }) => {
                let i = (*value as usize).min(es.len() - 1);
                es[i].clone()
            }
            _ => panic!("expected array and index"),
        },
        Opcode::ArraySet => match (&vals[0], &vals[1]) {
            (V::Array(es), V::Bv { value, .. }) => {
                let mut es = es.clone();
                if (*value as usize) < es.len() {
                    es[*value as usize] = vals[2].clone();
                }
                V::Array(es)
            }
            _ => panic!("expected array and index"),
        },
        Opcode::MkVariant { arm, .. } => V::Variant {
            arm: *arm,
            payload: Box::new(vals[0].clone()),
        },
        Opcode::VariantTag => match &vals[0] {
            V::Variant { arm, .. } => V::bv(TAG_WIDTH, *arm as u128),
            _ => panic!("expected variant"),
        },
        Opcode::VariantGet(want) => match &vals[0] {
            V::Variant { arm, payload } if arm == want => (**payload).clone(),
            V::Variant { .. } => {
                // Wrong-arm read: the arm's default value. The engine guards
                // real reads by tag, so this only defines totality.
                panic!("wrong-arm variant read needs the sort for a default")
            }
            _ => panic!("expected variant"),
        },
    }
}

fn sign(width: u32, v: u128) -> i128 {
    let shift = 128 - width;
    ((v << shift) as i128) >> shift
}
