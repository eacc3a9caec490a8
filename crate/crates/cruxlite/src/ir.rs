//! Typed control-flow-graph program representation.
//!
//! A [`Program`] is a set of record/variant declarations plus functions;
//! each function is a CFG of [`Block`]s over mutable, non-SSA locals.
//! This module owns the static checks that run after parsing: sort
//! checking ([`sort_check`]), the immediate post-dominator analysis the
//! engine merges paths at ([`immediate_postdominators`]), and the
//! definite-assignment dataflow ([`definite_assignment`]).

use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use crate::term::{mask, Sort, MAX_WIDTH, TAG_WIDTH};

/// Region of input text an entity came from. Attached to every parsed
/// statement and carried into diagnostics and proof obligations.
#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize)]
pub struct SourceSpan {
    pub file: String,
    pub line: u32,
    pub col: u32,
    pub end_line: u32,
    pub end_col: u32,
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.file, self.line, self.col)
    }
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub struct Diagnostic {
    pub span: SourceSpan,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.span, self.message)
    }
}

impl Diagnostic {
    pub fn new(span: &SourceSpan, message: impl Into<String>) -> Diagnostic {
        Diagnostic {
            span: span.clone(),
            message: message.into(),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct FuncId(pub u32);

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct BlockId(pub u32);

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct LocalId(pub u32);

/// A named record or variant declaration; `sort` is the full inline sort.
#[derive(Clone, PartialEq, Debug)]
pub struct SortDecl {
    pub name: String,
    pub sort: Sort,
    pub span: SourceSpan,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Annotation {
    /// Entry point for the verification harness.
    Test,
    /// This function is a specification for the named target function.
    SpecFor(String),
}

#[derive(Clone, PartialEq, Debug)]
pub struct LocalDecl {
    pub name: String,
    pub sort: Sort,
}

#[derive(Clone, PartialEq, Debug)]
pub struct Function {
    pub name: String,
    pub annotations: Vec<Annotation>,
    /// Locals `0..params.len()` are the parameters, in declaration order.
    pub params: Vec<LocalDecl>,
    pub ret_sort: Sort,
    /// All locals including parameters; index = [`LocalId`].
    pub locals: Vec<LocalDecl>,
    /// Entry is always block 0; blocks keep source order.
    pub blocks: Vec<Block>,
    pub block_names: Vec<String>,
    pub span: SourceSpan,
}

#[derive(Clone, PartialEq, Debug)]
pub struct Block {
    pub stmts: Vec<Stmt>,
    pub term: Terminator,
}

#[derive(Clone, PartialEq, Debug)]
pub struct Stmt {
    pub kind: StmtKind,
    pub span: SourceSpan,
}

#[derive(Clone, PartialEq, Debug)]
pub enum StmtKind {
    Assign(LocalId, Rvalue),
    /// `store ref, value`: write through a reference.
    Store(Operand, Operand),
    /// Bind a fresh symbolic value of the sort to the local; the string is
    /// the symbol's display name.
    SymbolicIntro(LocalId, Sort, String),
    Assume(Operand),
    Assert(Operand, Option<String>),
    /// Activate the named specification function as an override for its
    /// target in everything executed after this point.
    EnableSpec(String),
    Nop,
}

#[derive(Clone, PartialEq, Debug)]
pub struct Terminator {
    pub kind: TermKind,
    pub span: SourceSpan,
}

#[derive(Clone, PartialEq, Debug)]
pub enum TermKind {
    Goto(BlockId),
    Branch(Operand, BlockId, BlockId),
    Return(Operand),
    Panic(String),
    Unreachable,
}

#[derive(Clone, PartialEq, Debug)]
pub enum Operand {
    Local(LocalId),
    ConstBool(bool),
    ConstBv { width: u32, value: u128 },
    Unit,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum UnOpKind {
    /// Boolean negation on `bool`, bitwise complement on bitvectors.
    Not,
    Neg,
    ZeroExtend(u32),
    Truncate(u32),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BinOpKind {
    Add,
    Sub,
    Mul,
    /// Unsigned division; generates a divide-by-zero obligation.
    UDiv,
    /// Unsigned remainder; generates a divide-by-zero obligation.
    URem,
    /// Boolean or bitwise depending on operand sort.
    And,
    Or,
    Xor,
    Implies,
    Shl,
    LShr,
    Ult,
    Ule,
    Ugt,
    Uge,
    Slt,
    Sle,
    Eq,
    Ne,
    Concat,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CheckedKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, PartialEq, Debug)]
pub enum AggregateKind {
    Tuple,
    /// Element sort (also covers the empty array).
    Array(Sort),
    /// The full declared record sort.
    Record(Sort),
    /// The full declared variant sort and the constructed arm index.
    Variant(Sort, u32),
}

#[derive(Clone, PartialEq, Debug)]
pub enum Selector {
    /// `.0`, `.1`, ... positional tuple field.
    Tuple(u32),
    /// Record field or variant arm, resolved against the operand's sort.
    /// A wrong-arm variant read yields the arm's default value (callers
    /// branch on the tag first).
    Named(String),
    /// Variant tag as `bv8`.
    Tag,
}

#[derive(Clone, PartialEq, Debug)]
pub enum RefSelector {
    Tuple(u32),
    /// Record field only; references into variant payloads are not
    /// supported (rebuild the variant to mutate it).
    Named(String),
    /// Reference to an array element; generates a bounds obligation where
    /// the reference is formed.
    Elem(Operand),
}

#[derive(Clone, PartialEq, Debug)]
pub enum Rvalue {
    Use(Operand),
    UnOp(UnOpKind, Operand),
    BinOp(BinOpKind, Operand, Operand),
    /// Arithmetic with an overflow obligation; the value wraps.
    Checked(CheckedKind, Operand, Operand),
    Aggregate(AggregateKind, Vec<Operand>),
    Project(Operand, Selector),
    /// Allocate a heap cell initialized with the operand; yields a
    /// reference. The pointee sort must be reference-free.
    Alloc(Sort, Operand),
    Load(Operand),
    RefProject(Operand, RefSelector),
    Call(String, Vec<Operand>),
    /// Bounds-checked array read with a dynamic index.
    Index(Operand, Operand),
}

#[derive(Clone, PartialEq, Debug, Default)]
pub struct Program {
    pub sort_decls: Vec<SortDecl>,
    pub functions: Vec<Function>,
}

impl Program {
    pub fn func_id(&self, name: &str) -> Option<FuncId> {
        self.functions
            .iter()
            .position(|f| f.name == name)
            .map(|i| FuncId(i as u32))
    }

    pub fn func(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn function(&self, id: FuncId) -> &Function {
        &self.functions[id.0 as usize]
    }
}

impl Function {
    pub fn local_sort(&self, l: LocalId) -> &Sort {
        &self.locals[l.0 as usize].sort
    }

    pub fn local_name(&self, l: LocalId) -> &str {
        &self.locals[l.0 as usize].name
    }

    pub fn block_name(&self, b: BlockId) -> &str {
        &self.block_names[b.0 as usize]
    }

    pub fn is_test(&self) -> bool {
        self.annotations.contains(&Annotation::Test)
    }

    pub fn spec_target(&self) -> Option<&str> {
        self.annotations.iter().find_map(|a| match a {
            Annotation::SpecFor(t) => Some(t.as_str()),
            _ => None,
        })
    }

    /// CFG successors of a block (empty for exiting terminators).
    pub fn successors(&self, b: BlockId) -> Vec<BlockId> {
        match &self.blocks[b.0 as usize].term.kind {
            TermKind::Goto(t) => vec![*t],
            TermKind::Branch(_, t, e) => vec![*t, *e],
            TermKind::Return(_) | TermKind::Panic(_) | TermKind::Unreachable => vec![],
        }
    }
}

// ---- Operand and rvalue sorts ------------------------------------------

/// Sort of an operand in the context of a function's locals.
pub fn operand_sort(f: &Function, op: &Operand) -> Sort {
    match op {
        Operand::Local(l) => f.local_sort(*l).clone(),
        Operand::ConstBool(_) => Sort::Bool,
        Operand::ConstBv { width, .. } => Sort::BitVec(*width),
        Operand::Unit => Sort::Unit,
    }
}

fn bv_width(s: &Sort) -> Option<u32> {
    match s {
        Sort::BitVec(w) => Some(*w),
        _ => None,
    }
}

/// Result sort of an rvalue, or a human-readable reason it is ill-sorted.
/// Shared by the frontend's local-sort inference and by [`sort_check`].
pub fn rvalue_sort(prog: &Program, f: &Function, rv: &Rvalue) -> Result<Sort, String> {
    let op_sort = |op: &Operand| operand_sort(f, op);
    match rv {
        Rvalue::Use(op) => Ok(op_sort(op)),
        Rvalue::UnOp(k, a) => {
            let s = op_sort(a);
            match k {
                UnOpKind::Not => match s {
                    Sort::Bool | Sort::BitVec(_) => Ok(s),
                    other => Err(format!("not expects bool or bitvector, got {other}")),
                },
                UnOpKind::Neg => match s {
                    Sort::BitVec(_) => Ok(s),
                    other => Err(format!("neg expects a bitvector, got {other}")),
                },
                UnOpKind::ZeroExtend(w) => match s {
                    Sort::BitVec(sw) if sw <= *w && *w <= MAX_WIDTH => Ok(Sort::BitVec(*w)),
                    other => Err(format!("cannot zero-extend {other} to bv{w}")),
                },
                UnOpKind::Truncate(w) => match s {
                    Sort::BitVec(sw) if *w >= 1 && *w <= sw => Ok(Sort::BitVec(*w)),
                    other => Err(format!("cannot truncate {other} to bv{w}")),
                },
            }
        }
        Rvalue::BinOp(k, a, b) => {
            let (sa, sb) = (op_sort(a), op_sort(b));
            use BinOpKind::*;
            match k {
                Add | Sub | Mul | UDiv | URem | Shl | LShr => match (&sa, &sb) {
                    (Sort::BitVec(x), Sort::BitVec(y)) if x == y => Ok(sa),
                    _ => Err(format!("{k:?} expects equal-width bitvectors, got {sa} and {sb}")),
                },
                And | Or | Xor => match (&sa, &sb) {
                    (Sort::Bool, Sort::Bool) => Ok(Sort::Bool),
                    (Sort::BitVec(x), Sort::BitVec(y)) if x == y => Ok(sa),
                    _ => Err(format!(
                        "{k:?} expects two bools or equal-width bitvectors, got {sa} and {sb}"
                    )),
                },
                Implies => match (&sa, &sb) {
                    (Sort::Bool, Sort::Bool) => Ok(Sort::Bool),
                    _ => Err(format!("implies expects bools, got {sa} and {sb}")),
                },
                Ult | Ule | Ugt | Uge | Slt | Sle => match (&sa, &sb) {
                    (Sort::BitVec(x), Sort::BitVec(y)) if x == y => Ok(Sort::Bool),
                    _ => Err(format!("{k:?} expects equal-width bitvectors, got {sa} and {sb}")),
                },
                Eq | Ne => {
                    if sa != sb {
                        Err(format!("cannot compare {sa} with {sb}"))
                    } else if sa.has_ref() {
                        Err("references cannot be compared".into())
                    } else {
                        Ok(Sort::Bool)
                    }
                }
                Concat => match (&sa, &sb) {
                    (Sort::BitVec(x), Sort::BitVec(y)) if x + y <= MAX_WIDTH => {
                        Ok(Sort::BitVec(x + y))
                    }
                    _ => Err(format!("cannot concat {sa} and {sb}")),
                },
            }
        }
        Rvalue::Checked(_, a, b) => {
            let (sa, sb) = (op_sort(a), op_sort(b));
            match (&sa, &sb) {
                (Sort::BitVec(x), Sort::BitVec(y)) if x == y => Ok(sa),
                _ => Err(format!(
                    "checked arithmetic expects equal-width bitvectors, got {sa} and {sb}"
                )),
            }
        }
        Rvalue::Aggregate(kind, ops) => match kind {
            AggregateKind::Tuple => {
                let fs: Vec<Sort> = ops.iter().map(op_sort).collect();
                if let Some(bad) = fs.iter().find(|s| s.has_ref()) {
                    return Err(format!("tuples cannot hold references ({bad})"));
                }
                Ok(Sort::Tuple(fs))
            }
            AggregateKind::Array(elem) => {
                if elem.has_ref() {
                    return Err(format!("arrays cannot hold references ({elem})"));
                }
                for (i, op) in ops.iter().enumerate() {
                    let s = op_sort(op);
                    if &s != elem {
                        return Err(format!("array element {i} expects {elem}, got {s}"));
                    }
                }
                Ok(Sort::Array(Box::new(elem.clone()), ops.len()))
            }
            AggregateKind::Record(rsort) => {
                let Sort::Record { name, fields } = rsort else {
                    return Err("record constructor without a record sort".into());
                };
                if fields.len() != ops.len() {
                    return Err(format!(
                        "record {name} has {} fields, got {} values",
                        fields.len(),
                        ops.len()
                    ));
                }
                for ((fname, fsort), op) in fields.iter().zip(ops) {
                    let s = op_sort(op);
                    if &s != fsort {
                        return Err(format!("field {fname} expects {fsort}, got {s}"));
                    }
                }
                Ok(rsort.clone())
            }
            AggregateKind::Variant(vsort, arm) => {
                let Sort::Variant { name, arms } = vsort else {
                    return Err("variant constructor without a variant sort".into());
                };
                let Some((aname, psort)) = arms.get(*arm as usize) else {
                    return Err(format!("variant {name} has no arm {arm}"));
                };
                if ops.len() != 1 {
                    return Err(format!("variant constructor takes one payload, got {}", ops.len()));
                }
                let s = op_sort(&ops[0]);
                if &s != psort {
                    return Err(format!("arm {aname} expects {psort}, got {s}"));
                }
                Ok(vsort.clone())
            }
        },
        Rvalue::Project(a, sel) => {
            let s = op_sort(a);
            project_sort(&s, sel)
        }
        Rvalue::Alloc(sort, init) => {
            if sort.has_ref() {
                return Err(format!("allocations cannot hold references ({sort})"));
            }
            let s = op_sort(init);
            if &s != sort {
                return Err(format!("alloc of {sort} initialized with {s}"));
            }
            Ok(Sort::Ref(Box::new(sort.clone())))
        }
        Rvalue::Load(r) => match op_sort(r) {
            Sort::Ref(p) => Ok(*p),
            other => Err(format!("load expects a reference, got {other}")),
        },
        Rvalue::RefProject(r, sel) => {
            let Sort::Ref(p) = op_sort(r) else {
                return Err(format!("ref projection expects a reference, got {}", op_sort(r)));
            };
            let inner = match sel {
                RefSelector::Tuple(i) => project_sort(&p, &Selector::Tuple(*i))?,
                RefSelector::Named(name) => match &*p {
                    Sort::Record { .. } => project_sort(&p, &Selector::Named(name.clone()))?,
                    other => {
                        return Err(format!(
                            "ref projection by name expects a record, got {other}"
                        ))
                    }
                },
                RefSelector::Elem(idx) => {
                    if bv_width(&op_sort(idx)).is_none() {
                        return Err(format!(
                            "array index must be a bitvector, got {}",
                            op_sort(idx)
                        ));
                    }
                    match &*p {
                        Sort::Array(e, n) => {
                            if *n == 0 {
                                return Err("cannot index a zero-length array".into());
                            }
                            (**e).clone()
                        }
                        other => return Err(format!("elem projection expects an array, got {other}")),
                    }
                }
            };
            Ok(Sort::Ref(Box::new(inner)))
        }
        Rvalue::Call(name, args) => {
            let Some(callee) = prog.func(name) else {
                return Err(format!("call of unknown function {name}"));
            };
            if callee.params.len() != args.len() {
                return Err(format!(
                    "{name} takes {} arguments, got {}",
                    callee.params.len(),
                    args.len()
                ));
            }
            for (i, (p, a)) in callee.params.iter().zip(args).enumerate() {
                let s = op_sort(a);
                if s != p.sort {
                    return Err(format!("argument {i} of {name} expects {}, got {s}", p.sort));
                }
            }
            Ok(callee.ret_sort.clone())
        }
        Rvalue::Index(arr, idx) => {
            if bv_width(&op_sort(idx)).is_none() {
                return Err(format!("array index must be a bitvector, got {}", op_sort(idx)));
            }
            match op_sort(arr) {
                Sort::Array(e, n) => {
                    if n == 0 {
                        Err("cannot index a zero-length array".into())
                    } else {
                        Ok(*e)
                    }
                }
                other => Err(format!("index expects an array, got {other}")),
            }
        }
    }
}

/// Resolve a projection selector against the projected sort.
pub fn project_sort(s: &Sort, sel: &Selector) -> Result<Sort, String> {
    match (s, sel) {
        (Sort::Tuple(fs), Selector::Tuple(i)) => fs
            .get(*i as usize)
            .cloned()
            .ok_or_else(|| format!("tuple {s} has no field {i}")),
        (Sort::Record { name, fields }, Selector::Named(fname)) => fields
            .iter()
            .find(|(n, _)| n == fname)
            .map(|(_, s)| s.clone())
            .ok_or_else(|| format!("record {name} has no field {fname}")),
        (Sort::Variant { name, arms }, Selector::Named(aname)) => arms
            .iter()
            .find(|(n, _)| n == aname)
            .map(|(_, s)| s.clone())
            .ok_or_else(|| format!("variant {name} has no arm {aname}")),
        (Sort::Variant { .. }, Selector::Tag) => Ok(Sort::BitVec(TAG_WIDTH)),
        _ => Err(format!("cannot project {sel:?} out of {s}")),
    }
}

// ---- Sort checking -------------------------------------------------------

/// Validate every static invariant: unique names, annotation rules,
/// per-statement sorts, and terminator shapes. Returns all findings;
/// empty means the program is well-formed. Pure: runs identically on the
/// same input.
pub fn sort_check(prog: &Program) -> Vec<Diagnostic> {
    let mut out = Vec::new();

    let mut decl_names = HashSet::new();
    for d in &prog.sort_decls {
        if !decl_names.insert(d.name.as_str()) {
            out.push(Diagnostic::new(&d.span, format!("duplicate sort declaration {}", d.name)));
        }
        if d.sort.has_ref() {
            out.push(Diagnostic::new(
                &d.span,
                format!("declared sort {} contains a reference", d.name),
            ));
        }
    }

    let mut fn_names = HashSet::new();
    for f in &prog.functions {
        if !fn_names.insert(f.name.as_str()) {
            out.push(Diagnostic::new(&f.span, format!("duplicate function {}", f.name)));
        }
    }

    for f in &prog.functions {
        check_annotations(prog, f, &mut out);
        check_function(prog, f, &mut out);
    }
    out
}

fn check_annotations(prog: &Program, f: &Function, out: &mut Vec<Diagnostic>) {
    if f.annotations.len() > 1 {
        out.push(Diagnostic::new(
            &f.span,
            format!("{} has more than one annotation", f.name),
        ));
    }
    for a in &f.annotations {
        match a {
            Annotation::Test => {
                if !f.params.is_empty() {
                    out.push(Diagnostic::new(
                        &f.span,
                        format!("test {} must not take parameters", f.name),
                    ));
                }
            }
            Annotation::SpecFor(target) => match prog.func(target) {
                None => out.push(Diagnostic::new(
                    &f.span,
                    format!("spec {} names unknown function {target}", f.name),
                )),
                Some(t) => {
                    if !t.annotations.is_empty() {
                        out.push(Diagnostic::new(
                            &f.span,
                            format!("spec target {target} must be a plain function"),
                        ));
                    }
                    if t.params.iter().map(|p| &p.sort).ne(f.params.iter().map(|p| &p.sort))
                        || t.ret_sort != f.ret_sort
                    {
                        out.push(Diagnostic::new(
                            &f.span,
                            format!("spec {} signature differs from {target}", f.name),
                        ));
                    }
                }
            },
        }
    }
}

fn check_function(prog: &Program, f: &Function, out: &mut Vec<Diagnostic>) {
    if f.blocks.is_empty() {
        out.push(Diagnostic::new(&f.span, format!("{} has no blocks", f.name)));
        return;
    }
    for p in &f.params {
        if let Sort::Ref(inner) = &p.sort {
            if inner.has_ref() {
                out.push(Diagnostic::new(
                    &f.span,
                    format!("parameter {} is a reference to a reference", p.name),
                ));
            }
        } else if p.sort.has_ref() {
            out.push(Diagnostic::new(
                &f.span,
                format!("parameter {} embeds a reference in an aggregate", p.name),
            ));
        }
    }

    let ctx = |b: usize, what: &str| format!("{}, block {}: {what}", f.name, f.block_names[b]);

    for (bi, block) in f.blocks.iter().enumerate() {
        for stmt in &block.stmts {
            match &stmt.kind {
                StmtKind::Assign(dst, rv) => match rvalue_sort(prog, f, rv) {
                    Ok(s) => {
                        let want = f.local_sort(*dst);
                        if &s != want {
                            out.push(Diagnostic::new(
                                &stmt.span,
                                ctx(bi, &format!(
                                    "cannot assign {s} to {}: {want}",
                                    f.local_name(*dst)
                                )),
                            ));
                        }
                    }
                    Err(e) => out.push(Diagnostic::new(&stmt.span, ctx(bi, &e))),
                },
                StmtKind::Store(r, v) => {
                    match operand_sort(f, r) {
                        Sort::Ref(p) => {
                            let s = operand_sort(f, v);
                            if s != *p {
                                out.push(Diagnostic::new(
                                    &stmt.span,
                                    ctx(bi, &format!("store of {s} through a reference to {p}")),
                                ));
                            }
                        }
                        other => out.push(Diagnostic::new(
                            &stmt.span,
                            ctx(bi, &format!("store target must be a reference, got {other}")),
                        )),
                    }
                }
                StmtKind::SymbolicIntro(dst, sort, _) => {
                    if sort.has_ref() {
                        out.push(Diagnostic::new(
                            &stmt.span,
                            ctx(bi, &format!("symbolic values cannot contain references ({sort})")),
                        ));
                    }
                    if f.local_sort(*dst) != sort {
                        out.push(Diagnostic::new(
                            &stmt.span,
                            ctx(bi, &format!(
                                "symbolic {sort} bound to {}: {}",
                                f.local_name(*dst),
                                f.local_sort(*dst)
                            )),
                        ));
                    }
                }
                StmtKind::Assume(c) | StmtKind::Assert(c, _) => {
                    let s = operand_sort(f, c);
                    if s != Sort::Bool {
                        out.push(Diagnostic::new(
                            &stmt.span,
                            ctx(bi, &format!("condition must be bool, got {s}")),
                        ));
                    }
                }
                StmtKind::EnableSpec(name) => match prog.func(name) {
                    None => out.push(Diagnostic::new(
                        &stmt.span,
                        ctx(bi, &format!("enable_spec of unknown function {name}")),
                    )),
                    Some(spec) => {
                        if spec.spec_target().is_none() {
                            out.push(Diagnostic::new(
                                &stmt.span,
                                ctx(bi, &format!("{name} is not annotated as a spec")),
                            ));
                        }
                    }
                },
                StmtKind::Nop => {}
            }
        }

        let term = &block.term;
        let target_ok = |t: BlockId| (t.0 as usize) < f.blocks.len();
        match &term.kind {
            TermKind::Goto(t) => {
                if !target_ok(*t) {
                    out.push(Diagnostic::new(&term.span, ctx(bi, "goto target out of range")));
                }
            }
            TermKind::Branch(c, t, e) => {
                let s = operand_sort(f, c);
                if s != Sort::Bool {
                    out.push(Diagnostic::new(
                        &term.span,
                        ctx(bi, &format!("branch condition must be bool, got {s}")),
                    ));
                }
                if !target_ok(*t) || !target_ok(*e) {
                    out.push(Diagnostic::new(&term.span, ctx(bi, "branch target out of range")));
                }
            }
            TermKind::Return(v) => {
                let s = operand_sort(f, v);
                if s != f.ret_sort {
                    out.push(Diagnostic::new(
                        &term.span,
                        ctx(bi, &format!("return of {s} from a function returning {}", f.ret_sort)),
                    ));
                }
            }
            TermKind::Panic(_) | TermKind::Unreachable => {}
        }
    }

    for op in all_operands(f) {
        if let Operand::ConstBv { width, value } = op {
            if width == 0 || width > MAX_WIDTH {
                out.push(Diagnostic::new(&f.span, format!("constant width bv{width} out of range")));
            } else if value != value & mask(width) {
                out.push(Diagnostic::new(
                    &f.span,
                    format!("constant {value} does not fit bv{width}"),
                ));
            }
        }
    }
}

fn all_operands(f: &Function) -> Vec<Operand> {
    let mut out = Vec::new();
    let push_rv = |rv: &Rvalue, out: &mut Vec<Operand>| {
        match rv {
            Rvalue::Use(a) | Rvalue::UnOp(_, a) | Rvalue::Load(a) | Rvalue::Alloc(_, a) => {
                out.push(a.clone())
            }
            Rvalue::BinOp(_, a, b) | Rvalue::Checked(_, a, b) | Rvalue::Index(a, b) => {
                out.push(a.clone());
                out.push(b.clone());
            }
            Rvalue::Aggregate(_, ops) | Rvalue::Call(_, ops) => out.extend(ops.iter().cloned()),
            Rvalue::Project(a, _) => out.push(a.clone()),
            Rvalue::RefProject(a, sel) => {
                out.push(a.clone());
                if let RefSelector::Elem(i) = sel {
                    out.push(i.clone());
                }
            }
        }
    };
    for b in &f.blocks {
        for s in &b.stmts {
            match &s.kind {
                StmtKind::Assign(_, rv) => push_rv(rv, &mut out),
                StmtKind::Store(a, b) => {
                    out.push(a.clone());
                    out.push(b.clone());
                }
                StmtKind::Assume(c) | StmtKind::Assert(c, _) => out.push(c.clone()),
                _ => {}
            }
        }
        match &b.term.kind {
            TermKind::Branch(c, _, _) => out.push(c.clone()),
            TermKind::Return(v) => out.push(v.clone()),
            _ => {}
        }
    }
    out
}

// ---- Post-dominators ------------------------------------------------------

/// Immediate post-dominator of a block: the first block every path from it
/// to function exit must pass through.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum IPostDom {
    Block(BlockId),
    /// Only the virtual exit post-dominates the block.
    Exit,
}

#[derive(Clone, Debug)]
pub struct PostDoms {
    /// Indexed by block. `None` when no value exists: the block is
    /// unreachable from entry, or no path from it reaches exit.
    pub ipdom: Vec<Option<IPostDom>>,
    /// Blocks unreachable from the entry block, in ascending order.
    pub unreachable: Vec<BlockId>,
}

impl PostDoms {
    /// The merge block the engine rejoins forked paths at, if any.
    pub fn merge_point(&self, b: BlockId) -> Option<BlockId> {
        match self.ipdom.get(b.0 as usize).copied().flatten() {
            Some(IPostDom::Block(p)) => Some(p),
            _ => None,
        }
    }
}

/// Standard iterative post-dominance dataflow on the reversed CFG with a
/// virtual exit node that every Return/Panic/Unreachable terminator feeds.
/// Unreachable blocks are reported and excluded; blocks that cannot reach
/// exit (e.g. inside an infinite loop) get `None` — the engine's unroll
/// bound is the backstop for those.
pub fn immediate_postdominators(f: &Function) -> PostDoms {
    let n = f.blocks.len();
    let exit = n; // virtual exit node id

    let mut reachable = vec![false; n];
    let mut stack = vec![BlockId(0)];
    while let Some(b) = stack.pop() {
        if reachable[b.0 as usize] {
            continue;
        }
        reachable[b.0 as usize] = true;
        stack.extend(f.successors(b));
    }
    let unreachable: Vec<BlockId> = (0..n)
        .filter(|&i| !reachable[i])
        .map(|i| BlockId(i as u32))
        .collect();

    // pdom sets as bitsets over n+1 nodes; top = all ones.
    let words = (n + 2 + 63) / 64;
    let full = {
        let mut v = vec![u64::MAX; words];
        for i in (n + 1)..words * 64 {
            v[i / 64] &= !(1 << (i % 64));
        }
        v
    };
    let mut pdom: Vec<Vec<u64>> = vec![full.clone(); n + 1];
    let mut exit_only = vec![0u64; words];
    exit_only[exit / 64] |= 1 << (exit % 64);
    pdom[exit] = exit_only;

    let succs: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let s = f.successors(BlockId(i as u32));
            if s.is_empty() {
                vec![exit]
            } else {
                s.into_iter().map(|b| b.0 as usize).collect()
            }
        })
        .collect();

    // Which blocks have at least one path to exit (DFS on reversed edges).
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    for (b, ss) in succs.iter().enumerate() {
        for &s in ss {
            preds[s].push(b);
        }
    }
    let mut reaches_exit = vec![false; n + 1];
    let mut stack = vec![exit];
    while let Some(b) = stack.pop() {
        if reaches_exit[b] {
            continue;
        }
        reaches_exit[b] = true;
        stack.extend(preds[b].iter().copied());
    }

    let mut changed = true;
    while changed {
        changed = false;
        for b in (0..n).rev() {
            if !reachable[b] {
                continue;
            }
            let mut meet = full.clone();
            for &s in &succs[b] {
                for (m, p) in meet.iter_mut().zip(&pdom[s]) {
                    *m &= p;
                }
            }
            meet[b / 64] |= 1 << (b % 64);
            if meet != pdom[b] {
                pdom[b] = meet;
                changed = true;
            }
        }
    }

    let has = |set: &[u64], i: usize| set[i / 64] & (1 << (i % 64)) != 0;
    let popcount = |set: &[u64]| -> u32 { set.iter().map(|w| w.count_ones()).sum() };

    let mut ipdom = vec![None; n];
    for b in 0..n {
        if !reachable[b] || !reaches_exit[b] {
            continue;
        }
        // Strict post-dominators form a chain; the immediate one has a pdom
        // set exactly matching that chain.
        let strict = popcount(&pdom[b]) - 1;
        let mut found = None;
        for p in 0..=n {
            if p != b && has(&pdom[b], p) && popcount(&pdom[p]) == strict {
                found = Some(p);
                break;
            }
        }
        ipdom[b] = found.map(|p| {
            if p == exit {
                IPostDom::Exit
            } else {
                IPostDom::Block(BlockId(p as u32))
            }
        });
    }

    PostDoms { ipdom, unreachable }
}

// ---- Definite assignment --------------------------------------------------

/// A read of a local that is not assigned on every path reaching it.
/// `stmt` is the statement index, or `None` for the block terminator.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct UseBeforeAssign {
    pub block: BlockId,
    pub stmt: Option<usize>,
    pub local: LocalId,
    pub span: SourceSpan,
}

fn operand_local(op: &Operand) -> Option<LocalId> {
    match op {
        Operand::Local(l) => Some(*l),
        _ => None,
    }
}

pub(crate) fn rvalue_reads(rv: &Rvalue) -> Vec<LocalId> {
    let mut out = Vec::new();
    let mut push = |op: &Operand| out.extend(operand_local(op));
    match rv {
        Rvalue::Use(a) | Rvalue::UnOp(_, a) | Rvalue::Load(a) | Rvalue::Alloc(_, a) => push(a),
        Rvalue::BinOp(_, a, b) | Rvalue::Checked(_, a, b) | Rvalue::Index(a, b) => {
            push(a);
            push(b);
        }
        Rvalue::Aggregate(_, ops) | Rvalue::Call(_, ops) => ops.iter().for_each(push),
        Rvalue::Project(a, _) => push(a),
        Rvalue::RefProject(a, sel) => {
            push(a);
            if let RefSelector::Elem(i) = sel {
                push(i);
            }
        }
    }
    out
}

/// Reads and writes of one statement, in evaluation order (reads first).
fn stmt_effects(kind: &StmtKind) -> (Vec<LocalId>, Option<LocalId>) {
    match kind {
        StmtKind::Assign(dst, rv) => (rvalue_reads(rv), Some(*dst)),
        StmtKind::Store(r, v) => {
            let mut reads = Vec::new();
            reads.extend(operand_local(r));
            reads.extend(operand_local(v));
            (reads, None)
        }
        StmtKind::SymbolicIntro(dst, _, _) => (Vec::new(), Some(*dst)),
        StmtKind::Assume(c) | StmtKind::Assert(c, _) => {
            (operand_local(c).into_iter().collect(), None)
        }
        StmtKind::EnableSpec(_) | StmtKind::Nop => (Vec::new(), None),
    }
}

fn term_reads(kind: &TermKind) -> Vec<LocalId> {
    match kind {
        TermKind::Branch(c, _, _) => operand_local(c).into_iter().collect(),
        TermKind::Return(v) => operand_local(v).into_iter().collect(),
        _ => Vec::new(),
    }
}

/// Structured definite-assignment result; [`definite_assignment`] renders
/// these as diagnostics.
pub fn use_before_assign(f: &Function) -> Vec<UseBeforeAssign> {
    let n = f.blocks.len();
    let nlocals = f.locals.len();
    // in_assigned[b]: locals definitely assigned on every path to b's start.
    let bottom: Vec<bool> = (0..nlocals).map(|i| i < f.params.len()).collect();
    let mut in_assigned: Vec<Option<Vec<bool>>> = vec![None; n];
    in_assigned[0] = Some(bottom);

    // Forward dataflow with intersection meet, to a fixpoint.
    let mut changed = true;
    while changed {
        changed = false;
        for b in 0..n {
            let Some(start) = in_assigned[b].clone() else {
                continue;
            };
            let mut cur = start;
            for stmt in &f.blocks[b].stmts {
                let (_, write) = stmt_effects(&stmt.kind);
                if let Some(w) = write {
                    cur[w.0 as usize] = true;
                }
            }
            for s in f.successors(BlockId(b as u32)) {
                let si = s.0 as usize;
                match &mut in_assigned[si] {
                    None => {
                        in_assigned[si] = Some(cur.clone());
                        changed = true;
                    }
                    Some(prev) => {
                        let mut any = false;
                        for (p, c) in prev.iter_mut().zip(&cur) {
                            if *p && !*c {
                                *p = false;
                                any = true;
                            }
                        }
                        changed |= any;
                    }
                }
            }
        }
    }

    let mut out = Vec::new();
    for b in 0..n {
        let Some(start) = in_assigned[b].clone() else {
            continue; // unreachable from entry
        };
        let mut cur = start;
        for (si, stmt) in f.blocks[b].stmts.iter().enumerate() {
            let (reads, write) = stmt_effects(&stmt.kind);
            for r in reads {
                if !cur[r.0 as usize] {
                    out.push(UseBeforeAssign {
                        block: BlockId(b as u32),
                        stmt: Some(si),
                        local: r,
                        span: stmt.span.clone(),
                    });
                }
            }
            if let Some(w) = write {
                cur[w.0 as usize] = true;
            }
        }
        let term = &f.blocks[b].term;
        for r in term_reads(&term.kind) {
            if !cur[r.0 as usize] {
                out.push(UseBeforeAssign {
                    block: BlockId(b as u32),
                    stmt: None,
                    local: r,
                    span: term.span.clone(),
                });
            }
        }
    }
    out
}

/// Forward must-assign dataflow: one diagnostic per read of a local that
/// some path reaches without assigning it first.
pub fn definite_assignment(f: &Function) -> Vec<Diagnostic> {
    use_before_assign(f)
        .into_iter()
        .map(|v| {
            Diagnostic::new(
                &v.span,
                format!(
                    "{}, block {}: {} may be read before assignment",
                    f.name,
                    f.block_name(v.block),
                    f.local_name(v.local)
                ),
            )
        })
        .collect()
}
