//! Textual program format: parser and canonical printer.
//!
//! Files use the `.cir` extension and `//` line comments. A program is a
//! sequence of record/variant declarations and functions; see the grammar
//! in the repository README. Parsing resolves sort names inline, assigns
//! block labels, and infers local sorts from their first assignment, so a
//! successful parse yields a fully typed [`Program`]. Printing is
//! deterministic and round-trips: `parse(print(p))` equals `p` up to
//! source spans.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::ir::{
    AggregateKind, Annotation, BinOpKind, Block, BlockId, CheckedKind, Function, LocalDecl,
    LocalId, Operand, Program, RefSelector, Rvalue, Selector, SortDecl, Stmt, StmtKind, TermKind,
    Terminator, UnOpKind,
};
pub use crate::ir::{Diagnostic, SourceSpan};
use crate::term::{mask, Sort, MAX_WIDTH};

// ---- Tokens ---------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(u128),
    Str(String),
    Arrow,
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Lt,
    Gt,
    Comma,
    Colon,
    Semi,
    Assign,
    Dot,
    Hash,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(v) => format!("`{v}`"),
            Tok::Str(_) => "string literal".into(),
            Tok::Arrow => "`->`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::Lt => "`<`".into(),
            Tok::Gt => "`>`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Assign => "`=`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Hash => "`#`".into(),
            Tok::Eof => "end of file".into(),
        }
    }
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    span: SourceSpan,
}

fn lex(file: &str, text: &str) -> Result<Vec<Token>, Vec<Diagnostic>> {
    let mut out = Vec::new();
    let mut line: u32 = 1;
    let mut col: u32 = 1;
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0usize;
    let mut errors = Vec::new();

    let span1 = |line: u32, col: u32, len: u32| SourceSpan {
        file: file.to_string(),
        line,
        col,
        end_line: line,
        end_col: col + len,
    };

    while i < chars.len() {
        let c = chars[i];
        let (sl, sc) = (line, col);
        let step = |i: &mut usize, col: &mut u32| {
            *i += 1;
            *col += 1;
        };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            ' ' | '\t' | '\r' => step(&mut i, &mut col),
            '/' if chars.get(i + 1) == Some(&'/') => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                    col += 1;
                }
                let word: String = chars[start..i].iter().collect();
                out.push(Token {
                    tok: Tok::Ident(word.clone()),
                    span: span1(sl, sc, word.len() as u32),
                });
            }
            '0'..='9' => {
                let start = i;
                let hex = c == '0' && chars.get(i + 1) == Some(&'x');
                if hex {
                    i += 2;
                    col += 2;
                }
                while i < chars.len()
                    && (chars[i].is_ascii_hexdigit() && (hex || chars[i].is_ascii_digit()))
                {
                    i += 1;
                    col += 1;
                }
                let word: String = chars[start..i].iter().collect();
                let parsed = if hex {
                    u128::from_str_radix(&word[2..], 16)
                } else {
                    word.parse::<u128>()
                };
                match parsed {
                    Ok(v) => out.push(Token {
                        tok: Tok::Int(v),
                        span: span1(sl, sc, word.len() as u32),
                    }),
                    Err(_) => errors.push(Diagnostic::new(
                        &span1(sl, sc, word.len() as u32),
                        format!("invalid integer literal `{word}`"),
                    )),
                }
            }
            '"' => {
                i += 1;
                col += 1;
                let mut s = String::new();
                let mut closed = false;
                while i < chars.len() {
                    match chars[i] {
                        '"' => {
                            i += 1;
                            col += 1;
                            closed = true;
                            break;
                        }
                        '\\' => {
                            let esc = chars.get(i + 1).copied();
                            let ch = match esc {
                                Some('n') => '\n',
                                Some('t') => '\t',
                                Some('\\') => '\\',
                                Some('"') => '"',
                                _ => {
                                    errors.push(Diagnostic::new(
                                        &span1(line, col, 2),
                                        "unknown escape sequence".to_string(),
                                    ));
                                    '\\'
                                }
                            };
                            s.push(ch);
                            i += 2;
                            col += 2;
                        }
                        '\n' => break,
                        other => {
                            s.push(other);
                            i += 1;
                            col += 1;
                        }
                    }
                }
                if !closed {
                    errors.push(Diagnostic::new(
                        &span1(sl, sc, 1),
                        "unterminated string literal".to_string(),
                    ));
                }
                out.push(Token {
                    tok: Tok::Str(s),
                    span: span1(sl, sc, (col - sc).max(1)),
                });
            }
            '-' if chars.get(i + 1) == Some(&'>') => {
                out.push(Token {
                    tok: Tok::Arrow,
                    span: span1(sl, sc, 2),
                });
                i += 2;
                col += 2;
            }
            _ => {
                let tok = match c {
                    '(' => Some(Tok::LParen),
                    ')' => Some(Tok::RParen),
                    '{' => Some(Tok::LBrace),
                    '}' => Some(Tok::RBrace),
                    '[' => Some(Tok::LBracket),
                    ']' => Some(Tok::RBracket),
                    '<' => Some(Tok::Lt),
                    '>' => Some(Tok::Gt),
                    ',' => Some(Tok::Comma),
                    ':' => Some(Tok::Colon),
                    ';' => Some(Tok::Semi),
                    '=' => Some(Tok::Assign),
                    '.' => Some(Tok::Dot),
                    '#' => Some(Tok::Hash),
                    _ => None,
                };
                match tok {
                    Some(t) => {
                        out.push(Token {
                            tok: t,
                            span: span1(sl, sc, 1),
                        });
                        step(&mut i, &mut col);
                    }
                    None => {
                        errors.push(Diagnostic::new(
                            &span1(sl, sc, 1),
                            format!("unexpected character `{c}`"),
                        ));
                        step(&mut i, &mut col);
                    }
                }
            }
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        span: span1(line, col, 0),
    });
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(errors)
    }
}

// ---- Keyword tables ---------------------------------------------------------

const BINOPS: &[(&str, BinOpKind)] = &[
    ("add", BinOpKind::Add),
    ("sub", BinOpKind::Sub),
    ("mul", BinOpKind::Mul),
    ("udiv", BinOpKind::UDiv),
    ("urem", BinOpKind::URem),
    ("and", BinOpKind::And),
    ("or", BinOpKind::Or),
    ("xor", BinOpKind::Xor),
    ("implies", BinOpKind::Implies),
    ("shl", BinOpKind::Shl),
    ("lshr", BinOpKind::LShr),
    ("ult", BinOpKind::Ult),
    ("ule", BinOpKind::Ule),
    ("ugt", BinOpKind::Ugt),
    ("uge", BinOpKind::Uge),
    ("slt", BinOpKind::Slt),
    ("sle", BinOpKind::Sle),
    ("eq", BinOpKind::Eq),
    ("ne", BinOpKind::Ne),
    ("concat", BinOpKind::Concat),
];

const CHECKED: &[(&str, CheckedKind)] = &[
    ("checked_add", CheckedKind::Add),
    ("checked_sub", CheckedKind::Sub),
    ("checked_mul", CheckedKind::Mul),
];

pub(crate) fn binop_token(k: BinOpKind) -> &'static str {
    BINOPS.iter().find(|(_, x)| *x == k).expect("every kind listed").0
}

pub(crate) fn checked_token(k: CheckedKind) -> &'static str {
    CHECKED.iter().find(|(_, x)| *x == k).expect("every kind listed").0
}

fn is_keyword(s: &str) -> bool {
    const WORDS: &[&str] = &[
        "fn", "record", "variant", "true", "false", "store", "assume", "assert", "enable_spec",
        "nop", "symbolic", "call", "alloc", "load", "field", "index", "ref_field", "ref_index",
        "tuple", "mkarray", "mkrecord", "mkvariant", "tag", "not", "neg", "zext", "trunc",
        "goto", "br", "ret", "panic", "unreachable", "bool", "unit", "ref", "test", "spec_for",
    ];
    WORDS.contains(&s)
        || BINOPS.iter().any(|(w, _)| *w == s)
        || CHECKED.iter().any(|(w, _)| *w == s)
        || bv_width_of(s).is_some()
}

/// `bv8` → `Some(8)`; anything else → `None`.
fn bv_width_of(s: &str) -> Option<u32> {
    let rest = s.strip_prefix("bv")?;
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    rest.parse().ok()
}

// ---- Parser -----------------------------------------------------------------

struct FnCtx {
    locals: Vec<LocalDecl>,
    local_sorts: Vec<Option<Sort>>,
    local_spans: Vec<SourceSpan>,
    by_name: HashMap<String, LocalId>,
}

impl FnCtx {
    fn local(&mut self, name: &str, span: &SourceSpan) -> LocalId {
        if let Some(&id) = self.by_name.get(name) {
            return id;
        }
        let id = LocalId(self.locals.len() as u32);
        self.locals.push(LocalDecl {
            name: name.to_string(),
            sort: Sort::Unit, // patched after inference
        });
        self.local_sorts.push(None);
        self.local_spans.push(span.clone());
        self.by_name.insert(name.to_string(), id);
        id
    }
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    decls: Vec<SortDecl>,
    errors: Vec<Diagnostic>,
}

/// A parsed function together with the tables the sort-inference pass
/// still needs: which locals are typed so far and where each was
/// introduced.
struct FnParse {
    function: Function,
    local_sorts: Vec<Option<Sort>>,
    local_spans: Vec<SourceSpan>,
}

/// Raw terminator with unresolved label names.
enum RawTerm {
    Goto(String, SourceSpan),
    Branch(Operand, String, String, SourceSpan),
    Return(Operand, SourceSpan),
    Panic(String, SourceSpan),
    Unreachable(SourceSpan),
}

struct ParseBail;

type PResult<T> = Result<T, ParseBail>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek2(&self) -> &Tok {
        &self.toks[(self.pos + 1).min(self.toks.len() - 1)].tok
    }

    fn here(&self) -> SourceSpan {
        self.toks[self.pos].span.clone()
    }

    fn prev_span(&self) -> SourceSpan {
        self.toks[self.pos.saturating_sub(1)].span.clone()
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&mut self, span: &SourceSpan, msg: impl Into<String>) -> PResult<T> {
        self.errors.push(Diagnostic::new(span, msg));
        Err(ParseBail)
    }

    fn expect(&mut self, tok: Tok) -> PResult<Token> {
        if *self.peek() == tok {
            Ok(self.bump())
        } else {
            let (msg, span) = (
                format!("expected {}, found {}", tok.describe(), self.peek().describe()),
                self.here(),
            );
            self.error(&span, msg)
        }
    }

    fn expect_ident(&mut self, what: &str) -> PResult<(String, SourceSpan)> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                let t = self.bump();
                Ok((s, t.span))
            }
            other => {
                let (msg, span) = (
                    format!("expected {what}, found {}", other.describe()),
                    self.here(),
                );
                self.error(&span, msg)
            }
        }
    }

    fn expect_name(&mut self, what: &str) -> PResult<(String, SourceSpan)> {
        let (s, span) = self.expect_ident(what)?;
        if is_keyword(&s) {
            let msg = format!("`{s}` is a reserved word and cannot name a {what}");
            return self.error(&span, msg);
        }
        Ok((s, span))
    }

    fn expect_str(&mut self, what: &str) -> PResult<String> {
        match self.peek().clone() {
            Tok::Str(s) => {
                self.bump();
                Ok(s)
            }
            other => {
                let (msg, span) = (
                    format!("expected {what}, found {}", other.describe()),
                    self.here(),
                );
                self.error(&span, msg)
            }
        }
    }

    fn expect_int(&mut self, what: &str) -> PResult<u128> {
        match *self.peek() {
            Tok::Int(v) => {
                self.bump();
                Ok(v)
            }
            ref other => {
                let (msg, span) = (
                    format!("expected {what}, found {}", other.describe()),
                    self.here(),
                );
                self.error(&span, msg)
            }
        }
    }

    fn is_ident(&self, word: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == word)
    }

    fn eat_ident(&mut self, word: &str) -> bool {
        if self.is_ident(word) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn lookup_decl(&self, name: &str) -> Option<&Sort> {
        self.decls.iter().find(|d| d.name == name).map(|d| &d.sort)
    }

    // ---- sorts ----

    fn parse_sort(&mut self) -> PResult<Sort> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                let t = self.bump();
                match s.as_str() {
                    "bool" => Ok(Sort::Bool),
                    "unit" => Ok(Sort::Unit),
                    "ref" => {
                        self.expect(Tok::Lt)?;
                        let inner = self.parse_sort()?;
                        self.expect(Tok::Gt)?;
                        Ok(Sort::Ref(Box::new(inner)))
                    }
                    other => {
                        if let Some(w) = bv_width_of(other) {
                            if w == 0 || w > MAX_WIDTH {
                                return self
                                    .error(&t.span, format!("bitvector width {w} out of range"));
                            }
                            return Ok(Sort::BitVec(w));
                        }
                        match self.lookup_decl(other) {
                            Some(sort) => Ok(sort.clone()),
                            None => {
                                self.error(&t.span, format!("unknown sort `{other}`"))
                            }
                        }
                    }
                }
            }
            Tok::LBracket => {
                self.bump();
                let elem = self.parse_sort()?;
                self.expect(Tok::Semi)?;
                let n = self.expect_int("array length")?;
                self.expect(Tok::RBracket)?;
                Ok(Sort::Array(Box::new(elem), n as usize))
            }
            Tok::LParen => {
                self.bump();
                let mut fs = Vec::new();
                if *self.peek() != Tok::RParen {
                    loop {
                        fs.push(self.parse_sort()?);
                        if !matches!(self.peek(), Tok::Comma) {
                            break;
                        }
                        self.bump();
                    }
                }
                self.expect(Tok::RParen)?;
                Ok(Sort::Tuple(fs))
            }
            other => {
                let (msg, span) = (format!("expected a sort, found {}", other.describe()), self.here());
                self.error(&span, msg)
            }
        }
    }

    // ---- operands ----

    fn parse_operand(&mut self, ctx: &mut FnCtx) -> PResult<Operand> {
        match self.peek().clone() {
            Tok::Ident(s) => match s.as_str() {
                "true" => {
                    self.bump();
                    Ok(Operand::ConstBool(true))
                }
                "false" => {
                    self.bump();
                    Ok(Operand::ConstBool(false))
                }
                _ => {
                    let (name, span) = self.expect_name("operand")?;
                    Ok(Operand::Local(ctx.local(&name, &span)))
                }
            },
            Tok::Int(v) => {
                let t = self.bump();
                self.expect(Tok::Colon)?;
                let sort = self.parse_sort()?;
                let Sort::BitVec(w) = sort else {
                    return self.error(&t.span, "integer constants need a bitvector sort");
                };
                if v != v & mask(w) {
                    return self.error(&t.span, format!("constant {v} does not fit bv{w}"));
                }
                Ok(Operand::ConstBv { width: w, value: v })
            }
            Tok::LParen => {
                self.bump();
                self.expect(Tok::RParen)?;
                Ok(Operand::Unit)
            }
            other => {
                let (msg, span) = (
                    format!("expected an operand, found {}", other.describe()),
                    self.here(),
                );
                self.error(&span, msg)
            }
        }
    }

    fn parse_operand_list(&mut self, ctx: &mut FnCtx) -> PResult<Vec<Operand>> {
        self.expect(Tok::LParen)?;
        let mut out = Vec::new();
        if *self.peek() != Tok::RParen {
            loop {
                out.push(self.parse_operand(ctx)?);
                if !matches!(self.peek(), Tok::Comma) {
                    break;
                }
                self.bump();
            }
        }
        self.expect(Tok::RParen)?;
        Ok(out)
    }

    /// `.INT` or `.IDENT` after an operand.
    fn parse_dot_selector(&mut self) -> PResult<Result<u32, String>> {
        self.expect(Tok::Dot)?;
        match self.peek().clone() {
            Tok::Int(i) => {
                self.bump();
                Ok(Ok(i as u32))
            }
            Tok::Ident(s) => {
                self.bump();
                Ok(Err(s))
            }
            other => {
                let (msg, span) = (
                    format!("expected a field selector, found {}", other.describe()),
                    self.here(),
                );
                self.error(&span, msg)
            }
        }
    }

    // ---- rvalues ----

    fn parse_rvalue(&mut self, ctx: &mut FnCtx) -> PResult<Rvalue> {
        // Keyword-introduced forms first.
        if let Tok::Ident(word) = self.peek().clone() {
            if let Some(&(_, k)) = BINOPS.iter().find(|(w, _)| *w == word) {
                self.bump();
                let a = self.parse_operand(ctx)?;
                self.expect(Tok::Comma)?;
                let b = self.parse_operand(ctx)?;
                return Ok(Rvalue::BinOp(k, a, b));
            }
            if let Some(&(_, k)) = CHECKED.iter().find(|(w, _)| *w == word) {
                self.bump();
                let a = self.parse_operand(ctx)?;
                self.expect(Tok::Comma)?;
                let b = self.parse_operand(ctx)?;
                return Ok(Rvalue::Checked(k, a, b));
            }
            match word.as_str() {
                "not" | "neg" => {
                    self.bump();
                    let a = self.parse_operand(ctx)?;
                    let k = if word == "not" { UnOpKind::Not } else { UnOpKind::Neg };
                    return Ok(Rvalue::UnOp(k, a));
                }
                "zext" | "trunc" => {
                    let t = self.bump();
                    let sort = self.parse_sort()?;
                    let Sort::BitVec(w) = sort else {
                        return self.error(&t.span, format!("{word} target must be a bitvector"));
                    };
                    let a = self.parse_operand(ctx)?;
                    let k = if word == "zext" {
                        UnOpKind::ZeroExtend(w)
                    } else {
                        UnOpKind::Truncate(w)
                    };
                    return Ok(Rvalue::UnOp(k, a));
                }
                "call" => {
                    self.bump();
                    let (name, _) = self.expect_name("function name")?;
                    let args = self.parse_operand_list(ctx)?;
                    return Ok(Rvalue::Call(name, args));
                }
                "alloc" => {
                    self.bump();
                    let sort = self.parse_sort()?;
                    let init = self.parse_operand(ctx)?;
                    return Ok(Rvalue::Alloc(sort, init));
                }
                "load" => {
                    self.bump();
                    let r = self.parse_operand(ctx)?;
                    return Ok(Rvalue::Load(r));
                }
                "tag" => {
                    self.bump();
                    let a = self.parse_operand(ctx)?;
                    return Ok(Rvalue::Project(a, Selector::Tag));
                }
                "field" => {
                    self.bump();
                    let a = self.parse_operand(ctx)?;
                    let sel = match self.parse_dot_selector()? {
                        Ok(i) => Selector::Tuple(i),
                        Err(name) => Selector::Named(name),
                    };
                    return Ok(Rvalue::Project(a, sel));
                }
                "ref_field" => {
                    self.bump();
                    let a = self.parse_operand(ctx)?;
                    let sel = match self.parse_dot_selector()? {
                        Ok(i) => RefSelector::Tuple(i),
                        Err(name) => RefSelector::Named(name),
                    };
                    return Ok(Rvalue::RefProject(a, sel));
                }
                "index" | "ref_index" => {
                    self.bump();
                    let a = self.parse_operand(ctx)?;
                    self.expect(Tok::LBracket)?;
                    let i = self.parse_operand(ctx)?;
                    self.expect(Tok::RBracket)?;
                    return Ok(if word == "index" {
                        Rvalue::Index(a, i)
                    } else {
                        Rvalue::RefProject(a, RefSelector::Elem(i))
                    });
                }
                "tuple" => {
                    self.bump();
                    let ops = self.parse_operand_list(ctx)?;
                    return Ok(Rvalue::Aggregate(AggregateKind::Tuple, ops));
                }
                "mkarray" => {
                    self.bump();
                    let elem = self.parse_sort()?;
                    self.expect(Tok::LBracket)?;
                    let mut ops = Vec::new();
                    if *self.peek() != Tok::RBracket {
                        loop {
                            ops.push(self.parse_operand(ctx)?);
                            if !matches!(self.peek(), Tok::Comma) {
                                break;
                            }
                            self.bump();
                        }
                    }
                    self.expect(Tok::RBracket)?;
                    return Ok(Rvalue::Aggregate(AggregateKind::Array(elem), ops));
                }
                "mkrecord" => {
                    self.bump();
                    let (name, span) = self.expect_ident("record name")?;
                    let Some(sort) = self.lookup_decl(&name).cloned() else {
                        return self.error(&span, format!("unknown sort `{name}`"));
                    };
                    if !matches!(sort, Sort::Record { .. }) {
                        return self.error(&span, format!("`{name}` is not a record"));
                    }
                    let ops = self.parse_operand_list(ctx)?;
                    return Ok(Rvalue::Aggregate(AggregateKind::Record(sort), ops));
                }
                "mkvariant" => {
                    self.bump();
                    let (name, span) = self.expect_ident("variant name")?;
                    let Some(sort) = self.lookup_decl(&name).cloned() else {
                        return self.error(&span, format!("unknown sort `{name}`"));
                    };
                    let Sort::Variant { ref arms, .. } = sort else {
                        return self.error(&span, format!("`{name}` is not a variant"));
                    };
                    self.expect(Tok::Dot)?;
                    let (arm_name, aspan) = self.expect_ident("arm name")?;
                    let Some(arm) = arms.iter().position(|(n, _)| *n == arm_name) else {
                        return self
                            .error(&aspan, format!("variant {name} has no arm {arm_name}"));
                    };
                    let ops = self.parse_operand_list(ctx)?;
                    return Ok(Rvalue::Aggregate(
                        AggregateKind::Variant(sort.clone(), arm as u32),
                        ops,
                    ));
                }
                _ => {}
            }
        }
        // Plain operand.
        let op = self.parse_operand(ctx)?;
        Ok(Rvalue::Use(op))
    }

    // ---- statements and blocks ----

    fn at_terminator(&self) -> bool {
        matches!(self.peek(), Tok::Ident(s)
            if matches!(s.as_str(), "goto" | "br" | "ret" | "panic" | "unreachable"))
    }

    fn parse_terminator(&mut self, ctx: &mut FnCtx) -> PResult<RawTerm> {
        let start = self.here();
        let (word, _) = self.expect_ident("terminator")?;
        let spanned = |p: &Parser| {
            let mut s = start.clone();
            let e = p.prev_span();
            s.end_line = e.end_line;
            s.end_col = e.end_col;
            s
        };
        match word.as_str() {
            "goto" => {
                let (l, _) = self.expect_name("block label")?;
                Ok(RawTerm::Goto(l, spanned(self)))
            }
            "br" => {
                let c = self.parse_operand(ctx)?;
                let (t, _) = self.expect_name("block label")?;
                let (e, _) = self.expect_name("block label")?;
                Ok(RawTerm::Branch(c, t, e, spanned(self)))
            }
            "ret" => {
                let v = self.parse_operand(ctx)?;
                Ok(RawTerm::Return(v, spanned(self)))
            }
            "panic" => {
                let m = self.expect_str("panic message")?;
                Ok(RawTerm::Panic(m, spanned(self)))
            }
            "unreachable" => Ok(RawTerm::Unreachable(spanned(self))),
            other => {
                let msg = format!("expected a terminator, found `{other}`");
                self.error(&start, msg)
            }
        }
    }

    fn parse_stmt(&mut self, ctx: &mut FnCtx) -> PResult<Stmt> {
        let start = self.here();
        let spanned = |p: &Parser| {
            let mut s = start.clone();
            let e = p.prev_span();
            s.end_line = e.end_line;
            s.end_col = e.end_col;
            s
        };
        if let Tok::Ident(word) = self.peek().clone() {
            match word.as_str() {
                "store" => {
                    self.bump();
                    let r = self.parse_operand(ctx)?;
                    self.expect(Tok::Comma)?;
                    let v = self.parse_operand(ctx)?;
                    return Ok(Stmt {
                        kind: StmtKind::Store(r, v),
                        span: spanned(self),
                    });
                }
                "assume" => {
                    self.bump();
                    let c = self.parse_operand(ctx)?;
                    return Ok(Stmt {
                        kind: StmtKind::Assume(c),
                        span: spanned(self),
                    });
                }
                "assert" => {
                    self.bump();
                    let c = self.parse_operand(ctx)?;
                    let msg = match self.peek() {
                        Tok::Str(_) => Some(self.expect_str("assert message")?),
                        _ => None,
                    };
                    return Ok(Stmt {
                        kind: StmtKind::Assert(c, msg),
                        span: spanned(self),
                    });
                }
                "enable_spec" => {
                    self.bump();
                    let (name, _) = self.expect_name("spec function name")?;
                    return Ok(Stmt {
                        kind: StmtKind::EnableSpec(name),
                        span: spanned(self),
                    });
                }
                "nop" => {
                    self.bump();
                    return Ok(Stmt {
                        kind: StmtKind::Nop,
                        span: spanned(self),
                    });
                }
                _ => {}
            }
        }
        // `IDENT = rvalue` or `IDENT = symbolic sort "name"`.
        let (name, nspan) = self.expect_name("statement")?;
        let dst = ctx.local(&name, &nspan);
        self.expect(Tok::Assign)?;
        if self.eat_ident("symbolic") {
            let sort = self.parse_sort()?;
            let sym = self.expect_str("symbol name")?;
            let span = spanned(self);
            if ctx.local_sorts[dst.0 as usize].is_none() {
                ctx.local_sorts[dst.0 as usize] = Some(sort.clone());
            }
            return Ok(Stmt {
                kind: StmtKind::SymbolicIntro(dst, sort, sym),
                span,
            });
        }
        let rv = self.parse_rvalue(ctx)?;
        Ok(Stmt {
            kind: StmtKind::Assign(dst, rv),
            span: spanned(self),
        })
    }

    /// Returns the function plus its per-local inferred-sort table and
    /// first-use spans, consumed by the inference fixpoint afterwards.
    fn parse_function(&mut self, annotations: Vec<Annotation>) -> PResult<FnParse> {
        let fn_kw = self.here();
        self.bump(); // `fn`
        let (name, _) = self.expect_name("function name")?;
        self.expect(Tok::LParen)?;
        let mut ctx = FnCtx {
            locals: Vec::new(),
            local_sorts: Vec::new(),
            local_spans: Vec::new(),
            by_name: HashMap::new(),
        };
        let mut params = Vec::new();
        if *self.peek() != Tok::RParen {
            loop {
                let (pname, pspan) = self.expect_name("parameter name")?;
                self.expect(Tok::Colon)?;
                let sort = self.parse_sort()?;
                let id = ctx.local(&pname, &pspan);
                if id.0 as usize != params.len() {
                    return self.error(&pspan, format!("duplicate parameter `{pname}`"));
                }
                ctx.local_sorts[id.0 as usize] = Some(sort.clone());
                params.push(LocalDecl { name: pname, sort });
                if !matches!(self.peek(), Tok::Comma) {
                    break;
                }
                self.bump();
            }
        }
        self.expect(Tok::RParen)?;
        self.expect(Tok::Arrow)?;
        let ret_sort = self.parse_sort()?;
        self.expect(Tok::LBrace)?;

        let mut block_names = Vec::new();
        let mut raw_blocks: Vec<(Vec<Stmt>, RawTerm)> = Vec::new();
        loop {
            if *self.peek() == Tok::RBrace {
                break;
            }
            if *self.peek() == Tok::Eof {
                let span = self.here();
                return self.error(&span, "unterminated function body");
            }
            let (label, lspan) = self.expect_name("block label")?;
            self.expect(Tok::Colon)?;
            if block_names.contains(&label) {
                return self.error(&lspan, format!("duplicate block label `{label}`"));
            }
            block_names.push(label);
            let mut stmts = Vec::new();
            let term = loop {
                if self.at_terminator() {
                    break self.parse_terminator(&mut ctx)?;
                }
                if matches!(self.peek(), Tok::RBrace | Tok::Eof)
                    || (matches!(self.peek(), Tok::Ident(_)) && *self.peek2() == Tok::Colon)
                {
                    let span = self.here();
                    return self.error(&span, "block is missing a terminator");
                }
                stmts.push(self.parse_stmt(&mut ctx)?);
            };
            raw_blocks.push((stmts, term));
        }
        self.expect(Tok::RBrace)?;
        if raw_blocks.is_empty() {
            return self.error(&fn_kw, format!("function {name} has no blocks"));
        }

        // Resolve labels.
        let label_id = |p: &mut Parser, l: &str, span: &SourceSpan| -> PResult<BlockId> {
            match block_names.iter().position(|n| n == l) {
                Some(i) => Ok(BlockId(i as u32)),
                None => p.error(span, format!("unknown block label `{l}`")),
            }
        };
        let mut blocks = Vec::new();
        for (stmts, raw) in raw_blocks {
            let term = match raw {
                RawTerm::Goto(l, span) => {
                    let t = label_id(self, &l, &span)?;
                    Terminator {
                        kind: TermKind::Goto(t),
                        span,
                    }
                }
                RawTerm::Branch(c, lt, le, span) => {
                    let t = label_id(self, &lt, &span)?;
                    let e = label_id(self, &le, &span)?;
                    Terminator {
                        kind: TermKind::Branch(c, t, e),
                        span,
                    }
                }
                RawTerm::Return(v, span) => Terminator {
                    kind: TermKind::Return(v),
                    span,
                },
                RawTerm::Panic(m, span) => Terminator {
                    kind: TermKind::Panic(m),
                    span,
                },
                RawTerm::Unreachable(span) => Terminator {
                    kind: TermKind::Unreachable,
                    span,
                },
            };
            blocks.push(Block { stmts, term });
        }

        let mut locals = ctx.locals;
        for (i, s) in ctx.local_sorts.iter().enumerate() {
            if let Some(s) = s {
                locals[i].sort = s.clone();
            }
        }
        Ok(FnParse {
            function: Function {
                name,
                annotations,
                params,
                ret_sort,
                locals,
                blocks,
                block_names,
                span: fn_kw,
            },
            local_sorts: ctx.local_sorts,
            local_spans: ctx.local_spans,
        })
    }

    fn parse_annotation(&mut self) -> PResult<Annotation> {
        self.expect(Tok::Hash)?;
        self.expect(Tok::LBracket)?;
        let (word, span) = self.expect_ident("annotation")?;
        let a = match word.as_str() {
            "test" => Annotation::Test,
            "spec_for" => {
                self.expect(Tok::LParen)?;
                let (target, _) = self.expect_name("target function")?;
                self.expect(Tok::RParen)?;
                Annotation::SpecFor(target)
            }
            other => {
                let msg = format!("unknown annotation `{other}`");
                return self.error(&span, msg);
            }
        };
        self.expect(Tok::RBracket)?;
        Ok(a)
    }

    fn parse_sort_decl(&mut self) -> PResult<SortDecl> {
        let start = self.here();
        let is_record = self.is_ident("record");
        self.bump();
        let (name, _) = self.expect_name("sort name")?;
        self.expect(Tok::LBrace)?;
        let mut fields = Vec::new();
        while *self.peek() != Tok::RBrace {
            let (fname, _) = self.expect_name(if is_record { "field name" } else { "arm name" })?;
            if is_record {
                self.expect(Tok::Colon)?;
                let sort = self.parse_sort()?;
                fields.push((fname, sort));
            } else {
                self.expect(Tok::LParen)?;
                let sort = self.parse_sort()?;
                self.expect(Tok::RParen)?;
                fields.push((fname, sort));
            }
            if matches!(self.peek(), Tok::Comma) {
                self.bump();
            }
        }
        self.expect(Tok::RBrace)?;
        if fields.is_empty() {
            return self.error(&start, format!("declaration of `{name}` has no members"));
        }
        let sort = if is_record {
            Sort::Record {
                name: name.clone(),
                fields,
            }
        } else {
            Sort::Variant {
                name: name.clone(),
                arms: fields,
            }
        };
        Ok(SortDecl {
            name,
            sort,
            span: start,
        })
    }

    /// Skip to the next top-level item after an error.
    fn synchronize(&mut self) {
        let mut depth = 0usize;
        loop {
            match self.peek() {
                Tok::Eof => return,
                Tok::LBrace => {
                    depth += 1;
                    self.bump();
                }
                Tok::RBrace => {
                    depth = depth.saturating_sub(1);
                    self.bump();
                    if depth == 0 {
                        return;
                    }
                }
                Tok::Ident(s)
                    if depth == 0 && matches!(s.as_str(), "fn" | "record" | "variant") =>
                {
                    return
                }
                Tok::Hash if depth == 0 => return,
                _ => {
                    self.bump();
                }
            }
        }
    }
}

// ---- Local sort inference ---------------------------------------------------

/// Fill in the sorts of locals that are not parameters or symbolic
/// introductions: each comes from its first assignment, iterated to a
/// fixpoint so assignment order in text does not matter.
fn infer_local_sorts(
    prog: &mut Program,
    pending: &mut [Vec<Option<Sort>>],
    spans: &[Vec<SourceSpan>],
) -> Vec<Diagnostic> {
    let mut errors = Vec::new();
    loop {
        let mut changed = false;
        for fi in 0..prog.functions.len() {
            let nblocks = prog.functions[fi].blocks.len();
            for b in 0..nblocks {
                let nstmts = prog.functions[fi].blocks[b].stmts.len();
                for s in 0..nstmts {
                    let StmtKind::Assign(dst, rv) = &prog.functions[fi].blocks[b].stmts[s].kind
                    else {
                        continue;
                    };
                    let dst = *dst;
                    if pending[fi][dst.0 as usize].is_some() {
                        continue;
                    }
                    let rv = rv.clone();
                    let ready = crate::ir::rvalue_reads(&rv)
                        .into_iter()
                        .all(|l| pending[fi][l.0 as usize].is_some());
                    if !ready {
                        continue;
                    }
                    // All read locals are typed; sync them into the function
                    // so rvalue_sort sees real sorts.
                    sync_locals(&mut prog.functions[fi], &pending[fi]);
                    match crate::ir::rvalue_sort(prog, &prog.functions[fi], &rv) {
                        Ok(sort) => {
                            pending[fi][dst.0 as usize] = Some(sort);
                            changed = true;
                        }
                        Err(e) => {
                            let span = prog.functions[fi].blocks[b].stmts[s].span.clone();
                            errors.push(Diagnostic::new(&span, e));
                            // Avoid cascading reports for the same local.
                            pending[fi][dst.0 as usize] = Some(Sort::Unit);
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    for fi in 0..prog.functions.len() {
        for (li, sort) in pending[fi].iter().enumerate() {
            if sort.is_none() {
                errors.push(Diagnostic::new(
                    &spans[fi][li],
                    format!(
                        "cannot infer the sort of `{}` (never assigned)",
                        prog.functions[fi].locals[li].name
                    ),
                ));
            }
        }
        let p = pending[fi].clone();
        sync_locals(&mut prog.functions[fi], &p);
    }
    errors
}

fn sync_locals(f: &mut Function, sorts: &[Option<Sort>]) {
    for (i, s) in sorts.iter().enumerate() {
        if let Some(s) = s {
            f.locals[i].sort = s.clone();
        }
    }
}

// ---- Entry points -------------------------------------------------------------

/// Parse a `.cir` file. Either a fully typed program (local sorts
/// inferred, labels resolved) or the list of everything wrong with it.
pub fn parse(file: &str, text: &str) -> Result<Program, Vec<Diagnostic>> {
    let toks = lex(file, text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        decls: Vec::new(),
        errors: Vec::new(),
    };

    let mut parses: Vec<FnParse> = Vec::new();
    loop {
        match p.peek().clone() {
            Tok::Eof => break,
            Tok::Ident(s) if s == "record" || s == "variant" => match p.parse_sort_decl() {
                Ok(d) => {
                    if p.decls.iter().any(|x| x.name == d.name) {
                        p.errors
                            .push(Diagnostic::new(&d.span, format!("duplicate sort `{}`", d.name)));
                    } else {
                        p.decls.push(d);
                    }
                }
                Err(ParseBail) => p.synchronize(),
            },
            Tok::Ident(s) if s == "fn" => match p.parse_function(Vec::new()) {
                Ok(fp) => parses.push(fp),
                Err(ParseBail) => p.synchronize(),
            },
            Tok::Hash => {
                let mut annotations = Vec::new();
                let mut ok = true;
                while *p.peek() == Tok::Hash {
                    match p.parse_annotation() {
                        Ok(a) => annotations.push(a),
                        Err(ParseBail) => {
                            ok = false;
                            p.synchronize();
                            break;
                        }
                    }
                }
                if ok {
                    if p.is_ident("fn") {
                        match p.parse_function(annotations) {
                            Ok(fp) => parses.push(fp),
                            Err(ParseBail) => p.synchronize(),
                        }
                    } else {
                        let span = p.here();
                        p.errors
                            .push(Diagnostic::new(&span, "annotations must precede a function"));
                        p.synchronize();
                    }
                }
            }
            other => {
                let span = p.here();
                p.errors.push(Diagnostic::new(
                    &span,
                    format!("expected a declaration or function, found {}", other.describe()),
                ));
                p.synchronize();
            }
        }
    }

    let mut pending: Vec<Vec<Option<Sort>>> = Vec::new();
    let mut spans: Vec<Vec<SourceSpan>> = Vec::new();
    let mut functions = Vec::new();
    for fp in parses {
        functions.push(fp.function);
        pending.push(fp.local_sorts);
        spans.push(fp.local_spans);
    }
    let mut prog = Program {
        sort_decls: p.decls.clone(),
        functions,
    };
    if !p.errors.is_empty() {
        return Err(p.errors);
    }

    let errors = infer_local_sorts(&mut prog, &mut pending, &spans);
    if errors.is_empty() {
        Ok(prog)
    } else {
        Err(errors)
    }
}

// ---- Printer ------------------------------------------------------------------

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            other => out.push(other),
        }
    }
    out
}

fn print_operand(f: &Function, op: &Operand) -> String {
    match op {
        Operand::Local(l) => f.local_name(*l).to_string(),
        Operand::ConstBool(b) => b.to_string(),
        Operand::ConstBv { width, value } => format!("{value}:bv{width}"),
        Operand::Unit => "()".to_string(),
    }
}

fn print_operands(f: &Function, ops: &[Operand]) -> String {
    ops.iter().map(|o| print_operand(f, o)).collect::<Vec<_>>().join(", ")
}

fn print_rvalue(f: &Function, rv: &Rvalue) -> String {
    match rv {
        Rvalue::Use(op) => print_operand(f, op),
        Rvalue::UnOp(UnOpKind::Not, a) => format!("not {}", print_operand(f, a)),
        Rvalue::UnOp(UnOpKind::Neg, a) => format!("neg {}", print_operand(f, a)),
        Rvalue::UnOp(UnOpKind::ZeroExtend(w), a) => {
            format!("zext bv{w} {}", print_operand(f, a))
        }
        Rvalue::UnOp(UnOpKind::Truncate(w), a) => {
            format!("trunc bv{w} {}", print_operand(f, a))
        }
        Rvalue::BinOp(k, a, b) => format!(
            "{} {}, {}",
            binop_token(*k),
            print_operand(f, a),
            print_operand(f, b)
        ),
        Rvalue::Checked(k, a, b) => format!(
            "{} {}, {}",
            checked_token(*k),
            print_operand(f, a),
            print_operand(f, b)
        ),
        Rvalue::Aggregate(AggregateKind::Tuple, ops) => {
            format!("tuple ({})", print_operands(f, ops))
        }
        Rvalue::Aggregate(AggregateKind::Array(elem), ops) => {
            format!("mkarray {elem} [{}]", print_operands(f, ops))
        }
        Rvalue::Aggregate(AggregateKind::Record(sort), ops) => {
            format!("mkrecord {sort} ({})", print_operands(f, ops))
        }
        Rvalue::Aggregate(AggregateKind::Variant(sort, arm), ops) => {
            let arm_name = match sort {
                Sort::Variant { arms, .. } => arms[*arm as usize].0.clone(),
                _ => unreachable!("variant aggregate carries a variant sort"),
            };
            format!("mkvariant {sort}.{arm_name} ({})", print_operands(f, ops))
        }
        Rvalue::Project(a, Selector::Tuple(i)) => format!("field {}.{i}", print_operand(f, a)),
        Rvalue::Project(a, Selector::Named(n)) => format!("field {}.{n}", print_operand(f, a)),
        Rvalue::Project(a, Selector::Tag) => format!("tag {}", print_operand(f, a)),
        Rvalue::Alloc(sort, init) => format!("alloc {sort} {}", print_operand(f, init)),
        Rvalue::Load(r) => format!("load {}", print_operand(f, r)),
        Rvalue::RefProject(r, RefSelector::Tuple(i)) => {
            format!("ref_field {}.{i}", print_operand(f, r))
        }
        Rvalue::RefProject(r, RefSelector::Named(n)) => {
            format!("ref_field {}.{n}", print_operand(f, r))
        }
        Rvalue::RefProject(r, RefSelector::Elem(i)) => {
            format!("ref_index {}[{}]", print_operand(f, r), print_operand(f, i))
        }
        Rvalue::Call(name, args) => format!("call {name}({})", print_operands(f, args)),
        Rvalue::Index(a, i) => format!("index {}[{}]", print_operand(f, a), print_operand(f, i)),
    }
}

/// Canonical deterministic rendering; `parse(print(p))` reconstructs `p`
/// modulo spans.
pub fn print(prog: &Program) -> String {
    let mut out = String::new();
    for d in &prog.sort_decls {
        match &d.sort {
            Sort::Record { fields, .. } => {
                let body = fields
                    .iter()
                    .map(|(n, s)| format!("{n}: {s}"))
                    .collect::<Vec<_>>()
                    .join(", ");
                let _ = writeln!(out, "record {} {{ {body} }}", d.name);
            }
            Sort::Variant { arms, .. } => {
                let body = arms
                    .iter()
                    .map(|(n, s)| format!("{n}({s})"))
                    .collect::<Vec<_>>()
                    .join(", ");
                let _ = writeln!(out, "variant {} {{ {body} }}", d.name);
            }
            other => {
                let _ = writeln!(out, "// unsupported declaration {other}");
            }
        }
    }
    for f in &prog.functions {
        if !out.is_empty() {
            out.push('\n');
        }
        for a in &f.annotations {
            match a {
                Annotation::Test => out.push_str("#[test]\n"),
                Annotation::SpecFor(t) => {
                    let _ = writeln!(out, "#[spec_for({t})]");
                }
            }
        }
        let params = f
            .params
            .iter()
            .map(|p| format!("{}: {}", p.name, p.sort))
            .collect::<Vec<_>>()
            .join(", ");
        let _ = writeln!(out, "fn {}({params}) -> {} {{", f.name, f.ret_sort);
        for (bi, block) in f.blocks.iter().enumerate() {
            let _ = writeln!(out, "{}:", f.block_names[bi]);
            for stmt in &block.stmts {
                let line = match &stmt.kind {
                    StmtKind::Assign(dst, rv) => {
                        format!("{} = {}", f.local_name(*dst), print_rvalue(f, rv))
                    }
                    StmtKind::Store(r, v) => {
                        format!("store {}, {}", print_operand(f, r), print_operand(f, v))
                    }
                    StmtKind::SymbolicIntro(dst, sort, name) => format!(
                        "{} = symbolic {sort} \"{}\"",
                        f.local_name(*dst),
                        escape(name)
                    ),
                    StmtKind::Assume(c) => format!("assume {}", print_operand(f, c)),
                    StmtKind::Assert(c, None) => format!("assert {}", print_operand(f, c)),
                    StmtKind::Assert(c, Some(m)) => {
                        format!("assert {} \"{}\"", print_operand(f, c), escape(m))
                    }
                    StmtKind::EnableSpec(n) => format!("enable_spec {n}"),
                    StmtKind::Nop => "nop".to_string(),
                };
                let _ = writeln!(out, "  {line}");
            }
            let term = match &block.term.kind {
                TermKind::Goto(t) => format!("goto {}", f.block_name(*t)),
                TermKind::Branch(c, t, e) => format!(
                    "br {} {} {}",
                    print_operand(f, c),
                    f.block_name(*t),
                    f.block_name(*e)
                ),
                TermKind::Return(v) => format!("ret {}", print_operand(f, v)),
                TermKind::Panic(m) => format!("panic \"{}\"", escape(m)),
                TermKind::Unreachable => "unreachable".to_string(),
            };
            let _ = writeln!(out, "  {term}");
        }
        out.push_str("}\n");
    }
    if prog.sort_decls.is_empty() && prog.functions.is_empty() {
        out.push_str("// empty program\n");
    }
    out
}

/// Reset every span in the program; used to compare parses structurally.
pub fn strip_spans(prog: &mut Program) {
    for d in &mut prog.sort_decls {
        d.span = SourceSpan::default();
    }
    for f in &mut prog.functions {
        f.span = SourceSpan::default();
        for b in &mut f.blocks {
            for s in &mut b.stmts {
                s.span = SourceSpan::default();
            }
            b.term.span = SourceSpan::default();
        }
    }
}
