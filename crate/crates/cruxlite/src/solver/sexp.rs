//! Minimal S-expression reader, used to parse external solver replies and,
//! in tests, to interpret emitted query scripts.

/// One S-expression: an atom or a parenthesized list. Quoted atoms
/// (`|...|`) are stored without their delimiters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

impl Sexp {
    pub(crate) fn atom(&self) -> Option<&str> {
        match self {
            Sexp::Atom(a) => Some(a),
            Sexp::List(_) => None,
        }
    }

    pub(crate) fn list(&self) -> Option<&[Sexp]> {
        match self {
            Sexp::Atom(_) => None,
            Sexp::List(es) => Some(es),
        }
    }
}

enum Tok {
    Open,
    Close,
    Atom(String),
}

fn tokenize(input: &str) -> Result<Vec<Tok>, String> {
    let mut toks = Vec::new();
    let mut chars = input.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            _ if c.is_whitespace() => {
                chars.next();
            }
            ';' => {
                for ch in chars.by_ref() {
                    if ch == '\n' {
                        break;
                    }
                }
            }
            '(' => {
                chars.next();
                toks.push(Tok::Open);
            }
            ')' => {
                chars.next();
                toks.push(Tok::Close);
            }
            '|' => {
                chars.next();
                let mut a = String::new();
                loop {
                    match chars.next() {
                        Some('|') => break,
                        Some(ch) => a.push(ch),
                        None => return Err("unterminated |quoted| atom".into()),
                    }
                }
                toks.push(Tok::Atom(a));
            }
            '"' => {
                chars.next();
                let mut a = String::new();
                loop {
                    match chars.next() {
                        Some('"') => {
                            // A doubled quote is the SMT-LIB escape for one
                            // embedded quote character.
                            if chars.peek() == Some(&'"') {
                                chars.next();
                                a.push('"');
                            } else {
                                break;
                            }
                        }
                        Some(ch) => a.push(ch),
                        None => return Err("unterminated string literal".into()),
                    }
                }
                toks.push(Tok::Atom(a));
            }
            _ => {
                let mut a = String::new();
                while let Some(&ch) = chars.peek() {
                    if ch.is_whitespace() || matches!(ch, '(' | ')' | ';' | '|' | '"') {
                        break;
                    }
                    a.push(ch);
                    chars.next();
                }
                toks.push(Tok::Atom(a));
            }
        }
    }
    Ok(toks)
}

/// Parse a whole input into a sequence of top-level S-expressions.
pub(crate) fn parse_all(input: &str) -> Result<Vec<Sexp>, String> {
    let toks = tokenize(input)?;
    let mut stack: Vec<Vec<Sexp>> = vec![Vec::new()];
    for t in toks {
        match t {
            Tok::Open => stack.push(Vec::new()),
            Tok::Close => {
                let done = stack.pop().ok_or("unbalanced ')'")?;
                let top = stack.last_mut().ok_or("unbalanced ')'")?;
                top.push(Sexp::List(done));
            }
            Tok::Atom(a) => {
                let top = stack.last_mut().ok_or("unbalanced ')'")?;
                top.push(Sexp::Atom(a));
            }
        }
    }
    if stack.len() != 1 {
        return Err(format!("{} unclosed '('", stack.len() - 1));
    }
    Ok(stack.pop().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atom(s: &str) -> Sexp {
        Sexp::Atom(s.into())
    }

    #[test]
    fn parses_atoms_lists_and_nesting() {
        let got = parse_all("sat (a (b c) ()) d").unwrap();
        assert_eq!(
            got,
            vec![
                atom("sat"),
                Sexp::List(vec![
                    atom("a"),
                    Sexp::List(vec![atom("b"), atom("c")]),
                    Sexp::List(vec![]),
                ]),
                atom("d"),
            ]
        );
    }

    #[test]
    fn quoted_atoms_keep_spaces_and_bangs() {
        let got = parse_all("(|x!0| |a b|)").unwrap();
        assert_eq!(got, vec![Sexp::List(vec![atom("x!0"), atom("a b")])]);
    }

    #[test]
    fn comments_run_to_end_of_line() {
        let got = parse_all("; header\n(a ; trailing\n b)\n").unwrap();
        assert_eq!(got, vec![Sexp::List(vec![atom("a"), atom("b")])]);
    }

    #[test]
    fn string_literals_become_atoms() {
        let got = parse_all("(error \"line 1: it broke\")").unwrap();
        assert_eq!(
            got,
            vec![Sexp::List(vec![atom("error"), atom("line 1: it broke")])]
        );
    }

    #[test]
    fn unbalanced_input_is_an_error() {
        assert!(parse_all("(a (b)").is_err());
        assert!(parse_all("a)").is_err());
        assert!(parse_all("(|x").is_err());
    }

    #[test]
    fn parses_a_solver_model_block() {
        let text = "(\n  (define-fun |x!0| () (_ BitVec 8) #x2a)\n)\n";
        let got = parse_all(text).unwrap();
        assert_eq!(got.len(), 1);
        let inner = got[0].list().unwrap();
        assert_eq!(inner.len(), 1);
        let def = inner[0].list().unwrap();
        assert_eq!(def[0].atom(), Some("define-fun"));
        assert_eq!(def[1].atom(), Some("x!0"));
        assert_eq!(def[4].atom(), Some("#x2a"));
    }
}
