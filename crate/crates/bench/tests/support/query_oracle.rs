//! Standalone evaluator for rendered extraction queries, used as an
//! independent oracle against the tree and its regions.

use std::iter::Peekable;
use std::str::Chars;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Op {
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    pub attribute: String,
    pub op: Op,
    pub value: f64,
}

/// Disjunction of conjunctions, or a constant.
#[derive(Clone, Debug, PartialEq)]
pub enum Query {
    True,
    False,
    Or(Vec<Vec<Condition>>),
}

impl Query {
    /// `attributes[j]` names coordinate `j` of `raw`.
    pub fn matches(&self, attributes: &[String], raw: &[f64]) -> bool {
        match self {
            Query::True => true,
            Query::False => false,
            Query::Or(terms) => terms.iter().any(|conj| {
                conj.iter().all(|c| {
                    let j = attributes
                        .iter()
                        .position(|a| *a == c.attribute)
                        .unwrap_or_else(|| panic!("unknown attribute {}", c.attribute));
                    let v = raw[j];
                    match c.op {
                        Op::Lt => v < c.value,
                        Op::Le => v <= c.value,
                        Op::Gt => v > c.value,
                        Op::Ge => v >= c.value,
                    }
                })
            }),
        }
    }
}

struct Lexer<'a> {
    chars: Peekable<Chars<'a>>,
}

impl Lexer<'_> {
    fn skip_ws(&mut self) {
        while self.chars.peek().is_some_and(|c| c.is_whitespace()) {
            self.chars.next();
        }
    }

    fn expect(&mut self, want: char) -> Result<(), String> {
        self.skip_ws();
        match self.chars.next() {
            Some(c) if c == want => Ok(()),
            other => Err(format!("expected {want:?}, found {other:?}")),
        }
    }

    fn word(&mut self) -> String {
        self.skip_ws();
        let mut w = String::new();
        while let Some(&c) = self.chars.peek() {
            if c.is_ascii_alphanumeric() || c == '_' {
                w.push(c);
                self.chars.next();
            } else {
                break;
            }
        }
        w
    }

    fn name(&mut self) -> Result<String, String> {
        self.skip_ws();
        if self.chars.peek() == Some(&'"') {
            self.chars.next();
            let mut s = String::new();
            loop {
                match self.chars.next() {
                    Some('"') if self.chars.peek() == Some(&'"') => {
                        self.chars.next();
                        s.push('"');
                    }
                    Some('"') => return Ok(s),
                    Some(c) => s.push(c),
                    None => return Err("unterminated quoted name".into()),
                }
            }
        }
        let w = self.word();
        if w.is_empty() {
            Err("expected attribute name".into())
        } else {
            Ok(w)
        }
    }

    fn op(&mut self) -> Result<Op, String> {
        self.skip_ws();
        let first = self.chars.next().ok_or("expected operator")?;
        let eq = self.chars.peek() == Some(&'=');
        if eq {
            self.chars.next();
        }
        match (first, eq) {
            ('<', false) => Ok(Op::Lt),
            ('<', true) => Ok(Op::Le),
            ('>', false) => Ok(Op::Gt),
            ('>', true) => Ok(Op::Ge),
            _ => Err(format!("bad operator starting {first:?}")),
        }
    }

    fn number(&mut self) -> Result<f64, String> {
        self.skip_ws();
        let mut s = String::new();
        while let Some(&c) = self.chars.peek() {
            if c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E') {
                s.push(c);
                self.chars.next();
            } else {
                break;
            }
        }
        s.parse().map_err(|e| format!("bad number {s:?}: {e}"))
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.chars.peek().is_none()
    }
}

pub fn parse(text: &str) -> Result<Query, String> {
    match text.trim() {
        "TRUE" => return Ok(Query::True),
        "FALSE" => return Ok(Query::False),
        _ => {}
    }
    let mut lx = Lexer { chars: text.chars().peekable() };
    let mut terms = Vec::new();
    loop {
        lx.expect('(')?;
        let mut conj = Vec::new();
        loop {
            let attribute = lx.name()?;
            let op = lx.op()?;
            let value = lx.number()?;
            conj.push(Condition { attribute, op, value });
            lx.skip_ws();
            if lx.chars.peek() == Some(&')') {
                lx.chars.next();
                break;
            }
            let w = lx.word();
            if w != "and" {
                return Err(format!("expected 'and', found {w:?}"));
            }
        }
        terms.push(conj);
        if lx.at_end() {
            break;
        }
        let w = lx.word();
        if w != "or" {
            return Err(format!("expected 'or', found {w:?}"));
        }
    }
    Ok(Query::Or(terms))
}
