//! Requirements expressions: a small subset of the ClassAd syntax.
//!
//! ```text
//! expr    := conj ( "||" conj )*
//! conj    := primary ( "&&" primary )*
//! primary := "(" expr ")" | ident ("==" | "!=") string | "true" | "false"
//! ```
//!
//! Strings are double-quoted with `\"` and `\\` escapes. Comparisons are
//! exact and case-sensitive; a missing attribute never equals anything.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Renders `(Name == "a") || (Name == "b")` in the given order.
pub fn render_requirements(nodes: &[String]) -> Result<String> {
    if nodes.is_empty() {
        return Err(Error::EmptyNodeSet);
    }
    Ok(nodes
        .iter()
        .map(|n| format!("(Name == {})", quote(n)))
        .collect::<Vec<_>>()
        .join(" || "))
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Expr {
    Const(bool),
    Cmp { attr: String, value: String, equal: bool },
    And(Vec<Expr>),
    Or(Vec<Expr>),
}

impl Expr {
    fn eval(&self, attrs: &BTreeMap<String, String>) -> bool {
        match self {
            Expr::Const(b) => *b,
            Expr::Cmp { attr, value, equal } => match attrs.get(attr) {
                Some(v) => (v == value) == *equal,
                None => false,
            },
            Expr::And(v) => v.iter().all(|e| e.eval(attrs)),
            Expr::Or(v) => v.iter().any(|e| e.eval(attrs)),
        }
    }
}

/// A parsed expression. The empty expression accepts every node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Requirements(Expr);

impl Requirements {
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Ok(Requirements(Expr::Const(true)));
        }
        let tokens = tokenize(text)?;
        let mut p = Parser { tokens, pos: 0 };
        let e = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::InvalidExpression(format!("unexpected token at position {}", p.pos)));
        }
        Ok(Requirements(e))
    }

    pub fn matches(&self, attrs: &BTreeMap<String, String>) -> bool {
        self.0.eval(attrs)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    LParen,
    RParen,
    Or,
    And,
    Eq,
    Ne,
    Ident(String),
    Str(String),
}

fn tokenize(text: &str) -> Result<Vec<Tok>> {
    let bad = |m: &str| Error::InvalidExpression(m.to_string());
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            ' ' | '\t' => {
                chars.next();
            }
            '(' => {
                chars.next();
                out.push(Tok::LParen);
            }
            ')' => {
                chars.next();
                out.push(Tok::RParen);
            }
            '|' | '&' | '=' | '!' => {
                chars.next();
                let next = chars.next();
                out.push(match (c, next) {
                    ('|', Some('|')) => Tok::Or,
                    ('&', Some('&')) => Tok::And,
                    ('=', Some('=')) => Tok::Eq,
                    ('!', Some('=')) => Tok::Ne,
                    _ => return Err(bad("unknown operator")),
                });
            }
            '"' => {
                chars.next();
                let mut s = String::new();
                loop {
                    match chars.next() {
                        Some('"') => break,
                        Some('\\') => s.push(chars.next().ok_or_else(|| bad("dangling escape"))?),
                        Some(ch) => s.push(ch),
                        None => return Err(bad("unterminated string")),
                    }
                }
                out.push(Tok::Str(s));
            }
            c if c.is_ascii_alphanumeric() || c == '_' => {
                let mut s = String::new();
                while let Some(&ch) = chars.peek() {
                    if ch.is_ascii_alphanumeric() || ch == '_' || ch == '.' {
                        s.push(ch);
                        chars.next();
                    } else {
                        break;
                    }
                }
                out.push(Tok::Ident(s));
            }
            other => return Err(bad(&format!("unexpected character {other:?}"))),
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut terms = vec![self.conj()?];
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            terms.push(self.conj()?);
        }
        Ok(if terms.len() == 1 { terms.pop().unwrap() } else { Expr::Or(terms) })
    }

    fn conj(&mut self) -> Result<Expr> {
        let mut terms = vec![self.primary()?];
        while self.peek() == Some(&Tok::And) {
            self.pos += 1;
            terms.push(self.primary()?);
        }
        Ok(if terms.len() == 1 { terms.pop().unwrap() } else { Expr::And(terms) })
    }

    fn primary(&mut self) -> Result<Expr> {
        let bad = |m: &str| Error::InvalidExpression(m.to_string());
        match self.next() {
            Some(Tok::LParen) => {
                let e = self.expr()?;
                match self.next() {
                    Some(Tok::RParen) => Ok(e),
                    _ => Err(bad("expected )")),
                }
            }
            Some(Tok::Ident(id)) if id == "true" => Ok(Expr::Const(true)),
            Some(Tok::Ident(id)) if id == "false" => Ok(Expr::Const(false)),
            Some(Tok::Ident(attr)) => {
                let equal = match self.next() {
                    Some(Tok::Eq) => true,
                    Some(Tok::Ne) => false,
                    _ => return Err(bad("expected == or !=")),
                };
                match self.next() {
                    Some(Tok::Str(value)) => Ok(Expr::Cmp { attr, value, equal }),
                    _ => Err(bad("expected a string literal")),
                }
            }
            _ => Err(bad("expected ( or an attribute name")),
        }
    }
}
