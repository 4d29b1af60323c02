//! A tiny expression language for custom coefficients.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary ('*' unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' number)?
//! atom   := number | 'u' | 'sqrt' '(' expr ')' | '(' expr ')'
//! ```
//!
//! This covers polynomials in `u`, `sqrt(u)` and real powers `u^r`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Var,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Pow(Box<Node>, f64),
    Sqrt(Box<Node>),
}

impl Node {
    fn eval(&self, u: f64) -> f64 {
        match self {
            Node::Const(c) => *c,
            Node::Var => u,
            Node::Neg(a) => -a.eval(u),
            Node::Add(a, b) => a.eval(u) + b.eval(u),
            Node::Sub(a, b) => a.eval(u) - b.eval(u),
            Node::Mul(a, b) => a.eval(u) * b.eval(u),
            Node::Pow(a, p) => {
                let base = a.eval(u);
                if base == 0.0 && *p > 0.0 {
                    0.0
                } else {
                    base.powf(*p)
                }
            }
            Node::Sqrt(a) => a.eval(u).max(0.0).sqrt(),
        }
    }
}

/// A parsed coefficient expression in the single variable `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let root = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Config(format!(
                "unexpected trailing input in expression {src:?}"
            )));
        }
        Ok(Self {
            source: src.trim().to_string(),
            root,
        })
    }

    pub fn eval(&self, u: f64) -> f64 {
        self.root.eval(u)
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

impl FromStr for Expr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    U,
    Sqrt,
    Plus,
    Minus,
    Star,
    Caret,
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' => i += 1,
            '+' => {
                out.push(Tok::Plus);
                i += 1
            }
            '-' => {
                out.push(Tok::Minus);
                i += 1
            }
            '*' => {
                out.push(Tok::Star);
                i += 1
            }
            '^' => {
                out.push(Tok::Caret);
                i += 1
            }
            '(' => {
                out.push(Tok::LParen);
                i += 1
            }
            ')' => {
                out.push(Tok::RParen);
                i += 1
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                // exponent part
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut k = i + 1;
                    if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                        k += 1;
                    }
                    if k < chars.len() && chars[k].is_ascii_digit() {
                        i = k;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let s: String = chars[start..i].iter().collect();
                let v = s
                    .parse()
                    .map_err(|_| Error::Config(format!("bad number {s:?} in {src:?}")))?;
                out.push(Tok::Num(v));
            }
            c if c.is_ascii_alphabetic() => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                match word.as_str() {
                    "u" => out.push(Tok::U),
                    "sqrt" => out.push(Tok::Sqrt),
                    _ => {
                        return Err(Error::Config(format!(
                            "unknown identifier {word:?} in {src:?}"
                        )))
                    }
                }
            }
            _ => return Err(Error::Config(format!("unexpected {c:?} in {src:?}"))),
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

    fn expect(&mut self, want: Tok) -> Result<()> {
        match self.next() {
            Some(t) if t == want => Ok(()),
            other => Err(Error::Config(format!("expected {want:?}, found {other:?}"))),
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Star) = self.peek() {
            self.pos += 1;
            lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        if let Some(Tok::Minus) = self.peek() {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if let Some(Tok::Caret) = self.peek() {
            self.pos += 1;
            let neg = matches!(self.peek(), Some(Tok::Minus));
            if neg {
                self.pos += 1;
            }
            match self.next() {
                Some(Tok::Num(p)) => Ok(Node::Pow(Box::new(base), if neg { -p } else { p })),
                other => Err(Error::Config(format!(
                    "exponent must be a number, found {other:?}"
                ))),
            }
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Node> {
        match self.next() {
            Some(Tok::Num(v)) => Ok(Node::Const(v)),
            Some(Tok::U) => Ok(Node::Var),
            Some(Tok::Sqrt) => {
                self.expect(Tok::LParen)?;
                let inner = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(Node::Sqrt(Box::new(inner)))
            }
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            other => Err(Error::Config(format!("unexpected token {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_catalog_like_expressions() {
        let e = Expr::parse("sqrt(u + u^2)").unwrap();
        assert!((e.eval(3.0) - 12f64.sqrt()).abs() < 1e-15);
        let e = Expr::parse("1 - u").unwrap();
        assert_eq!(e.eval(3.0), -2.0);
        let e = Expr::parse("u^0.3 + u").unwrap();
        assert!((e.eval(2.0) - (2f64.powf(0.3) + 2.0)).abs() < 1e-15);
        assert_eq!(e.eval(0.0), 0.0);
        let e = Expr::parse("-0.5*u").unwrap();
        assert_eq!(e.eval(4.0), -2.0);
        let e = Expr::parse("2.5e-1 * (u - 1) * u").unwrap();
        assert_eq!(e.eval(3.0), 1.5);
        let e = Expr::parse("-u^2").unwrap();
        assert_eq!(e.eval(3.0), -9.0);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Expr::parse("exp(u)").is_err());
        assert!(Expr::parse("u +").is_err());
        assert!(Expr::parse("(u").is_err());
        assert!(Expr::parse("u ^ u").is_err());
        assert!(Expr::parse("u u").is_err());
    }
}
