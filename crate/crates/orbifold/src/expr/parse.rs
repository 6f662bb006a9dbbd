//! Text syntax for expressions.
//!
//! ```text
//! expr   := term  (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := '-' factor | base ('^' ('-')? INT)?
//! base   := NUMBER | 'x'INT | FUNC '(' expr ')' | '(' expr ')'
//! FUNC   := 'sin' | 'cos' | 'exp' | 'sqrt'
//! ```
//!
//! Exponentiation binds tighter than unary minus, so `-x1^2` is `-(x1^2)`.
//! Integer literals (and quotients of them, via constant folding) become exact
//! rationals; literals with a decimal point or exponent, such as `0.25` or
//! `1e-3`, become floats. [`fmt::Display`] prints with the minimal
//! parenthesization that re-parses to the same tree, so `parse` and `print`
//! are mutually inverse on constructed expressions.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed};
use thiserror::Error;

use super::{Expr, Node, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at byte {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

fn err<T>(offset: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError { offset, message: message.into() })
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Int(BigInt),
    Float(f64),
    Var(u32),
    Func(Func),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'+' => {
                toks.push((Tok::Plus, i));
                i += 1;
            }
            b'-' => {
                toks.push((Tok::Minus, i));
                i += 1;
            }
            b'*' => {
                toks.push((Tok::Star, i));
                i += 1;
            }
            b'/' => {
                toks.push((Tok::Slash, i));
                i += 1;
            }
            b'^' => {
                toks.push((Tok::Caret, i));
                i += 1;
            }
            b'(' => {
                toks.push((Tok::LParen, i));
                i += 1;
            }
            b')' => {
                toks.push((Tok::RParen, i));
                i += 1;
            }
            b'0'..=b'9' | b'.' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i == start {
                    return err(start, "number must have digits before the decimal point");
                }
                let mut is_float = false;
                if i < bytes.len() && bytes[i] == b'.' {
                    is_float = true;
                    i += 1;
                    let frac_start = i;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                    if i == frac_start {
                        return err(frac_start, "number must have digits after the decimal point");
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let exp_at = i;
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    let has_digits = j < bytes.len() && bytes[j].is_ascii_digit();
                    if !has_digits {
                        return err(exp_at, "malformed exponent in number literal");
                    }
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                    is_float = true;
                }
                let text = &src[start..i];
                if is_float {
                    match text.parse::<f64>() {
                        Ok(v) => toks.push((Tok::Float(v), start)),
                        Err(_) => return err(start, format!("invalid number literal `{text}`")),
                    }
                } else {
                    let v = BigInt::parse_bytes(text.as_bytes(), 10)
                        .ok_or_else(|| ParseError {
                            offset: start,
                            message: format!("invalid integer literal `{text}`"),
                        })?;
                    toks.push((Tok::Int(v), start));
                }
            }
            b'a'..=b'z' | b'A'..=b'Z' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_alphabetic() {
                    i += 1;
                }
                let name = &src[start..i];
                let digit_start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let digits = &src[digit_start..i];
                match (name, digits.is_empty()) {
                    ("x", false) => {
                        let idx: u32 = digits.parse().map_err(|_| ParseError {
                            offset: digit_start,
                            message: format!("variable index `{digits}` is out of range"),
                        })?;
                        if idx == 0 {
                            return err(digit_start, "variable indices start at 1");
                        }
                        toks.push((Tok::Var(idx), start));
                    }
                    ("sin", true) => toks.push((Tok::Func(Func::Sin), start)),
                    ("cos", true) => toks.push((Tok::Func(Func::Cos), start)),
                    ("exp", true) => toks.push((Tok::Func(Func::Exp), start)),
                    ("sqrt", true) => toks.push((Tok::Func(Func::Sqrt), start)),
                    _ => {
                        return err(start, format!("unknown identifier `{}`", &src[start..i]));
                    }
                }
            }
            _ => return err(i, format!("unexpected character `{}`", &src[i..].chars().next().unwrap())),
        }
    }
    Ok(toks)
}

struct Parser<'a> {
    toks: &'a [(Tok, usize)],
    pos: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(_, o)| *o)
    }

    fn bump(&mut self) -> Option<&Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t);
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            err(self.offset(), format!("expected {what}"))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    acc = Expr::add(acc, self.term()?);
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    acc = Expr::sub(acc, self.term()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.factor()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.pos += 1;
                    acc = Expr::mul(acc, self.factor()?);
                }
                Some(Tok::Slash) => {
                    self.pos += 1;
                    acc = Expr::div(acc, self.factor()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            return Ok(Expr::neg(self.factor()?));
        }
        let base = self.base()?;
        if self.peek() == Some(&Tok::Caret) {
            self.pos += 1;
            let negate = if self.peek() == Some(&Tok::Minus) {
                self.pos += 1;
                true
            } else {
                false
            };
            let at = self.offset();
            match self.bump() {
                Some(Tok::Int(n)) => {
                    let n: i32 = n.try_into().map_err(|_| ParseError {
                        offset: at,
                        message: "exponent does not fit in 32 bits".into(),
                    })?;
                    let n = if negate { -n } else { n };
                    Ok(Expr::pow(base, n))
                }
                _ => err(at, "exponent must be an integer literal"),
            }
        } else {
            Ok(base)
        }
    }

    fn base(&mut self) -> Result<Expr, ParseError> {
        let at = self.offset();
        match self.bump().cloned() {
            Some(Tok::Int(n)) => Ok(Expr::constant(Scalar::Rational(BigRational::from_integer(n)))),
            Some(Tok::Float(v)) => Ok(Expr::float(v)),
            Some(Tok::Var(i)) => Ok(Expr::var(i)),
            Some(Tok::Func(f)) => {
                self.expect(Tok::LParen, "`(` after function name")?;
                let arg = self.expr()?;
                self.expect(Tok::RParen, "`)` closing function argument")?;
                Ok(match f {
                    Func::Sin => Expr::sin(arg),
                    Func::Cos => Expr::cos(arg),
                    Func::Exp => Expr::exp(arg),
                    Func::Sqrt => Expr::sqrt(arg),
                })
            }
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            _ => err(at, "expected a number, variable, function, or `(`"),
        }
    }
}

/// Parse the textual syntax into an [`Expr`].
pub fn parse(src: &str) -> Result<Expr, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser { toks: &toks, pos: 0, end: src.len() };
    let e = p.expr()?;
    if p.pos != toks.len() {
        return err(p.offset(), "unexpected trailing input");
    }
    Ok(e)
}

/// Binding strength for parenthesization. Negative constants rank lowest so
/// they are always parenthesized in operand position (`x1*(-1/2)`), and a
/// fractional rational prints with a `/` of its own, so it ranks like a
/// division (`x1/(2/3)`, but a bare `2/3`).
fn prec(e: &Expr) -> u8 {
    match e.node() {
        Node::Const(s) => {
            let negative = match s {
                Scalar::Rational(r) => r.is_negative(),
                Scalar::Float(f) => f.is_sign_negative(),
            };
            let fractional = matches!(s, Scalar::Rational(r) if !r.denom().is_one());
            if negative {
                0
            } else if fractional {
                2
            } else {
                5
            }
        }
        Node::Var(_) | Node::Sin(_) | Node::Cos(_) | Node::Exp(_) | Node::Sqrt(_) => 5,
        Node::Pow(..) => 4,
        Node::Neg(_) => 3,
        Node::Mul(..) | Node::Div(..) => 2,
        Node::Add(..) | Node::Sub(..) => 1,
    }
}

fn write_prec(f: &mut fmt::Formatter<'_>, e: &Expr, ctx: u8) -> fmt::Result {
    if prec(e) < ctx {
        write!(f, "(")?;
        write_node(f, e)?;
        write!(f, ")")
    } else {
        write_node(f, e)
    }
}

fn write_node(f: &mut fmt::Formatter<'_>, e: &Expr) -> fmt::Result {
    match e.node() {
        Node::Const(Scalar::Rational(r)) => {
            if r.denom().is_one() {
                write!(f, "{}", r.numer())
            } else {
                write!(f, "{}/{}", r.numer(), r.denom())
            }
        }
        Node::Const(Scalar::Float(v)) => write!(f, "{v:?}"),
        Node::Var(i) => write!(f, "x{i}"),
        Node::Add(a, b) => {
            write_prec(f, a, 1)?;
            write!(f, " + ")?;
            write_prec(f, b, 2)
        }
        Node::Sub(a, b) => {
            write_prec(f, a, 1)?;
            write!(f, " - ")?;
            write_prec(f, b, 2)
        }
        Node::Mul(a, b) => {
            write_prec(f, a, 2)?;
            write!(f, "*")?;
            write_prec(f, b, 3)
        }
        Node::Div(a, b) => {
            write_prec(f, a, 2)?;
            write!(f, "/")?;
            write_prec(f, b, 3)
        }
        Node::Neg(a) => {
            write!(f, "-")?;
            write_prec(f, a, 4)
        }
        Node::Pow(a, n) => {
            write_prec(f, a, 5)?;
            write!(f, "^{n}")
        }
        Node::Sin(a) => {
            write!(f, "sin(")?;
            write_prec(f, a, 1)?;
            write!(f, ")")
        }
        Node::Cos(a) => {
            write!(f, "cos(")?;
            write_prec(f, a, 1)?;
            write!(f, ")")
        }
        Node::Exp(a) => {
            write!(f, "exp(")?;
            write_prec(f, a, 1)?;
            write!(f, ")")
        }
        Node::Sqrt(a) => {
            write!(f, "sqrt(")?;
            write_prec(f, a, 1)?;
            write!(f, ")")
        }
    }
}

/// Render an expression for use as the left factor of a `*`, adding
/// parentheses exactly when reparsing in that position would regroup it.
pub(crate) fn factor_string(e: &Expr) -> String {
    struct AsFactor<'a>(&'a Expr);
    impl fmt::Display for AsFactor<'_> {
        fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            write_prec(f, self.0, 2)
        }
    }
    AsFactor(e).to_string()
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_prec(f, self, 0)
    }
}
