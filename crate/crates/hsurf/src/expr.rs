//! A small expression language for defining functions:
//! `+ - * / ^`, unary minus, parentheses, `sqrt(..)`, the constants `pi`
//! and `e`, and the coordinates `x1 … xn` (plus `x`, `y`, `t` when `n = 3`).
//!
//! ```
//! use hsurf::expr::parse;
//! let f = parse("t - (x^2 - y^2)/4", 3).unwrap();
//! assert_eq!(f.eval(&[1.0, 1.0, 0.0]), 0.0);
//! ```

use std::sync::Arc;

use thiserror::Error;

use crate::jets::{Jet3, ScalarField};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{msg} at position {pos}")]
pub struct ParseError {
    pub pos: usize,
    pub msg: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    /// Exponents must be constant.
    Pow(Box<Expr>, f64),
    Sqrt(Box<Expr>),
}

impl Expr {
    /// Evaluates on coordinate jets.
    pub fn eval_jet(&self, x: &[Jet3]) -> Jet3 {
        match self {
            Expr::Num(c) => Jet3::constant(x[0].dim(), *c, x[0].order()),
            Expr::Var(k) => x[*k].clone(),
            Expr::Neg(a) => -a.eval_jet(x),
            Expr::Add(a, b) => a.eval_jet(x) + b.eval_jet(x),
            Expr::Sub(a, b) => a.eval_jet(x) - b.eval_jet(x),
            Expr::Mul(a, b) => a.eval_jet(x) * b.eval_jet(x),
            Expr::Div(a, b) => a.eval_jet(x) / b.eval_jet(x),
            Expr::Pow(a, p) => {
                let base = a.eval_jet(x);
                if p.fract() == 0.0 && p.abs() <= i32::MAX as f64 {
                    base.powi(*p as i32)
                } else {
                    base.powf(*p)
                }
            }
            Expr::Sqrt(a) => a.eval_jet(x).sqrt(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_jet(&Jet3::variables(x, 0)).value()
    }

    fn constant(&self) -> Option<f64> {
        match self {
            Expr::Num(c) => Some(*c),
            Expr::Var(_) => None,
            Expr::Neg(a) => a.constant().map(|v| -v),
            Expr::Add(a, b) => Some(a.constant()? + b.constant()?),
            Expr::Sub(a, b) => Some(a.constant()? - b.constant()?),
            Expr::Mul(a, b) => Some(a.constant()? * b.constant()?),
            Expr::Div(a, b) => Some(a.constant()? / b.constant()?),
            Expr::Pow(a, p) => Some(a.constant()?.powf(*p)),
            Expr::Sqrt(a) => Some(a.constant()?.sqrt()),
        }
    }

    /// The expression as an analytic field.
    pub fn into_field(self) -> ScalarField {
        let e = Arc::new(self);
        ScalarField::analytic(move |x: &[Jet3]| e.eval_jet(x))
    }
}

/// Parses an expression in `n` coordinates.
pub fn parse(src: &str, n: usize) -> Result<Expr, ParseError> {
    let mut p = Parser { src: src.as_bytes(), pos: 0, n };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.error("unexpected input"));
    }
    Ok(e)
}

/// Parses straight into a field.
pub fn parse_field(src: &str, n: usize) -> Result<ScalarField, ParseError> {
    parse(src, n).map(Expr::into_field)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    n: usize,
}

impl Parser<'_> {
    fn error(&self, msg: &str) -> ParseError {
        ParseError { pos: self.pos, msg: msg.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            Ok(Expr::Neg(Box::new(self.unary()?)))
        } else if self.eat(b'+') {
            self.unary()
        } else {
            self.power()
        }
    }

    // right-associative; binds tighter than unary minus on its left
    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            self.skip_ws();
            let at = self.pos;
            let exp = self.unary()?;
            match exp.constant() {
                Some(p) if p.is_finite() => Ok(Expr::Pow(Box::new(base), p)),
                _ => Err(ParseError { pos: at, msg: "exponent must be a finite constant".into() }),
            }
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected ')'"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(_) => Err(self.error("unexpected character")),
            None => Err(self.error("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.') {
            self.pos += 1;
        }
        // exponent part
        if self.pos < self.src.len() && (self.src[self.pos] == b'e' || self.src[self.pos] == b'E') {
            let mut q = self.pos + 1;
            if q < self.src.len() && (self.src[q] == b'+' || self.src[q] == b'-') {
                q += 1;
            }
            if q < self.src.len() && self.src[q].is_ascii_digit() {
                self.pos = q;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        text.parse::<f64>()
            .map(Expr::Num)
            .map_err(|_| ParseError { pos: start, msg: format!("bad number {:?}", text) })
    }

    fn ident(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        let unknown = || ParseError { pos: start, msg: format!("unknown name {:?}", name) };
        match name {
            "pi" => Ok(Expr::Num(std::f64::consts::PI)),
            "e" => Ok(Expr::Num(std::f64::consts::E)),
            "sqrt" => {
                if !self.eat(b'(') {
                    return Err(self.error("expected '(' after sqrt"));
                }
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected ')'"));
                }
                Ok(Expr::Sqrt(Box::new(e)))
            }
            "x" | "y" | "t" if self.n == 3 => Ok(Expr::Var(match name {
                "x" => 0,
                "y" => 1,
                _ => 2,
            })),
            _ => {
                let idx = name
                    .strip_prefix('x')
                    .and_then(|d| d.parse::<usize>().ok())
                    .ok_or_else(unknown)?;
                if idx == 0 || idx > self.n {
                    return Err(ParseError {
                        pos: start,
                        msg: format!("coordinate {} out of range 1..={}", name, self.n),
                    });
                }
                Ok(Expr::Var(idx - 1))
            }
        }
    }
}
