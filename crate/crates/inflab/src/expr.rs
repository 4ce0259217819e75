//! Minimal boundary-expression language.
//!
//! Grammar:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := number | 'x'digit | '(' expr ')' | func '(' args ')' | '-' factor
//! func   := abs | norm | sin | cos | atan2
//! ```
//!
//! `x1..x3` are node coordinates; `norm(x)` is the Euclidean norm of the
//! implicit node point; `atan2` takes two arguments. Evaluation is total
//! except for division by zero.

use crate::grid::{norm, Point};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ExprError {
    #[error("parse error at byte {pos}: {message}")]
    Parse { pos: usize, message: String },
    #[error("division by zero at node ({x:.6}, {y:.6}, {z:.6})")]
    DivisionByZero { x: f64, y: f64, z: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Number(f64),
    /// Coordinate index (0-based).
    Coord(usize),
    /// Euclidean norm of the node point.
    Norm,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Abs(Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Atan2(Box<Expr>, Box<Expr>),
}

impl Expr {
    /// Parses the documented grammar.
    pub fn parse(text: &str) -> Result<Expr, ExprError> {
        let mut p = Parser { bytes: text.as_bytes(), pos: 0 };
        p.skip_ws();
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.bytes.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(e)
    }

    /// Evaluates at a node point; `dim` controls how `norm(x)` and
    /// out-of-dimension coordinates behave (they read as 0).
    pub fn eval(&self, p: Point, dim: usize) -> Result<f64, ExprError> {
        Ok(match self {
            Expr::Number(v) => *v,
            Expr::Coord(k) => {
                if *k < dim {
                    p[*k]
                } else {
                    0.0
                }
            }
            Expr::Norm => norm(&p, dim),
            Expr::Neg(e) => -e.eval(p, dim)?,
            Expr::Add(a, b) => a.eval(p, dim)? + b.eval(p, dim)?,
            Expr::Sub(a, b) => a.eval(p, dim)? - b.eval(p, dim)?,
            Expr::Mul(a, b) => a.eval(p, dim)? * b.eval(p, dim)?,
            Expr::Div(a, b) => {
                let den = b.eval(p, dim)?;
                if den == 0.0 {
                    return Err(ExprError::DivisionByZero { x: p[0], y: p[1], z: p[2] });
                }
                a.eval(p, dim)? / den
            }
            Expr::Abs(e) => e.eval(p, dim)?.abs(),
            Expr::Sin(e) => e.eval(p, dim)?.sin(),
            Expr::Cos(e) => e.eval(p, dim)?.cos(),
            Expr::Atan2(a, b) => a.eval(p, dim)?.atan2(b.eval(p, dim)?),
        })
    }
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn error(&self, message: &str) -> ExprError {
        ExprError::Parse { pos: self.pos, message: message.into() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            self.skip_ws();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ExprError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(&format!("expected '{}'", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
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

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.factor()?;
        loop {
            if self.eat(b'*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
            } else if self.eat(b'/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.factor()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ExprError> {
        if self.eat(b'-') {
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        if self.eat(b'(') {
            let e = self.expr()?;
            self.expect(b')')?;
            return Ok(e);
        }
        match self.peek() {
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            _ => Err(self.error("expected a number, coordinate, function, or '('")),
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_digit() || c == b'.')
        {
            self.pos += 1;
        }
        // Scientific notation: 1e-3, 2.5E+4.
        if self.peek().is_some_and(|c| c == b'e' || c == b'E') {
            let mark = self.pos;
            self.pos += 1;
            if self.peek().is_some_and(|c| c == b'+' || c == b'-') {
                self.pos += 1;
            }
            if self.peek().is_some_and(|c| c.is_ascii_digit()) {
                while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                    self.pos += 1;
                }
            } else {
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        let value: f64 = text
            .parse()
            .map_err(|_| ExprError::Parse { pos: start, message: format!("bad number {text:?}") })?;
        self.skip_ws();
        Ok(Expr::Number(value))
    }

    fn ident(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_alphanumeric())
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap().to_string();
        self.skip_ws();
        match name.as_str() {
            "x1" => Ok(Expr::Coord(0)),
            "x2" => Ok(Expr::Coord(1)),
            "x3" => Ok(Expr::Coord(2)),
            "abs" | "sin" | "cos" => {
                self.expect(b'(')?;
                let arg = Box::new(self.expr()?);
                self.expect(b')')?;
                Ok(match name.as_str() {
                    "abs" => Expr::Abs(arg),
                    "sin" => Expr::Sin(arg),
                    _ => Expr::Cos(arg),
                })
            }
            "atan2" => {
                self.expect(b'(')?;
                let a = Box::new(self.expr()?);
                self.expect(b',')?;
                let b = Box::new(self.expr()?);
                self.expect(b')')?;
                Ok(Expr::Atan2(a, b))
            }
            "norm" => {
                // norm takes the implicit node point, written norm(x).
                self.expect(b'(')?;
                if !self.eat(b'x') {
                    return Err(self.error("norm takes the node point, written norm(x)"));
                }
                self.expect(b')')?;
                Ok(Expr::Norm)
            }
            other => Err(ExprError::Parse {
                pos: start,
                message: format!("unknown identifier {other:?}"),
            }),
        }
    }
}
