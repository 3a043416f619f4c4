//! Elementary-function expressions for user-defined vector fields.
//!
//! Grammar: numbers, identifiers, `+ - * / ^` (with `^` right-associative and
//! binding tighter than unary minus), parentheses, and the functions
//! `sin cos tan tanh exp log sqrt`. `pi` is predefined. Identifiers resolve to
//! state variables, inputs or parameters at parse time.

use crate::dynsys::VectorField;
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Tanh,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "tanh" => Func::Tanh,
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Tan => v.tan(),
            Func::Tanh => v.tanh(),
            Func::Exp => v.exp(),
            Func::Log => v.ln(),
            Func::Sqrt => v.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    State(usize),
    Input(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::State(i) => x[*i],
            Expr::Input(i) => u[*i],
            Expr::Neg(a) => -a.eval(x, u),
            Expr::Add(a, b) => a.eval(x, u) + b.eval(x, u),
            Expr::Sub(a, b) => a.eval(x, u) - b.eval(x, u),
            Expr::Mul(a, b) => a.eval(x, u) * b.eval(x, u),
            Expr::Div(a, b) => a.eval(x, u) / b.eval(x, u),
            Expr::Pow(a, b) => {
                let base = a.eval(x, u);
                match **b {
                    Expr::Num(e) if e.fract() == 0.0 && e.abs() <= 64.0 => base.powi(e as i32),
                    _ => base.powf(b.eval(x, u)),
                }
            }
            Expr::Call(f, a) => f.apply(a.eval(x, u)),
        }
    }
}

/// Names visible to expressions.
#[derive(Debug, Clone, Default)]
pub struct Scope {
    pub states: Vec<String>,
    pub inputs: Vec<String>,
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    End,
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || (c == '.' && bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit())) {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let v: f64 = text.parse().map_err(|_| Error::Expression {
                offset: start,
                message: format!("bad number `{text}`"),
            })?;
            out.push((start, Tok::Num(v)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(src[start..i].to_string())));
        } else if "+-*/^".contains(c) {
            out.push((i, Tok::Op(c)));
            i += 1;
        } else if c == '(' {
            out.push((i, Tok::LParen));
            i += 1;
        } else if c == ')' {
            out.push((i, Tok::RParen));
            i += 1;
        } else {
            return Err(Error::Expression {
                offset: i,
                message: format!("unexpected character `{c}`"),
            });
        }
    }
    out.push((src.len(), Tok::End));
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    scope: &'a Scope,
}

fn binding(op: char) -> Option<(u8, u8)> {
    // (left, right) binding powers; ^ is right-associative
    Some(match op {
        '+' | '-' => (1, 2),
        '*' | '/' => (3, 4),
        '^' => (8, 7),
        _ => return None,
    })
}

const PREFIX_BP: u8 = 5;

impl Parser<'_> {
    fn peek(&self) -> &(usize, Tok) {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> (usize, Tok) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(offset: usize, message: impl Into<String>) -> Result<T> {
        Err(Error::Expression {
            offset,
            message: message.into(),
        })
    }

    fn expr(&mut self, min_bp: u8) -> Result<Expr> {
        let (off, tok) = self.next();
        let mut lhs = match tok {
            Tok::Num(v) => Expr::Num(v),
            Tok::Op('-') => Expr::Neg(Box::new(self.expr(PREFIX_BP)?)),
            Tok::Op('+') => self.expr(PREFIX_BP)?,
            Tok::LParen => {
                let e = self.expr(0)?;
                match self.next() {
                    (_, Tok::RParen) => e,
                    (o, _) => return Self::err(o, "expected `)`"),
                }
            }
            Tok::Ident(name) => self.ident(off, &name)?,
            Tok::RParen => return Self::err(off, "unexpected `)`"),
            Tok::End => return Self::err(off, "unexpected end of expression"),
            Tok::Op(c) => return Self::err(off, format!("unexpected operator `{c}`")),
        };
        loop {
            let (off, tok) = self.peek().clone();
            let op = match tok {
                Tok::Op(c) => c,
                Tok::RParen | Tok::End => break,
                _ => return Self::err(off, "expected an operator"),
            };
            let (l, r) = binding(op).unwrap();
            if l < min_bp {
                break;
            }
            self.next();
            let rhs = self.expr(r)?;
            let (a, b) = (Box::new(lhs), Box::new(rhs));
            lhs = match op {
                '+' => Expr::Add(a, b),
                '-' => Expr::Sub(a, b),
                '*' => Expr::Mul(a, b),
                '/' => Expr::Div(a, b),
                _ => Expr::Pow(a, b),
            };
        }
        Ok(lhs)
    }

    fn ident(&mut self, off: usize, name: &str) -> Result<Expr> {
        if let Some(f) = Func::from_name(name) {
            match self.next() {
                (_, Tok::LParen) => {}
                (o, _) => return Self::err(o, format!("expected `(` after `{name}`")),
            }
            let arg = self.expr(0)?;
            return match self.next() {
                (_, Tok::RParen) => Ok(Expr::Call(f, Box::new(arg))),
                (o, _) => Self::err(o, "expected `)`"),
            };
        }
        if let Some(i) = self.scope.states.iter().position(|s| s == name) {
            return Ok(Expr::State(i));
        }
        if let Some(i) = self.scope.inputs.iter().position(|s| s == name) {
            return Ok(Expr::Input(i));
        }
        if let Some(v) = self.scope.params.get(name) {
            return Ok(Expr::Num(*v));
        }
        if name == "pi" {
            return Ok(Expr::Num(std::f64::consts::PI));
        }
        Self::err(off, format!("unknown identifier `{name}`"))
    }
}

pub fn parse(src: &str, scope: &Scope) -> Result<Expr> {
    let mut p = Parser {
        toks: tokenize(src)?,
        pos: 0,
        scope,
    };
    let e = p.expr(0)?;
    match p.peek() {
        (_, Tok::End) => Ok(e),
        (o, _) => Parser::err(*o, "unexpected trailing input"),
    }
}

/// Vector field given by one expression per state coordinate. The Jacobian
/// is left to the finite-difference fallback.
#[derive(Debug, Clone)]
pub struct ExprField {
    exprs: Vec<Expr>,
}

impl ExprField {
    pub fn parse(equations: &[String], scope: &Scope) -> Result<Self> {
        if equations.len() != scope.states.len() {
            return Err(Error::InvalidSpec(format!(
                "{} equations for {} states",
                equations.len(),
                scope.states.len()
            )));
        }
        let exprs = equations
            .iter()
            .enumerate()
            .map(|(i, s)| {
                parse(s, scope).map_err(|e| match e {
                    Error::Expression { offset, message } => Error::Expression {
                        offset,
                        message: format!("equation {}: {message}", i + 1),
                    },
                    other => other,
                })
            })
            .collect::<Result<_>>()?;
        Ok(ExprField { exprs })
    }
}

impl VectorField for ExprField {
    fn eval(&self, x: &DVector<f64>, u: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.exprs.len(), self.exprs.iter().map(|e| e.eval(x.as_slice(), u)))
    }

    fn jacobian(&self, _x: &DVector<f64>, _u: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}
