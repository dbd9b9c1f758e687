//! Arithmetic expressions over `x`, `y`, `theta` and named parameters.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | '+' unary | power
//! power   := atom ('^' unary)?
//! atom    := number | ident | ident '(' expr ')' | '(' expr ')'
//! ```
//!
//! `^` is right-associative and binds tighter than unary minus, so `-x^2`
//! is `-(x^2)`. Functions: `sin cos tan exp ln log sqrt abs tanh atan`.
//! Constants: `pi`, `e`. Parameters are folded to constants at compile time.

use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExprError {
    /// Byte offset of the offending token in the source.
    pub pos: usize,
    pub message: String,
}

impl fmt::Display for ExprError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at position {}", self.message, self.pos)
    }
}

impl std::error::Error for ExprError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
    Theta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Tanh,
    Atan,
}

pub const FUNCTIONS: [&str; 10] = ["sin", "cos", "tan", "exp", "ln", "log", "sqrt", "abs", "tanh", "atan"];

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "ln" | "log" => Func::Ln,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "tanh" => Func::Tanh,
            "atan" => Func::Atan,
            _ => return None,
        })
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Tan => v.tan(),
            Func::Exp => v.exp(),
            Func::Ln => v.ln(),
            Func::Sqrt => v.sqrt(),
            Func::Abs => v.abs(),
            Func::Tanh => v.tanh(),
            Func::Atan => v.atan(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn eval(&self, x: f64, y: f64, theta: f64) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(Var::X) => x,
            Expr::Var(Var::Y) => y,
            Expr::Var(Var::Theta) => theta,
            Expr::Neg(a) => -a.eval(x, y, theta),
            Expr::Add(a, b) => a.eval(x, y, theta) + b.eval(x, y, theta),
            Expr::Sub(a, b) => a.eval(x, y, theta) - b.eval(x, y, theta),
            Expr::Mul(a, b) => a.eval(x, y, theta) * b.eval(x, y, theta),
            Expr::Div(a, b) => a.eval(x, y, theta) / b.eval(x, y, theta),
            Expr::Pow(a, b) => pow(a.eval(x, y, theta), b.eval(x, y, theta)),
            Expr::Call(f, a) => f.apply(a.eval(x, y, theta)),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Expr::Num(_))
    }

    fn fold(self) -> Expr {
        let constant = |e: &Expr| match e {
            Expr::Num(v) => Some(*v),
            _ => None,
        };
        let folded = match &self {
            Expr::Neg(a) => constant(a).map(|a| -a),
            Expr::Add(a, b) => constant(a).zip(constant(b)).map(|(a, b)| a + b),
            Expr::Sub(a, b) => constant(a).zip(constant(b)).map(|(a, b)| a - b),
            Expr::Mul(a, b) => constant(a).zip(constant(b)).map(|(a, b)| a * b),
            Expr::Div(a, b) => constant(a).zip(constant(b)).map(|(a, b)| a / b),
            Expr::Pow(a, b) => constant(a).zip(constant(b)).map(|(a, b)| pow(a, b)),
            Expr::Call(f, a) => constant(a).map(|a| f.apply(a)),
            _ => None,
        };
        folded.map_or(self, Expr::Num)
    }
}

fn pow(a: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && b.abs() <= i32::MAX as f64 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
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

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
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
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            let v = text.parse::<f64>().map_err(|_| ExprError {
                pos: start,
                message: format!("invalid number '{text}'"),
            })?;
            out.push((Tok::Num(v), start));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), start));
        } else if "+-*/^".contains(c) {
            out.push((Tok::Op(c), i));
            i += 1;
        } else if c == '(' {
            out.push((Tok::LParen, i));
            i += 1;
        } else if c == ')' {
            out.push((Tok::RParen, i));
            i += 1;
        } else {
            let ch = src[i..].chars().next().unwrap_or(c);
            return Err(ExprError {
                pos: i,
                message: format!("unexpected character '{ch}'"),
            });
        }
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    at: usize,
    params: &'a BTreeMap<String, f64>,
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError {
            pos: self.pos(),
            message: message.into(),
        })
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Op('+') => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?)).fold();
                }
                Tok::Op('-') => {
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?)).fold();
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Tok::Op('*') => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?)).fold();
                }
                Tok::Op('/') => {
                    self.bump();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?)).fold();
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Tok::Op('-') => {
                self.bump();
                Ok(Expr::Neg(Box::new(self.unary()?)).fold())
            }
            Tok::Op('+') => {
                self.bump();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if let Tok::Op('^') = self.peek() {
            self.bump();
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)).fold());
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let pos = self.pos();
        match self.bump() {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.close(pos)?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if let Tok::LParen = self.peek() {
                    let Some(f) = Func::lookup(&name) else {
                        return Err(ExprError {
                            pos,
                            message: format!("unknown function '{name}'"),
                        });
                    };
                    let open = self.pos();
                    self.bump();
                    let arg = self.expr()?;
                    self.close(open)?;
                    return Ok(Expr::Call(f, Box::new(arg)).fold());
                }
                match name.as_str() {
                    "x" => Ok(Expr::Var(Var::X)),
                    "y" => Ok(Expr::Var(Var::Y)),
                    "theta" => Ok(Expr::Var(Var::Theta)),
                    "pi" => Ok(Expr::Num(std::f64::consts::PI)),
                    "e" => Ok(Expr::Num(std::f64::consts::E)),
                    _ => match self.params.get(&name) {
                        Some(v) => Ok(Expr::Num(*v)),
                        None if Func::lookup(&name).is_some() => Err(ExprError {
                            pos,
                            message: format!("function '{name}' needs an argument in parentheses"),
                        }),
                        None => Err(ExprError {
                            pos,
                            message: format!("unknown identifier '{name}'"),
                        }),
                    },
                }
            }
            Tok::End => Err(ExprError {
                pos,
                message: "unexpected end of expression".into(),
            }),
            Tok::RParen => Err(ExprError {
                pos,
                message: "unexpected ')'".into(),
            }),
            Tok::Op(c) => Err(ExprError {
                pos,
                message: format!("unexpected operator '{c}'"),
            }),
        }
    }

    fn close(&mut self, open: usize) -> Result<(), ExprError> {
        match self.peek() {
            Tok::RParen => {
                self.bump();
                Ok(())
            }
            Tok::End => Err(ExprError {
                pos: open,
                message: "unbalanced parenthesis".into(),
            }),
            _ => self.err("expected ')'"),
        }
    }
}

/// Parse `src`, substituting the given parameters.
pub fn parse(src: &str, params: &BTreeMap<String, f64>) -> Result<Expr, ExprError> {
    let mut p = Parser {
        toks: tokenize(src)?,
        at: 0,
        params,
    };
    if let Tok::End = p.peek() {
        return p.err("empty expression");
    }
    let e = p.expr()?;
    match p.peek() {
        Tok::End => Ok(e),
        Tok::RParen => p.err("unexpected ')'"),
        _ => p.err("expected an operator"),
    }
}

/// Parse an expression that must not depend on `x`, `y` or `theta`.
pub fn parse_constant(src: &str, params: &BTreeMap<String, f64>) -> Result<f64, ExprError> {
    match parse(src, params)? {
        Expr::Num(v) => Ok(v),
        _ => Err(ExprError {
            pos: 0,
            message: "expression must be constant".into(),
        }),
    }
}
