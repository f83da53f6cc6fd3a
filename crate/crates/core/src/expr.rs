//! Scalar expressions over state, input and output variables.
//!
//! Expressions are parsed from text with a small recursive-descent grammar:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := '-' factor | power
//! power  := atom ('^' integer)?
//! atom   := number | ident | ident '(' expr ')' | '(' expr ')'
//! ```
//!
//! Identifiers are `x<i>`, `u<i>`, `y<i>` (1-based) and `s`, an alias for
//! the single input of a scalar function. Functions: `sin`, `cos`, `tanh`,
//! `exp`, `sqrt`, `abs` and `sign` (the latter appears as the derivative of
//! `abs`, with `sign(0) = 0`).

use std::fmt;

use thiserror::Error;

use crate::matrix::Matrix;

/// Which argument block a variable belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Block {
    X,
    U,
    Y,
    /// Unresolved single-input alias `s`.
    S,
}

/// A variable reference; `index` is zero-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    pub block: Block,
    pub index: usize,
}

impl Var {
    pub const S: Var = Var {
        block: Block::S,
        index: 0,
    };

    pub fn x(index: usize) -> Self {
        Self {
            block: Block::X,
            index,
        }
    }

    pub fn u(index: usize) -> Self {
        Self {
            block: Block::U,
            index,
        }
    }

    pub fn y(index: usize) -> Self {
        Self {
            block: Block::Y,
            index,
        }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.block {
            Block::X => write!(f, "x{}", self.index + 1),
            Block::U => write!(f, "u{}", self.index + 1),
            Block::Y => write!(f, "y{}", self.index + 1),
            Block::S => write!(f, "s"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Tanh,
    Exp,
    Sqrt,
    Abs,
    Sign,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tanh" => Func::Tanh,
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "sign" => Func::Sign,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tanh => "tanh",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Sign => "sign",
        }
    }
}

/// Expression tree. Build through the constructor functions so that
/// constants fold and 0/1 identities are applied.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Neg(Box<Expr>),
    Call(Func, Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("variable {0} is not bound")]
    Unbound(Var),
    #[error("division by zero")]
    DivisionByZero,
    #[error("sqrt of negative value {0}")]
    SqrtNegative(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseErrorKind {
    #[error("unexpected character '{0}'")]
    UnexpectedChar(char),
    #[error("expected {expected}, found {found}")]
    Unexpected {
        expected: &'static str,
        found: String,
    },
    #[error("unknown identifier '{0}'")]
    UnknownIdentifier(String),
    #[error("unknown function '{0}'")]
    UnknownFunction(String),
    #[error("invalid number '{0}'")]
    BadNumber(String),
    #[error("exponent must be a constant integer")]
    BadExponent,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{kind} at position {pos}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub pos: usize,
}

/// Variable values for evaluation. Unset blocks are empty.
#[derive(Clone, Copy, Debug, Default)]
pub struct Env<'a> {
    pub x: &'a [f64],
    pub u: &'a [f64],
    pub y: &'a [f64],
    pub s: Option<f64>,
}

impl<'a> Env<'a> {
    pub fn x(x: &'a [f64]) -> Self {
        Self {
            x,
            ..Self::default()
        }
    }

    pub fn xu(x: &'a [f64], u: &'a [f64]) -> Self {
        Self {
            x,
            u,
            ..Self::default()
        }
    }

    pub fn y(y: &'a [f64]) -> Self {
        Self {
            y,
            ..Self::default()
        }
    }

    fn get(&self, v: Var) -> Option<f64> {
        match v.block {
            Block::X => self.x.get(v.index).copied(),
            Block::U => self.u.get(v.index).copied(),
            Block::Y => self.y.get(v.index).copied(),
            Block::S => self.s,
        }
    }
}

// Constructors -------------------------------------------------------------

// folding constructors, not operator overloads
#[allow(clippy::should_implement_trait)]
impl Expr {
    pub fn constant(c: f64) -> Self {
        Expr::Const(c)
    }

    pub fn var(v: Var) -> Self {
        Expr::Var(v)
    }

    fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    fn is_const(&self, value: f64) -> bool {
        self.as_const() == Some(value)
    }

    pub fn neg(e: Expr) -> Self {
        match e {
            Expr::Const(c) => Expr::Const(-c),
            Expr::Neg(inner) => *inner,
            e => Expr::Neg(Box::new(e)),
        }
    }

    pub fn add(a: Expr, b: Expr) -> Self {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(x + y),
            (Some(0.0), _) => b,
            (_, Some(0.0)) => a,
            _ => Expr::Add(Box::new(a), Box::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Self {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(x - y),
            (Some(0.0), _) => Expr::neg(b),
            (_, Some(0.0)) => a,
            _ => Expr::Sub(Box::new(a), Box::new(b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Self {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(x * y),
            (Some(0.0), _) => Expr::Const(0.0),
            (_, Some(0.0)) => Expr::Const(0.0),
            (Some(1.0), _) => b,
            (_, Some(1.0)) => a,
            (Some(-1.0), _) => Expr::neg(b),
            (_, Some(-1.0)) => Expr::neg(a),
            _ => Expr::Mul(Box::new(a), Box::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Self {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) if y != 0.0 => Expr::Const(x / y),
            (_, Some(1.0)) => a,
            _ => Expr::Div(Box::new(a), Box::new(b)),
        }
    }

    pub fn pow(base: Expr, n: i32) -> Self {
        match (n, base.as_const()) {
            (0, _) => Expr::Const(1.0),
            (1, _) => base,
            (_, Some(c)) if c != 0.0 || n > 0 => Expr::Const(c.powi(n)),
            _ => Expr::Pow(Box::new(base), n),
        }
    }

    pub fn call(func: Func, arg: Expr) -> Self {
        match (func, arg.as_const()) {
            (Func::Sqrt, Some(c)) if c < 0.0 => Expr::Call(func, Box::new(arg)),
            (_, Some(c)) => Expr::Const(apply(func, c).expect("non-negative sqrt argument")),
            _ => Expr::Call(func, Box::new(arg)),
        }
    }
}

fn apply(func: Func, v: f64) -> Result<f64, EvalError> {
    Ok(match func {
        Func::Sin => v.sin(),
        Func::Cos => v.cos(),
        Func::Tanh => v.tanh(),
        Func::Exp => v.exp(),
        Func::Sqrt => {
            if v < 0.0 {
                return Err(EvalError::SqrtNegative(v));
            }
            v.sqrt()
        }
        Func::Abs => v.abs(),
        Func::Sign => {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
    })
}

// Evaluation, differentiation, traversal ----------------------------------

impl Expr {
    pub fn eval(&self, env: &Env<'_>) -> Result<f64, EvalError> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var(v) => env.get(*v).ok_or(EvalError::Unbound(*v))?,
            Expr::Neg(e) => -e.eval(env)?,
            Expr::Call(func, e) => apply(*func, e.eval(env)?)?,
            Expr::Add(a, b) => a.eval(env)? + b.eval(env)?,
            Expr::Sub(a, b) => a.eval(env)? - b.eval(env)?,
            Expr::Mul(a, b) => a.eval(env)? * b.eval(env)?,
            Expr::Div(a, b) => {
                let num = a.eval(env)?;
                let den = b.eval(env)?;
                if den == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                num / den
            }
            Expr::Pow(e, n) => {
                let base = e.eval(env)?;
                if base == 0.0 && *n < 0 {
                    return Err(EvalError::DivisionByZero);
                }
                base.powi(*n)
            }
        })
    }

    /// Symbolic derivative with respect to `var`.
    pub fn diff(&self, var: Var) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(v) => Expr::Const(if *v == var { 1.0 } else { 0.0 }),
            Expr::Neg(e) => Expr::neg(e.diff(var)),
            Expr::Add(a, b) => Expr::add(a.diff(var), b.diff(var)),
            Expr::Sub(a, b) => Expr::sub(a.diff(var), b.diff(var)),
            Expr::Mul(a, b) => Expr::add(
                Expr::mul(a.diff(var), (**b).clone()),
                Expr::mul((**a).clone(), b.diff(var)),
            ),
            Expr::Div(a, b) => {
                let da = a.diff(var);
                let db = b.diff(var);
                if db.is_const(0.0) {
                    Expr::div(da, (**b).clone())
                } else {
                    Expr::div(
                        Expr::sub(Expr::mul(da, (**b).clone()), Expr::mul((**a).clone(), db)),
                        Expr::pow((**b).clone(), 2),
                    )
                }
            }
            Expr::Pow(e, n) => Expr::mul(
                Expr::mul(Expr::Const(f64::from(*n)), Expr::pow((**e).clone(), n - 1)),
                e.diff(var),
            ),
            Expr::Call(func, e) => {
                let inner = e.diff(var);
                if inner.is_const(0.0) {
                    return Expr::Const(0.0);
                }
                let arg = (**e).clone();
                let outer = match func {
                    Func::Sin => Expr::call(Func::Cos, arg),
                    Func::Cos => Expr::neg(Expr::call(Func::Sin, arg)),
                    Func::Tanh => {
                        Expr::sub(Expr::Const(1.0), Expr::pow(Expr::call(Func::Tanh, arg), 2))
                    }
                    Func::Exp => Expr::call(Func::Exp, arg),
                    Func::Sqrt => Expr::div(Expr::Const(0.5), Expr::call(Func::Sqrt, arg)),
                    // abs'(0) = sign(0) = 0
                    Func::Abs => Expr::call(Func::Sign, arg),
                    Func::Sign => Expr::Const(0.0),
                };
                Expr::mul(outer, inner)
            }
        }
    }

    /// Visit every variable occurring in the tree.
    pub fn for_each_var(&self, f: &mut impl FnMut(Var)) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => f(*v),
            Expr::Neg(e) | Expr::Call(_, e) | Expr::Pow(e, _) => e.for_each_var(f),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.for_each_var(f);
                b.for_each_var(f);
            }
        }
    }

    pub fn variables(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.for_each_var(&mut |v| {
            if !out.contains(&v) {
                out.push(v);
            }
        });
        out.sort();
        out
    }

    pub fn depends_on_block(&self, block: Block) -> bool {
        let mut found = false;
        self.for_each_var(&mut |v| found |= v.block == block);
        found
    }

    /// Replace every occurrence of variable `from` by the expression `to`.
    pub fn substitute(&self, from: Var, to: &Expr) -> Expr {
        self.map_vars(&mut |v| if v == from { to.clone() } else { Expr::Var(v) })
    }

    pub fn rename(&self, from: Var, to: Var) -> Expr {
        self.substitute(from, &Expr::Var(to))
    }

    /// Rebuild the tree with every variable replaced by `f(var)`.
    pub fn map_vars(&self, f: &mut impl FnMut(Var) -> Expr) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(v) => f(*v),
            Expr::Neg(e) => Expr::neg(e.map_vars(f)),
            Expr::Call(func, e) => Expr::call(*func, e.map_vars(f)),
            Expr::Pow(e, n) => Expr::pow(e.map_vars(f), *n),
            Expr::Add(a, b) => {
                let a = a.map_vars(f);
                Expr::add(a, b.map_vars(f))
            }
            Expr::Sub(a, b) => {
                let a = a.map_vars(f);
                Expr::sub(a, b.map_vars(f))
            }
            Expr::Mul(a, b) => {
                let a = a.map_vars(f);
                Expr::mul(a, b.map_vars(f))
            }
            Expr::Div(a, b) => {
                let a = a.map_vars(f);
                Expr::div(a, b.map_vars(f))
            }
        }
    }
}

// Printing -----------------------------------------------------------------

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Add(..) | Expr::Sub(..) => 1,
        Expr::Mul(..) | Expr::Div(..) => 2,
        Expr::Neg(..) => 3,
        Expr::Pow(..) => 4,
        Expr::Const(c) if *c < 0.0 => 3,
        Expr::Const(_) | Expr::Var(_) | Expr::Call(..) => 5,
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if precedence(e) < min_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if *c < 0.0 {
                    write!(f, "-{:?}", -c)
                } else {
                    write!(f, "{c:?}")
                }
            }
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(e) => {
                write!(f, "-")?;
                write_operand(f, e, 3)
            }
            Expr::Call(func, e) => write!(f, "{}({e})", func.name()),
            Expr::Add(a, b) => {
                write_operand(f, a, 1)?;
                write!(f, " + ")?;
                write_operand(f, b, 2)
            }
            Expr::Sub(a, b) => {
                write_operand(f, a, 1)?;
                write!(f, " - ")?;
                write_operand(f, b, 2)
            }
            Expr::Mul(a, b) => {
                write_operand(f, a, 2)?;
                write!(f, "*")?;
                write_operand(f, b, 3)
            }
            Expr::Div(a, b) => {
                write_operand(f, a, 2)?;
                write!(f, "/")?;
                write_operand(f, b, 3)
            }
            Expr::Pow(e, n) => {
                write_operand(f, e, 5)?;
                if *n < 0 {
                    write!(f, "^-{}", n.unsigned_abs())
                } else {
                    write!(f, "^{n}")
                }
            }
        }
    }
}

// Parsing ------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(String),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num(s) | Tok::Ident(s) => write!(f, "'{s}'"),
            Tok::Plus => write!(f, "'+'"),
            Tok::Minus => write!(f, "'-'"),
            Tok::Star => write!(f, "'*'"),
            Tok::Slash => write!(f, "'/'"),
            Tok::Caret => write!(f, "'^'"),
            Tok::LParen => write!(f, "'('"),
            Tok::RParen => write!(f, "')'"),
            Tok::End => write!(f, "end of input"),
        }
    }
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let start = i;
        match c {
            ' ' | '\t' | '\n' | '\r' => {
                i += 1;
                continue;
            }
            '+' => out.push((Tok::Plus, start)),
            '-' => out.push((Tok::Minus, start)),
            '*' => out.push((Tok::Star, start)),
            '/' => out.push((Tok::Slash, start)),
            '^' => out.push((Tok::Caret, start)),
            '(' => out.push((Tok::LParen, start)),
            ')' => out.push((Tok::RParen, start)),
            '0'..='9' | '.' => {
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
                out.push((Tok::Num(text[start..i].to_string()), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(text[start..i].to_string()), start));
                continue;
            }
            other => {
                let ch = text[start..].chars().next().unwrap_or(other);
                return Err(ParseError {
                    kind: ParseErrorKind::UnexpectedChar(ch),
                    pos: start,
                });
            }
        }
        i += 1;
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

fn parse_variable(name: &str) -> Option<Var> {
    if name == "s" {
        return Some(Var::S);
    }
    let (head, digits) = name.split_at(1);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let one_based: usize = digits.parse().ok()?;
    if one_based == 0 {
        return None;
    }
    let index = one_based - 1;
    match head {
        "x" => Some(Var::x(index)),
        "u" => Some(Var::u(index)),
        "y" => Some(Var::y(index)),
        _ => None,
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, expected: &'static str) -> ParseError {
        ParseError {
            kind: ParseErrorKind::Unexpected {
                expected,
                found: self.peek().to_string(),
            },
            pos: self.offset(),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Tok::Slash => {
                    self.bump();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(Expr::neg(self.factor()?));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let n = self.exponent()?;
            return Ok(Expr::Pow(Box::new(base), n));
        }
        Ok(base)
    }

    /// Integer exponent, right-associative: `2^3^2` is `2^9`.
    fn exponent(&mut self) -> Result<i32, ParseError> {
        let pos = self.offset();
        let bad = ParseError {
            kind: ParseErrorKind::BadExponent,
            pos,
        };
        let negative = if *self.peek() == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        let Tok::Num(text) = self.peek().clone() else {
            return Err(bad);
        };
        if !text.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad);
        }
        self.bump();
        let mut n: i32 = text.parse().map_err(|_| bad.clone())?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let e = self.exponent()?;
            let e = u32::try_from(e).map_err(|_| bad.clone())?;
            n = n.checked_pow(e).ok_or(bad.clone())?;
        }
        Ok(if negative { -n } else { n })
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let (tok, pos) = self.bump();
        match tok {
            Tok::Num(text) => text
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Expr::Const)
                .ok_or(ParseError {
                    kind: ParseErrorKind::BadNumber(text),
                    pos,
                }),
            Tok::Ident(name) => {
                if *self.peek() == Tok::LParen {
                    let func = Func::from_name(&name).ok_or(ParseError {
                        kind: ParseErrorKind::UnknownFunction(name.clone()),
                        pos,
                    })?;
                    self.bump();
                    let arg = self.expr()?;
                    if *self.peek() != Tok::RParen {
                        return Err(self.unexpected("')'"));
                    }
                    self.bump();
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                parse_variable(&name).map(Expr::Var).ok_or(ParseError {
                    kind: ParseErrorKind::UnknownIdentifier(name),
                    pos,
                })
            }
            Tok::LParen => {
                let e = self.expr()?;
                if *self.peek() != Tok::RParen {
                    return Err(self.unexpected("')'"));
                }
                self.bump();
                Ok(e)
            }
            _ => Err(ParseError {
                kind: ParseErrorKind::Unexpected {
                    expected: "number, variable, function or '('",
                    found: tok.to_string(),
                },
                pos,
            }),
        }
    }
}

/// Parse an expression. Any `x<i>`, `u<i>`, `y<i>` or `s` is accepted; use
/// [`parse_with`] to check variables against declared arities.
pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let mut p = Parser {
        toks: tokenize(text)?,
        pos: 0,
    };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(p.unexpected("operator or end of input"));
    }
    Ok(e)
}

/// Declared input arities of a vector function.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Arity {
    pub x: usize,
    pub u: usize,
    pub y: usize,
}

impl Arity {
    pub fn x(n: usize) -> Self {
        Self {
            x: n,
            ..Self::default()
        }
    }

    pub fn xu(n: usize, m: usize) -> Self {
        Self {
            x: n,
            u: m,
            ..Self::default()
        }
    }

    pub fn y(p: usize) -> Self {
        Self {
            y: p,
            ..Self::default()
        }
    }

    pub fn of(&self, block: Block) -> usize {
        match block {
            Block::X => self.x,
            Block::U => self.u,
            Block::Y => self.y,
            Block::S => 0,
        }
    }

    fn admits(&self, v: Var) -> bool {
        v.index < self.of(v.block)
    }

    /// The variable that `s` stands for, when exactly one input is declared.
    fn single_input(&self) -> Option<Var> {
        match (self.x, self.u, self.y) {
            (1, 0, 0) => Some(Var::x(0)),
            (0, 1, 0) => Some(Var::u(0)),
            (0, 0, 1) => Some(Var::y(0)),
            _ => None,
        }
    }
}

/// Parse and check every variable against `arity`, resolving `s`.
pub fn parse_with(text: &str, arity: Arity) -> Result<Expr, ParseError> {
    let toks = tokenize(text)?;
    let e = parse(text)?;
    let mut bad = None;
    e.for_each_var(&mut |v| {
        let ok = if v.block == Block::S {
            arity.single_input().is_some()
        } else {
            arity.admits(v)
        };
        if !ok && bad.is_none() {
            bad = Some(v);
        }
    });
    if let Some(v) = bad {
        let name = v.to_string();
        let pos = toks
            .iter()
            .find(|(t, _)| *t == Tok::Ident(name.clone()))
            .map_or(0, |(_, p)| *p);
        return Err(ParseError {
            kind: ParseErrorKind::UnknownIdentifier(name),
            pos,
        });
    }
    Ok(match arity.single_input() {
        Some(target) => e.rename(Var::S, target),
        None => e,
    })
}

// Vector functions --------------------------------------------------------

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("component {index}: {source}")]
    Parse {
        index: usize,
        #[source]
        source: ParseError,
    },
    #[error("component {index} uses variable {var} outside the declared arity")]
    Arity { index: usize, var: Var },
    #[error("a vector function needs at least one component")]
    Empty,
}

/// Ordered tuple of expressions sharing the same argument blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorFunction {
    arity: Arity,
    components: Vec<Expr>,
}

impl VectorFunction {
    pub fn new(components: Vec<Expr>, arity: Arity) -> Result<Self, ExprError> {
        if components.is_empty() {
            return Err(ExprError::Empty);
        }
        for (index, c) in components.iter().enumerate() {
            let mut bad = None;
            c.for_each_var(&mut |v| {
                if !arity.admits(v) && bad.is_none() {
                    bad = Some(v);
                }
            });
            if let Some(var) = bad {
                return Err(ExprError::Arity { index, var });
            }
        }
        Ok(Self { arity, components })
    }

    pub fn parse<S: AsRef<str>>(texts: &[S], arity: Arity) -> Result<Self, ExprError> {
        let components = texts
            .iter()
            .enumerate()
            .map(|(index, t)| {
                parse_with(t.as_ref(), arity).map_err(|source| ExprError::Parse { index, source })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(components, arity)
    }

    pub fn arity(&self) -> Arity {
        self.arity
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn eval(&self, env: &Env<'_>) -> Result<Vec<f64>, EvalError> {
        self.components.iter().map(|c| c.eval(env)).collect()
    }

    pub fn eval_into(&self, env: &Env<'_>, out: &mut [f64]) -> Result<(), EvalError> {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.eval(env)?;
        }
        Ok(())
    }

    /// Symbolic Jacobian with respect to one argument block.
    pub fn jacobian(&self, block: Block) -> ExprMatrix {
        let cols = self.arity.of(block);
        let entries = self
            .components
            .iter()
            .flat_map(|c| (0..cols).map(move |j| c.diff(Var { block, index: j })))
            .collect();
        ExprMatrix {
            rows: self.components.len(),
            cols,
            entries,
        }
    }
}

/// Matrix of expressions, e.g. a symbolic Jacobian.
#[derive(Clone, Debug, PartialEq)]
pub struct ExprMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<Expr>,
}

impl ExprMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<Expr>) -> Option<Self> {
        (entries.len() == rows * cols).then_some(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn parse<S: AsRef<str>>(rows: &[Vec<S>], arity: Arity) -> Result<Self, ExprError> {
        let ncols = rows.first().map_or(0, Vec::len);
        let mut entries = Vec::new();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != ncols {
                return Err(ExprError::Empty);
            }
            for t in r {
                entries.push(
                    parse_with(t.as_ref(), arity)
                        .map_err(|source| ExprError::Parse { index: i, source })?,
                );
            }
        }
        Ok(Self {
            rows: rows.len(),
            cols: ncols,
            entries,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &Expr {
        &self.entries[i * self.cols + j]
    }

    pub fn eval(&self, env: &Env<'_>) -> Result<Matrix, EvalError> {
        let data = self
            .entries
            .iter()
            .map(|e| e.eval(env))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Matrix::new(self.rows, self.cols, data).expect("shape matches entries"))
    }
}
