//! Small arithmetic expression language for densities and nonlinearities.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | name | name '(' expr ')' | '(' expr ')'
//! ```
//!
//! Names: `x1`..`xd` are point coordinates, `r` is the Euclidean norm of the
//! point, `y1`..`yn` are solution components and a bare `y` is the scalar
//! component seen by a componentwise map. `pi` and `e` are constants.
//! Functions: `exp`, `sin`, `cos`, `abs`, `sqrt`.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("unexpected character '{ch}' at offset {pos}")]
    UnexpectedChar { ch: char, pos: usize },
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("unexpected token at offset {pos}: {found}")]
    UnexpectedToken { pos: usize, found: String },
    #[error("unknown name '{0}'")]
    UnknownName(String),
    #[error("unknown function '{0}'")]
    UnknownFunction(String),
    #[error("coordinate '{name}' out of range for dimension {dim}")]
    CoordinateOutOfRange { name: String, dim: usize },
    #[error("component '{name}' out of range for {n} components")]
    ComponentOutOfRange { name: String, n: usize },
    #[error("invalid number literal '{0}'")]
    BadNumber(String),
}

/// Which variables an expression may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scope {
    pub dimension: usize,
    /// Number of `y1..yn` components; zero forbids them.
    pub components: usize,
    /// Whether a bare `y` is allowed.
    pub scalar_y: bool,
}

impl Scope {
    pub fn spatial(dimension: usize) -> Self {
        Self {
            dimension,
            components: 0,
            scalar_y: false,
        }
    }

    pub fn system(dimension: usize, components: usize) -> Self {
        Self {
            dimension,
            components,
            scalar_y: false,
        }
    }

    pub fn componentwise(dimension: usize) -> Self {
        Self {
            dimension,
            components: 0,
            scalar_y: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Exp,
    Sin,
    Cos,
    Abs,
    Sqrt,
}

impl Func {
    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Exp => v.exp(),
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Abs => v.abs(),
            Func::Sqrt => v.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    X(usize),
    Y(usize),
    Norm,
    Neg(Box<Node>),
    Bin(Op, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

impl Node {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Node::Const(c) => *c,
            Node::X(i) => x[*i],
            Node::Y(i) => y[*i],
            Node::Norm => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Node::Neg(a) => -a.eval(x, y),
            Node::Bin(op, a, b) => {
                let (a, b) = (a.eval(x, y), b.eval(x, y));
                apply_op(*op, a, b)
            }
            Node::Call(f, a) => f.apply(a.eval(x, y)),
        }
    }

    fn is_const(&self) -> Option<f64> {
        match self {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }
}

fn apply_op(op: Op, a: f64, b: f64) -> f64 {
    match op {
        Op::Add => a + b,
        Op::Sub => a - b,
        Op::Mul => a * b,
        Op::Div => a / b,
        Op::Pow => {
            if b == b.trunc() && b.abs() <= 16.0 {
                a.powi(b as i32)
            } else {
                a.powf(b)
            }
        }
    }
}

/// A parsed, constant-folded expression. Cheap to clone.
#[derive(Clone)]
pub struct Expr {
    root: Arc<Node>,
    source: Arc<str>,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", &*self.source)
    }
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
    }
}

impl Expr {
    pub fn parse(source: &str, scope: Scope) -> Result<Self, ExprError> {
        let tokens = tokenize(source)?;
        let mut p = Parser {
            tokens: &tokens,
            pos: 0,
            scope,
        };
        let root = p.expr()?;
        if let Some(tok) = p.peek() {
            return Err(ExprError::UnexpectedToken {
                pos: tok.pos,
                found: tok.kind.to_string(),
            });
        }
        Ok(Self {
            root: Arc::new(root),
            source: source.into(),
        })
    }

    pub fn constant(c: f64) -> Self {
        Self {
            root: Arc::new(Node::Const(c)),
            source: format!("{c}").into(),
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.root.eval(x, y)
    }

    /// Evaluate an expression that depends on the point only.
    #[inline]
    pub fn eval_at(&self, x: &[f64]) -> f64 {
        self.root.eval(x, &[])
    }

    pub fn as_constant(&self) -> Option<f64> {
        self.root.is_const()
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

impl fmt::Display for TokKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokKind::Num(v) => write!(f, "{v}"),
            TokKind::Ident(s) => write!(f, "{s}"),
            TokKind::Plus => f.write_str("+"),
            TokKind::Minus => f.write_str("-"),
            TokKind::Star => f.write_str("*"),
            TokKind::Slash => f.write_str("/"),
            TokKind::Caret => f.write_str("^"),
            TokKind::LParen => f.write_str("("),
            TokKind::RParen => f.write_str(")"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    pos: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let simple = match c {
            '+' => Some(TokKind::Plus),
            '-' => Some(TokKind::Minus),
            '*' => Some(TokKind::Star),
            '/' => Some(TokKind::Slash),
            '^' => Some(TokKind::Caret),
            '(' => Some(TokKind::LParen),
            ')' => Some(TokKind::RParen),
            _ => None,
        };
        if let Some(kind) = simple {
            out.push(Token { kind, pos: i });
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            // exponent part, e.g. 1e-3
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
            let v: f64 = text
                .parse()
                .map_err(|_| ExprError::BadNumber(text.to_string()))?;
            out.push(Token {
                kind: TokKind::Num(v),
                pos: start,
            });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                kind: TokKind::Ident(src[start..i].to_string()),
                pos: start,
            });
            continue;
        }
        return Err(ExprError::UnexpectedChar { ch: c, pos: i });
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    scope: Scope,
}

fn fold(op: Op, a: Node, b: Node) -> Node {
    match (a.is_const(), b.is_const()) {
        (Some(x), Some(y)) => Node::Const(apply_op(op, x, y)),
        _ => Node::Bin(op, Box::new(a), Box::new(b)),
    }
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Result<&'a Token, ExprError> {
        let t = self.tokens.get(self.pos).ok_or(ExprError::UnexpectedEnd)?;
        self.pos += 1;
        Ok(t)
    }

    fn eat(&mut self, kind: &TokKind) -> bool {
        if self.peek().map(|t| &t.kind) == Some(kind) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().map(|t| &t.kind) {
                Some(TokKind::Plus) => Op::Add,
                Some(TokKind::Minus) => Op::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = fold(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().map(|t| &t.kind) {
                Some(TokKind::Star) => Op::Mul,
                Some(TokKind::Slash) => Op::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = fold(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.eat(&TokKind::Minus) {
            let inner = self.unary()?;
            return Ok(match inner.is_const() {
                Some(c) => Node::Const(-c),
                None => Node::Neg(Box::new(inner)),
            });
        }
        if self.eat(&TokKind::Plus) {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.eat(&TokKind::Caret) {
            let exp = self.unary()?;
            return Ok(fold(Op::Pow, base, exp));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let tok = self.next()?;
        match &tok.kind {
            TokKind::Num(v) => Ok(Node::Const(*v)),
            TokKind::LParen => {
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            TokKind::Ident(name) => {
                if self.eat(&TokKind::LParen) {
                    let func = match name.as_str() {
                        "exp" => Func::Exp,
                        "sin" => Func::Sin,
                        "cos" => Func::Cos,
                        "abs" => Func::Abs,
                        "sqrt" => Func::Sqrt,
                        _ => return Err(ExprError::UnknownFunction(name.clone())),
                    };
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    return Ok(match arg.is_const() {
                        Some(c) => Node::Const(func.apply(c)),
                        None => Node::Call(func, Box::new(arg)),
                    });
                }
                self.variable(name)
            }
            other => Err(ExprError::UnexpectedToken {
                pos: tok.pos,
                found: other.to_string(),
            }),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        match self.peek() {
            Some(t) if t.kind == TokKind::RParen => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(ExprError::UnexpectedToken {
                pos: t.pos,
                found: t.kind.to_string(),
            }),
            None => Err(ExprError::UnexpectedEnd),
        }
    }

    fn variable(&self, name: &str) -> Result<Node, ExprError> {
        match name {
            "pi" => return Ok(Node::Const(std::f64::consts::PI)),
            "e" => return Ok(Node::Const(std::f64::consts::E)),
            "r" => return Ok(Node::Norm),
            "y" if self.scope.scalar_y => return Ok(Node::Y(0)),
            _ => {}
        }
        let index = |prefix: &str| -> Option<usize> {
            name.strip_prefix(prefix)
                .filter(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
                .and_then(|rest| rest.parse::<usize>().ok())
        };
        if let Some(i) = index("x") {
            if i == 0 || i > self.scope.dimension {
                return Err(ExprError::CoordinateOutOfRange {
                    name: name.to_string(),
                    dim: self.scope.dimension,
                });
            }
            return Ok(Node::X(i - 1));
        }
        if let Some(i) = index("y") {
            if i == 0 || i > self.scope.components {
                return Err(ExprError::ComponentOutOfRange {
                    name: name.to_string(),
                    n: self.scope.components,
                });
            }
            return Ok(Node::Y(i - 1));
        }
        Err(ExprError::UnknownName(name.to_string()))
    }
}
