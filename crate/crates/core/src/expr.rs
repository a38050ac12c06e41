//! Scalar expression language used by problem definitions.
//!
//! Expressions are written in the variables `x` and `y` (or `n` for sequence
//! rules such as atom generators and recurrence coefficients). Grammar, from
//! loosest to tightest binding:
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := primary ('^' unary)?          right-associative
//! primary := number | ident | ident '(' args ')' | '(' sum ')'
//! ```
//!
//! Functions: `sin cos exp log abs sqrt` (one argument), `min max` (two).
//! Constants: `pi`, `e`. There is no implicit multiplication, so `2x` is a
//! syntax error.

use std::fmt;

use thiserror::Error;

/// Parse failures. Offsets are byte offsets into the source text.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("function `{name}` at offset {offset} takes {expected} argument(s), got {found}")]
    Arity {
        name: String,
        offset: usize,
        expected: usize,
        found: usize,
    },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::UnknownIdentifier { offset, .. }
            | ParseError::Arity { offset, .. } => *offset,
        }
    }
}

/// Evaluation failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("expression references y but no value for y was supplied")]
    MissingY,
    #[error("{func}({arg}) is outside the function's domain")]
    Domain { func: &'static str, arg: f64 },
    #[error("non-finite result while evaluating `{context}`")]
    NonFinite { context: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Abs,
    Sqrt,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

/// Abstract syntax node.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// Which identifiers name variables for a given parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Vars {
    /// `x` and `y`.
    Point,
    /// `n`, stored in the `x` slot.
    Index,
}

impl Vars {
    fn resolve(self, name: &str) -> Option<Var> {
        match (self, name) {
            (Vars::Point, "x") => Some(Var::X),
            (Vars::Point, "y") => Some(Var::Y),
            (Vars::Index, "n") => Some(Var::X),
            _ => None,
        }
    }

    fn name(self, v: Var) -> &'static str {
        match (self, v) {
            (Vars::Point, Var::X) => "x",
            (Vars::Point, Var::Y) => "y",
            (Vars::Index, _) => "n",
        }
    }
}

/// A parsed, immutable expression.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
    vars: Vars,
    source: String,
}

/// Parse an expression in `x` and `y`.
pub fn parse_expr(text: &str) -> Result<Expr, ParseError> {
    Parser::new(text, Vars::Point).parse()
}

/// Parse a sequence rule in the index variable `n`.
pub fn parse_sequence(text: &str) -> Result<Expr, ParseError> {
    Parser::new(text, Vars::Index).parse()
}

/// Evaluate `e` at `(x, y)`.
pub fn eval_expr(e: &Expr, x: f64, y: Option<f64>) -> Result<f64, EvalError> {
    e.eval_opt(x, y)
}

impl Expr {
    /// The constant expression `value`.
    pub fn constant(value: f64) -> Expr {
        Expr {
            root: Node::Num(value),
            vars: Vars::Point,
            source: format!("{value:?}"),
        }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// Text the expression was parsed from.
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn uses_y(&self) -> bool {
        fn walk(n: &Node) -> bool {
            match n {
                Node::Num(_) => false,
                Node::Var(v) => *v == Var::Y,
                Node::Neg(a) => walk(a),
                Node::Bin(_, a, b) => walk(a) || walk(b),
                Node::Call(_, args) => args.iter().any(walk),
            }
        }
        walk(&self.root)
    }

    /// True when the expression is the literal constant zero (after folding
    /// sub-expressions that contain no variables).
    pub fn is_identically_zero(&self) -> bool {
        matches!(fold(&self.root), Some(v) if v == 0.0)
    }

    /// Evaluate with both variables bound.
    pub fn eval(&self, x: f64, y: f64) -> Result<f64, EvalError> {
        self.eval_opt(x, Some(y))
    }

    /// Evaluate an expression that does not reference `y`.
    pub fn eval_x(&self, x: f64) -> Result<f64, EvalError> {
        self.eval_opt(x, None)
    }

    pub fn eval_opt(&self, x: f64, y: Option<f64>) -> Result<f64, EvalError> {
        let v = eval_node(&self.root, x, y, self)?;
        Ok(v)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(f, &self.root, self.vars)
    }
}

fn write_node(f: &mut fmt::Formatter<'_>, n: &Node, vars: Vars) -> fmt::Result {
    match n {
        Node::Num(v) => write!(f, "{v:?}"),
        Node::Var(v) => f.write_str(vars.name(*v)),
        Node::Neg(a) => {
            f.write_str("(-")?;
            write_node(f, a, vars)?;
            f.write_str(")")
        }
        Node::Bin(op, a, b) => {
            f.write_str("(")?;
            write_node(f, a, vars)?;
            write!(f, " {} ", op.symbol())?;
            write_node(f, b, vars)?;
            f.write_str(")")
        }
        Node::Call(func, args) => {
            write!(f, "{}(", func.name())?;
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write_node(f, a, vars)?;
            }
            f.write_str(")")
        }
    }
}

fn fold(n: &Node) -> Option<f64> {
    match n {
        Node::Num(v) => Some(*v),
        Node::Var(_) => None,
        Node::Neg(a) => fold(a).map(|v| -v),
        Node::Bin(op, a, b) => {
            let (a, b) = (fold(a)?, fold(b)?);
            let r = apply_bin(*op, a, b);
            r.is_finite().then_some(r)
        }
        Node::Call(func, args) => {
            let vals: Option<Vec<f64>> = args.iter().map(fold).collect();
            let r = apply_call(*func, &vals?).ok()?;
            r.is_finite().then_some(r)
        }
    }
}

fn apply_bin(op: BinOp, a: f64, b: f64) -> f64 {
    match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => a / b,
        BinOp::Pow => pow(a, b),
    }
}

fn pow(a: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && b.abs() <= i32::MAX as f64 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

fn apply_call(func: Func, args: &[f64]) -> Result<f64, EvalError> {
    let a = args[0];
    Ok(match func {
        Func::Sin => a.sin(),
        Func::Cos => a.cos(),
        Func::Exp => a.exp(),
        Func::Log => {
            if a <= 0.0 {
                return Err(EvalError::Domain { func: "log", arg: a });
            }
            a.ln()
        }
        Func::Abs => a.abs(),
        Func::Sqrt => {
            if a < 0.0 {
                return Err(EvalError::Domain { func: "sqrt", arg: a });
            }
            a.sqrt()
        }
        Func::Min => a.min(args[1]),
        Func::Max => a.max(args[1]),
    })
}

fn eval_node(n: &Node, x: f64, y: Option<f64>, whole: &Expr) -> Result<f64, EvalError> {
    let v = match n {
        Node::Num(v) => return Ok(*v),
        Node::Var(Var::X) => return Ok(x),
        Node::Var(Var::Y) => return y.ok_or(EvalError::MissingY),
        Node::Neg(a) => -eval_node(a, x, y, whole)?,
        Node::Bin(op, a, b) => {
            let a = eval_node(a, x, y, whole)?;
            let b = eval_node(b, x, y, whole)?;
            apply_bin(*op, a, b)
        }
        Node::Call(func, args) => match args.as_slice() {
            [a] => apply_call(*func, &[eval_node(a, x, y, whole)?])?,
            [a, b] => apply_call(
                *func,
                &[eval_node(a, x, y, whole)?, eval_node(b, x, y, whole)?],
            )?,
            _ => unreachable!("arity checked at parse time"),
        },
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite {
            context: whole.source.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
    End,
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<(Tok, usize)>,
    pos: usize,
    vars: Vars,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, vars: Vars) -> Self {
        Parser {
            src,
            toks: Vec::new(),
            pos: 0,
            vars,
        }
    }

    fn parse(mut self) -> Result<Expr, ParseError> {
        if self.src.trim().is_empty() {
            return Err(ParseError::Syntax {
                offset: 0,
                message: "empty expression".into(),
            });
        }
        self.toks = lex(self.src)?;
        let root = self.sum()?;
        let (tok, off) = self.peek();
        if *tok != Tok::End {
            return Err(ParseError::Syntax {
                offset: off,
                message: format!("unexpected {}", describe(tok)),
            });
        }
        Ok(Expr {
            root,
            vars: self.vars,
            source: self.src.to_string(),
        })
    }

    fn peek(&self) -> (&Tok, usize) {
        let (t, o) = &self.toks[self.pos];
        (t, *o)
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn sum(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek().0 {
                Tok::Op('+') => BinOp::Add,
                Tok::Op('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.product()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn product(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().0 {
                Tok::Op('*') => BinOp::Mul,
                Tok::Op('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        match self.peek().0 {
            Tok::Op('-') => {
                self.bump();
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Tok::Op('+') => {
                self.bump();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.primary()?;
        if let Tok::Op('^') = self.peek().0 {
            self.bump();
            let exp = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node, ParseError> {
        let (tok, off) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Node::Num(v)),
            Tok::LParen => {
                let inner = self.sum()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if let Tok::LParen = self.peek().0 {
                    let func = Func::lookup(&name).ok_or_else(|| ParseError::UnknownIdentifier {
                        name: name.clone(),
                        offset: off,
                    })?;
                    self.bump();
                    let mut args = Vec::new();
                    if self.peek().0 != &Tok::RParen {
                        loop {
                            args.push(self.sum()?);
                            if let Tok::Comma = self.peek().0 {
                                self.bump();
                            } else {
                                break;
                            }
                        }
                    }
                    self.expect_rparen()?;
                    if args.len() != func.arity() {
                        return Err(ParseError::Arity {
                            name,
                            offset: off,
                            expected: func.arity(),
                            found: args.len(),
                        });
                    }
                    return Ok(Node::Call(func, args));
                }
                if let Some(v) = self.vars.resolve(&name) {
                    return Ok(Node::Var(v));
                }
                match name.as_str() {
                    "pi" => Ok(Node::Num(std::f64::consts::PI)),
                    "e" => Ok(Node::Num(std::f64::consts::E)),
                    _ => Err(ParseError::UnknownIdentifier { name, offset: off }),
                }
            }
            other => Err(ParseError::Syntax {
                offset: off,
                message: format!("expected an operand, found {}", describe(&other)),
            }),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        let (tok, off) = self.bump();
        if tok == Tok::RParen {
            Ok(())
        } else {
            Err(ParseError::Syntax {
                offset: off,
                message: format!("expected `)`, found {}", describe(&tok)),
            })
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(v) => format!("number {v}"),
        Tok::Ident(s) => format!("identifier `{s}`"),
        Tok::Op(c) => format!("`{c}`"),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::Comma => "`,`".into(),
        Tok::End => "end of input".into(),
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'0'..=b'9' | b'.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                // exponent only when followed by digits, so `2*e` and `2e` stay distinct
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
                let v: f64 = text.parse().map_err(|_| ParseError::Syntax {
                    offset: start,
                    message: format!("malformed number `{text}`"),
                })?;
                if !v.is_finite() {
                    return Err(ParseError::Syntax {
                        offset: start,
                        message: format!("number `{text}` is out of range"),
                    });
                }
                out.push((Tok::Num(v), start));
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
            }
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                out.push((Tok::Op(c as char), i));
                i += 1;
            }
            b'(' => {
                out.push((Tok::LParen, i));
                i += 1;
            }
            b')' => {
                out.push((Tok::RParen, i));
                i += 1;
            }
            b',' => {
                out.push((Tok::Comma, i));
                i += 1;
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(ParseError::Syntax {
                    offset: i,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        }
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}
