//! A small expression language for coefficient and payoff functions.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?          right-associative
//! primary := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Identifiers are resolved when an [`Expr`] is bound: `x`, `x1`..`xn` and `t`
//! are variables, everything else must be a named constant (`pi` is always
//! available).

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Errors raised while parsing, binding or evaluating an expression.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}`")]
    UnknownIdentifier { name: String },
    #[error("evaluation produced a non-finite value")]
    Evaluation,
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
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
    Abs,
    Min,
    Max,
}

impl Func {
    pub const ALL: [Func; 8] = [
        Func::Exp,
        Func::Log,
        Func::Sin,
        Func::Cos,
        Func::Sqrt,
        Func::Abs,
        Func::Min,
        Func::Max,
    ];

    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
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

/// Parsed expression tree. Literals produced by the parser are never negative.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Ident(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl fmt::Display for Expr {
    /// Fully parenthesised form; parsing it back yields the same tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Ident(name) => f.write_str(name),
            Expr::Neg(inner) => write!(f, "(-{inner})"),
            Expr::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<(Token, usize)>, ExprError> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        loop {
            let (tok, at) = lx.next_token()?;
            let end = tok == Token::End;
            out.push((tok, at));
            if end {
                return Ok(out);
            }
        }
    }

    fn next_token(&mut self) -> Result<(Token, usize), ExprError> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&c) = bytes.get(self.pos) else {
            return Ok((Token::End, start));
        };
        let tok = match c {
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                self.pos += 1;
                Token::Op(c as char)
            }
            b'(' => {
                self.pos += 1;
                Token::LParen
            }
            b')' => {
                self.pos += 1;
                Token::RParen
            }
            b',' => {
                self.pos += 1;
                Token::Comma
            }
            b'0'..=b'9' | b'.' => self.number(start)?,
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while self.pos < bytes.len()
                    && (bytes[self.pos].is_ascii_alphanumeric() || bytes[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                Token::Ident(self.src[start..self.pos].to_string())
            }
            _ => {
                return Err(ExprError::Syntax {
                    offset: start,
                    message: format!("unexpected character `{}`", self.src[start..].chars().next().unwrap_or('?')),
                })
            }
        };
        Ok((tok, start))
    }

    fn number(&mut self, start: usize) -> Result<Token, ExprError> {
        let bytes = self.src.as_bytes();
        let digits = |pos: &mut usize| {
            let from = *pos;
            while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
                *pos += 1;
            }
            *pos > from
        };
        let mut any = digits(&mut self.pos);
        if bytes.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            any |= digits(&mut self.pos);
        }
        if !any {
            return Err(ExprError::Syntax { offset: start, message: "malformed number".into() });
        }
        if matches!(bytes.get(self.pos), Some(b'e' | b'E')) {
            let mut look = self.pos + 1;
            if matches!(bytes.get(look), Some(b'+' | b'-')) {
                look += 1;
            }
            if bytes.get(look).is_some_and(u8::is_ascii_digit) {
                self.pos = look;
                digits(&mut self.pos);
            }
        }
        self.src[start..self.pos]
            .parse::<f64>()
            .map(Token::Num)
            .map_err(|_| ExprError::Syntax { offset: start, message: "malformed number".into() })
    }
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.at].0
    }

    fn offset(&self) -> usize {
        self.tokens[self.at].1
    }

    fn bump(&mut self) -> Token {
        let tok = self.tokens[self.at].0.clone();
        if tok != Token::End {
            self.at += 1;
        }
        tok
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Syntax { offset: self.offset(), message: message.into() })
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let Token::Op(c @ ('+' | '-')) = *self.peek() {
            self.bump();
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Token::Op(c @ ('*' | '/')) = *self.peek() {
            self.bump();
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if *self.peek() == Token::Op('-') {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if *self.peek() == Token::Op('^') {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        match self.peek().clone() {
            Token::Num(v) => {
                self.bump();
                Ok(Expr::Num(v))
            }
            Token::Ident(name) => {
                let name_offset = self.offset();
                self.bump();
                if *self.peek() != Token::LParen {
                    return Ok(Expr::Ident(name));
                }
                let Some(func) = Func::from_name(&name) else {
                    return Err(ExprError::Syntax {
                        offset: name_offset,
                        message: format!("unknown function `{name}`"),
                    });
                };
                self.bump();
                let mut args = vec![self.expr()?];
                while *self.peek() == Token::Comma {
                    self.bump();
                    args.push(self.expr()?);
                }
                if *self.peek() != Token::RParen {
                    return self.error("expected `)` or `,`");
                }
                self.bump();
                if args.len() != func.arity() {
                    return Err(ExprError::Syntax {
                        offset: name_offset,
                        message: format!("`{}` takes {} argument(s), got {}", func.name(), func.arity(), args.len()),
                    });
                }
                Ok(Expr::Call(func, args))
            }
            Token::LParen => {
                self.bump();
                let inner = self.expr()?;
                if *self.peek() != Token::RParen {
                    return self.error("expected `)`");
                }
                self.bump();
                Ok(inner)
            }
            Token::End => self.error("unexpected end of input"),
            other => self.error(format!("unexpected token {other:?}")),
        }
    }
}

/// Parses `source` into an expression tree.
pub fn parse_expr(source: &str) -> Result<Expr, ExprError> {
    let mut parser = Parser { tokens: Lexer::tokens(source)?, at: 0 };
    let expr = parser.expr()?;
    if *parser.peek() != Token::End {
        return parser.error("unexpected trailing input");
    }
    Ok(expr)
}

/// Named constants available to expressions.
#[derive(Debug, Clone)]
pub struct Bindings {
    constants: BTreeMap<String, f64>,
}

impl Default for Bindings {
    fn default() -> Self {
        let mut constants = BTreeMap::new();
        constants.insert("pi".to_string(), std::f64::consts::PI);
        Self { constants }
    }
}

impl Bindings {
    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.insert(name, value);
        self
    }

    pub fn insert(&mut self, name: &str, value: f64) {
        self.constants.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.constants.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.constants.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

#[derive(Debug, Clone)]
enum Node {
    Num(f64),
    Coord(usize),
    Time,
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// An expression with identifiers resolved, ready for evaluation at `(x, t)`.
#[derive(Debug, Clone)]
pub struct CompiledExpr {
    root: Node,
    source: String,
    max_coord: Option<usize>,
}

impl Expr {
    /// Resolves identifiers: `x`/`x1` is the first coordinate, `xk` the k-th,
    /// `t` time, and anything else a constant from `bindings`.
    pub fn bind(&self, bindings: &Bindings) -> Result<CompiledExpr, ExprError> {
        self.bind_vars(bindings, &[])
    }

    /// Like [`Expr::bind`], but the names in `vars` are coordinates `0, 1, …`
    /// in order and the default coordinate names are not recognised.
    pub fn bind_vars(&self, bindings: &Bindings, vars: &[&str]) -> Result<CompiledExpr, ExprError> {
        let mut max_coord = None;
        let root = Self::lower(self, bindings, vars, &mut max_coord)?;
        Ok(CompiledExpr { root, source: self.to_string(), max_coord })
    }

    fn lower(e: &Expr, b: &Bindings, vars: &[&str], max_coord: &mut Option<usize>) -> Result<Node, ExprError> {
        let coord = |name: &str| {
            if vars.is_empty() {
                coord_index(name)
            } else {
                vars.iter().position(|v| *v == name)
            }
        };
        Ok(match e {
            Expr::Num(v) => Node::Num(*v),
            Expr::Ident(name) => {
                if let Some(v) = b.get(name) {
                    Node::Num(v)
                } else if name == "t" {
                    Node::Time
                } else if let Some(k) = coord(name) {
                    *max_coord = Some(max_coord.map_or(k, |m: usize| m.max(k)));
                    Node::Coord(k)
                } else {
                    return Err(ExprError::UnknownIdentifier { name: name.clone() });
                }
            }
            Expr::Neg(inner) => Node::Neg(Box::new(Self::lower(inner, b, vars, max_coord)?)),
            Expr::Bin(op, l, r) => Node::Bin(
                *op,
                Box::new(Self::lower(l, b, vars, max_coord)?),
                Box::new(Self::lower(r, b, vars, max_coord)?),
            ),
            Expr::Call(f, args) => Node::Call(
                *f,
                args.iter().map(|a| Self::lower(a, b, vars, max_coord)).collect::<Result<_, _>>()?,
            ),
        })
    }
}

fn coord_index(name: &str) -> Option<usize> {
    if name == "x" {
        return Some(0);
    }
    let digits = name.strip_prefix('x')?;
    let k: usize = digits.parse().ok()?;
    (k >= 1 && !digits.starts_with('0')).then(|| k - 1)
}

impl CompiledExpr {
    pub fn source(&self) -> &str {
        &self.source
    }

    /// Number of coordinates the expression reads (0 if it reads none).
    pub fn dimension_used(&self) -> usize {
        self.max_coord.map_or(0, |k| k + 1)
    }

    /// Evaluates without checking the result; out-of-range coordinates read 0.
    pub fn eval_raw(&self, x: &[f64], t: f64) -> f64 {
        eval_node(&self.root, x, t)
    }

    pub fn eval(&self, x: &[f64], t: f64) -> Result<f64, ExprError> {
        let v = self.eval_raw(x, t);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ExprError::Evaluation)
        }
    }
}

fn eval_node(node: &Node, x: &[f64], t: f64) -> f64 {
    match node {
        Node::Num(v) => *v,
        Node::Coord(k) => x.get(*k).copied().unwrap_or(0.0),
        Node::Time => t,
        Node::Neg(inner) => -eval_node(inner, x, t),
        Node::Bin(op, l, r) => {
            let a = eval_node(l, x, t);
            let b = eval_node(r, x, t);
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => a / b,
                BinOp::Pow => pow(a, b),
            }
        }
        Node::Call(f, args) => {
            let a = eval_node(&args[0], x, t);
            match f {
                Func::Exp => a.exp(),
                Func::Log => a.ln(),
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Sqrt => a.sqrt(),
                Func::Abs => a.abs(),
                Func::Min => a.min(eval_node(&args[1], x, t)),
                Func::Max => a.max(eval_node(&args[1], x, t)),
            }
        }
    }
}

fn pow(a: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && b.abs() <= 64.0 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

/// Parses and binds in one step.
pub fn compile(source: &str, bindings: &Bindings) -> Result<CompiledExpr, ExprError> {
    parse_expr(source)?.bind(bindings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn named_variables() {
        let e = parse_expr("y - 2*x + t").unwrap().bind_vars(&Bindings::default(), &["y", "x"]).unwrap();
        assert_eq!(e.eval(&[5.0, 1.0], 0.5).unwrap(), 3.5);
        assert!(parse_expr("x1").unwrap().bind_vars(&Bindings::default(), &["y", "x"]).is_err());
    }

    #[test]
    fn evaluates_with_bound_constant() {
        let b = Bindings::default().with("sigma", 0.2);
        let e = compile("0.5*sigma^2*x^2", &b).unwrap();
        assert!((e.eval(&[1.0], 0.0).unwrap() - 0.02).abs() < 1e-15);
        assert!((e.eval(&[3.0], 0.0).unwrap() - 0.18).abs() < 1e-15);
    }

    #[test]
    fn sine_of_pi_x() {
        let e = compile("sin(pi*x)", &Bindings::default()).unwrap();
        assert!((e.eval(&[0.5], 0.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dangling_operator_reports_offset() {
        assert_eq!(
            parse_expr("x +").unwrap_err(),
            ExprError::Syntax { offset: 3, message: "unexpected end of input".into() }
        );
    }

    #[test]
    fn precedence_and_associativity() {
        let b = Bindings::default();
        let v = |s: &str| compile(s, &b).unwrap().eval(&[], 0.0).unwrap();
        assert_eq!(v("2^3^2"), 512.0);
        assert_eq!(v("-2^2"), -4.0);
        assert_eq!(v("1 - 2 - 3"), -4.0);
        assert_eq!(v("8 / 4 / 2"), 1.0);
        assert_eq!(v("1 + 2 * 3"), 7.0);
        assert_eq!(v("2^-1"), 0.5);
        assert_eq!(v("max(1, min(3, 2))"), 2.0);
        assert_eq!(v("1.5e2 + .5"), 150.5);
    }

    #[test]
    fn variables_and_time() {
        let e = compile("x1 + 10*x2 + 100*t", &Bindings::default()).unwrap();
        assert_eq!(e.eval(&[1.0, 2.0], 3.0).unwrap(), 321.0);
        assert_eq!(e.dimension_used(), 2);
    }

    #[test]
    fn unknown_identifier_and_function() {
        assert_eq!(
            compile("sigma*x", &Bindings::default()).unwrap_err(),
            ExprError::UnknownIdentifier { name: "sigma".into() }
        );
        assert!(matches!(parse_expr("foo(x)"), Err(ExprError::Syntax { offset: 0, .. })));
        assert!(matches!(parse_expr("min(x)"), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse_expr("x $ 2"), Err(ExprError::Syntax { offset: 2, .. })));
    }

    #[test]
    fn non_finite_is_an_evaluation_error() {
        let e = compile("log(x)", &Bindings::default()).unwrap();
        assert_eq!(e.eval(&[-1.0], 0.0), Err(ExprError::Evaluation));
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0.0f64..1e6).prop_map(Expr::Num),
            prop_oneof![Just("x"), Just("t"), Just("x2"), Just("sigma")]
                .prop_map(|s| Expr::Ident(s.to_string())),
        ];
        leaf.prop_recursive(6, 48, 3, |inner| {
            prop_oneof![
                inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                (
                    prop_oneof![
                        Just(BinOp::Add),
                        Just(BinOp::Sub),
                        Just(BinOp::Mul),
                        Just(BinOp::Div),
                        Just(BinOp::Pow)
                    ],
                    inner.clone(),
                    inner.clone()
                )
                    .prop_map(|(op, a, b)| Expr::Bin(op, Box::new(a), Box::new(b))),
                (0..Func::ALL.len(), prop::collection::vec(inner, 2)).prop_map(|(i, mut args)| {
                    let f = Func::ALL[i];
                    args.truncate(f.arity());
                    Expr::Call(f, args)
                }),
            ]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn print_then_parse_is_identity(e in arb_expr()) {
            let printed = e.to_string();
            prop_assert_eq!(parse_expr(&printed).unwrap(), e);
        }
    }
}
