//! A tiny arithmetic expression language for coefficient fields.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | '+' unary | power
//! power   := atom ('^' unary)?          // right-associative
//! atom    := number | ident | ident '(' args ')' | '(' sum ')'
//! ```
//!
//! Identifiers are the declared variables plus the constants `pi` and `e`.
//! Functions: `sin cos exp log abs sqrt` (one argument) and `pow min max`
//! (two arguments).

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("empty expression")]
    Empty,
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("function `{name}` takes {expected} argument(s), found {found} (byte {offset})")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
        offset: usize,
    },
    #[error("missing binding for variable `{0}`")]
    MissingBinding(String),
    #[error("domain error: {0}")]
    Domain(String),
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
    Sin,
    Cos,
    Exp,
    Log,
    Abs,
    Sqrt,
    Pow,
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
            "pow" => Func::Pow,
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
            Func::Pow => "pow",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Pow | Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constant {
    Pi,
    E,
}

/// Abstract syntax tree. Variables are stored as slot indices into the
/// owning [`Expression`]'s variable list.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Const(Constant),
    Var(usize),
    Neg(Box<Node>),
    Binary(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// A parsed expression together with the variable names it may reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Node,
    vars: Vec<String>,
}

fn real_pow(base: f64, exponent: f64) -> Result<f64, ExprError> {
    if base < 0.0 && exponent.fract() != 0.0 {
        return Err(ExprError::Domain(format!(
            "negative base {base} raised to non-integer power {exponent}"
        )));
    }
    Ok(base.powf(exponent))
}

impl Node {
    fn eval(&self, slots: &[f64]) -> Result<f64, ExprError> {
        Ok(match self {
            Node::Num(v) => *v,
            Node::Const(Constant::Pi) => std::f64::consts::PI,
            Node::Const(Constant::E) => std::f64::consts::E,
            Node::Var(i) => slots[*i],
            Node::Neg(a) => -a.eval(slots)?,
            Node::Binary(op, a, b) => {
                let a = a.eval(slots)?;
                let b = b.eval(slots)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(ExprError::Domain(format!("division of {a} by zero")));
                        }
                        a / b
                    }
                    BinOp::Pow => real_pow(a, b)?,
                }
            }
            Node::Call(f, args) => {
                let a = args[0].eval(slots)?;
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Abs => a.abs(),
                    Func::Log => {
                        if a <= 0.0 {
                            return Err(ExprError::Domain(format!("log of non-positive {a}")));
                        }
                        a.ln()
                    }
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(ExprError::Domain(format!("sqrt of negative {a}")));
                        }
                        a.sqrt()
                    }
                    Func::Pow => real_pow(a, args[1].eval(slots)?)?,
                    Func::Min => a.min(args[1].eval(slots)?),
                    Func::Max => a.max(args[1].eval(slots)?),
                }
            }
        })
    }

    fn uses(&self, slot: usize) -> bool {
        match self {
            Node::Num(_) | Node::Const(_) => false,
            Node::Var(i) => *i == slot,
            Node::Neg(a) => a.uses(slot),
            Node::Binary(_, a, b) => a.uses(slot) || b.uses(slot),
            Node::Call(_, args) => args.iter().any(|a| a.uses(slot)),
        }
    }

    fn write(&self, vars: &[String], out: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            // `{:?}` is the shortest representation that round-trips exactly.
            Node::Num(v) if *v < 0.0 => write!(out, "(-{:?})", -v),
            Node::Num(v) => write!(out, "{v:?}"),
            Node::Const(Constant::Pi) => write!(out, "pi"),
            Node::Const(Constant::E) => write!(out, "e"),
            Node::Var(i) => write!(out, "{}", vars[*i]),
            Node::Neg(a) => {
                write!(out, "(-")?;
                a.write(vars, out)?;
                write!(out, ")")
            }
            Node::Binary(op, a, b) => {
                write!(out, "(")?;
                a.write(vars, out)?;
                write!(out, " {} ", op.symbol())?;
                b.write(vars, out)?;
                write!(out, ")")
            }
            Node::Call(f, args) => {
                write!(out, "{}(", f.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        write!(out, ", ")?;
                    }
                    a.write(vars, out)?;
                }
                write!(out, ")")
            }
        }
    }
}

impl Expression {
    /// Parses `source`, accepting only identifiers listed in `allowed_vars`
    /// (plus the constants `pi` and `e`).
    pub fn parse(source: &str, allowed_vars: &[&str]) -> Result<Expression, ExprError> {
        let vars: Vec<String> = allowed_vars.iter().map(|s| s.to_string()).collect();
        let tokens = tokenize(source)?;
        if tokens.is_empty() {
            return Err(ExprError::Empty);
        }
        let mut parser = Parser {
            tokens: &tokens,
            pos: 0,
            vars: &vars,
            end: source.len(),
        };
        let root = parser.sum()?;
        if let Some(tok) = parser.peek() {
            return Err(ExprError::Syntax {
                offset: tok.offset,
                message: format!("unexpected {}", tok.kind.describe()),
            });
        }
        Ok(Expression { root, vars })
    }

    /// Wraps an already-built tree. Variable slots must index into `vars`.
    pub fn from_node(root: Node, vars: &[&str]) -> Expression {
        Expression {
            root,
            vars: vars.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn constant(value: f64, vars: &[&str]) -> Expression {
        Expression::from_node(Node::Num(value), vars)
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn variables(&self) -> &[String] {
        &self.vars
    }

    /// True if the tree references the named variable.
    pub fn depends_on(&self, name: &str) -> bool {
        self.vars
            .iter()
            .position(|v| v == name)
            .is_some_and(|slot| self.root.uses(slot))
    }

    /// Evaluates with positional bindings in the order of [`Expression::variables`].
    pub fn eval(&self, slots: &[f64]) -> Result<f64, ExprError> {
        if slots.len() < self.vars.len() {
            return Err(ExprError::MissingBinding(self.vars[slots.len()].clone()));
        }
        let value = self.root.eval(slots)?;
        if !value.is_finite() {
            return Err(ExprError::Domain(format!("non-finite result {value}")));
        }
        Ok(value)
    }

    /// Evaluates with named bindings.
    pub fn evaluate(&self, bindings: &HashMap<&str, f64>) -> Result<f64, ExprError> {
        let slots = self
            .vars
            .iter()
            .map(|v| {
                bindings
                    .get(v.as_str())
                    .copied()
                    .ok_or_else(|| ExprError::MissingBinding(v.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.eval(&slots)
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.write(&self.vars, f)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            TokenKind::Num(v) => format!("number {v}"),
            TokenKind::Ident(s) => format!("identifier `{s}`"),
            TokenKind::Op(c) => format!("operator `{c}`"),
            TokenKind::LParen => "`(`".into(),
            TokenKind::RParen => "`)`".into(),
            TokenKind::Comma => "`,`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    offset: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                // Exponent only when digits follow, so `2*e` stays a constant.
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
                let value: f64 = text.parse().map_err(|_| ExprError::Syntax {
                    offset: start,
                    message: format!("malformed number `{text}`"),
                })?;
                out.push(Token {
                    kind: TokenKind::Num(value),
                    offset: start,
                });
                continue;
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push(Token {
                    kind: TokenKind::Ident(src[start..i].to_string()),
                    offset: start,
                });
                continue;
            }
            b'+' | b'-' | b'*' | b'/' | b'^' => out.push(Token {
                kind: TokenKind::Op(c as char),
                offset: start,
            }),
            b'(' => out.push(Token {
                kind: TokenKind::LParen,
                offset: start,
            }),
            b')' => out.push(Token {
                kind: TokenKind::RParen,
                offset: start,
            }),
            b',' => out.push(Token {
                kind: TokenKind::Comma,
                offset: start,
            }),
            _ => {
                let ch = src[start..].chars().next().unwrap_or('?');
                return Err(ExprError::Syntax {
                    offset: start,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        }
        i += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    vars: &'a [String],
    end: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next_offset(&self) -> usize {
        self.peek().map_or(self.end, |t| t.offset)
    }

    fn eat_op(&mut self, ops: &[char]) -> Option<char> {
        match self.peek() {
            Some(Token {
                kind: TokenKind::Op(c),
                ..
            }) if ops.contains(c) => {
                let c = *c;
                self.pos += 1;
                Some(c)
            }
            _ => None,
        }
    }

    fn expect(&mut self, kind: TokenKind) -> Result<(), ExprError> {
        match self.peek() {
            Some(t) if t.kind == kind => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(ExprError::Syntax {
                offset: t.offset,
                message: format!("expected {}, found {}", kind.describe(), t.kind.describe()),
            }),
            None => Err(ExprError::Syntax {
                offset: self.end,
                message: format!("expected {}, found end of input", kind.describe()),
            }),
        }
    }

    fn sum(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.product()?;
        while let Some(c) = self.eat_op(&['+', '-']) {
            let rhs = self.product()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(c) = self.eat_op(&['*', '/']) {
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        match self.eat_op(&['-', '+']) {
            Some('-') => Ok(Node::Neg(Box::new(self.unary()?))),
            Some(_) => self.unary(),
            None => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.eat_op(&['^']).is_some() {
            let exponent = self.unary()?;
            return Ok(Node::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let offset = self.next_offset();
        let Some(tok) = self.peek().cloned() else {
            return Err(ExprError::Syntax {
                offset,
                message: "unexpected end of input".into(),
            });
        };
        self.pos += 1;
        match tok.kind {
            TokenKind::Num(v) => Ok(Node::Num(v)),
            TokenKind::LParen => {
                let inner = self.sum()?;
                self.expect(TokenKind::RParen)?;
                Ok(inner)
            }
            TokenKind::Ident(name) => {
                let is_call = matches!(self.peek(), Some(Token { kind: TokenKind::LParen, .. }));
                if is_call {
                    let func = Func::lookup(&name).ok_or_else(|| ExprError::UnknownIdentifier {
                        name: name.clone(),
                        offset,
                    })?;
                    self.pos += 1;
                    let mut args = vec![self.sum()?];
                    while matches!(self.peek(), Some(Token { kind: TokenKind::Comma, .. })) {
                        self.pos += 1;
                        args.push(self.sum()?);
                    }
                    self.expect(TokenKind::RParen)?;
                    if args.len() != func.arity() {
                        return Err(ExprError::Arity {
                            name,
                            expected: func.arity(),
                            found: args.len(),
                            offset,
                        });
                    }
                    return Ok(Node::Call(func, args));
                }
                if let Some(slot) = self.vars.iter().position(|v| *v == name) {
                    return Ok(Node::Var(slot));
                }
                match name.as_str() {
                    "pi" => Ok(Node::Const(Constant::Pi)),
                    "e" => Ok(Node::Const(Constant::E)),
                    _ if Func::lookup(&name).is_some() => Err(ExprError::Syntax {
                        offset,
                        message: format!("function `{name}` used without arguments"),
                    }),
                    _ => Err(ExprError::UnknownIdentifier { name, offset }),
                }
            }
            other => Err(ExprError::Syntax {
                offset,
                message: format!("unexpected {}", other.describe()),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval1(src: &str, x: f64) -> f64 {
        Expression::parse(src, &["x"]).unwrap().eval(&[x]).unwrap()
    }

    #[test]
    fn precedence() {
        assert_eq!(eval1("2+3*x", 4.0), 14.0);
        assert_eq!(eval1("-x^2", 3.0), -9.0);
        assert_eq!(eval1("2^3^2", 0.0), 512.0);
        assert_eq!(eval1("2^-1", 0.0), 0.5);
        assert_eq!(eval1("(1+x)*2", 1.0), 4.0);
        assert_eq!(eval1(" 8 / 4 / 2 ", 0.0), 1.0);
    }

    #[test]
    fn constants_and_functions() {
        assert_eq!(eval1("sin(pi/2)", 0.0), 1.0);
        assert!((eval1("pow(x,3)-x^3", 1.7)).abs() <= 1e-15);
        assert!((eval1("exp(log(x))", 0.37) - 0.37).abs() <= 1e-15);
        assert_eq!(eval1("3+0.5*sin(pi*x)", 0.5), 3.5);
        assert_eq!(eval1("max(x, 2) + min(x, 2)", 5.0), 7.0);
        assert_eq!(eval1("2*e", 0.0), 2.0 * std::f64::consts::E);
        assert_eq!(eval1("1.5e2", 0.0), 150.0);
    }

    #[test]
    fn named_bindings() {
        let e = Expression::parse("x*y", &["x", "y"]).unwrap();
        let b = HashMap::from([("x", 2.0), ("y", 3.0)]);
        assert_eq!(e.evaluate(&b).unwrap(), 6.0);
        let missing = HashMap::from([("x", 2.0)]);
        assert_eq!(
            e.evaluate(&missing),
            Err(ExprError::MissingBinding("y".into()))
        );
    }

    #[test]
    fn parse_errors_carry_offsets() {
        match Expression::parse("2.5-?", &["x"]) {
            Err(ExprError::Syntax { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
        match Expression::parse("x + z", &["x"]) {
            Err(ExprError::UnknownIdentifier { name, offset }) => {
                assert_eq!(name, "z");
                assert_eq!(offset, 4);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            Expression::parse("pow(x)", &["x"]),
            Err(ExprError::Arity { expected: 2, found: 1, .. })
        ));
        assert!(matches!(
            Expression::parse("(1+x", &["x"]),
            Err(ExprError::Syntax { offset: 4, .. })
        ));
        assert_eq!(Expression::parse("   ", &["x"]), Err(ExprError::Empty));
        assert!(Expression::parse("sin", &["x"]).is_err());
        assert!(Expression::parse("1 2", &["x"]).is_err());
    }

    #[test]
    fn domain_errors() {
        let e = |s: &str| Expression::parse(s, &["x"]).unwrap().eval(&[-1.0]);
        assert!(matches!(e("log(x)"), Err(ExprError::Domain(_))));
        assert!(matches!(e("log(0*x)"), Err(ExprError::Domain(_))));
        assert!(matches!(e("sqrt(x)"), Err(ExprError::Domain(_))));
        assert!(matches!(e("x^0.5"), Err(ExprError::Domain(_))));
        assert!(matches!(e("pow(x, 1.5)"), Err(ExprError::Domain(_))));
        assert!(matches!(e("1/(x+1)"), Err(ExprError::Domain(_))));
        assert!(matches!(e("exp(-1000*x)"), Err(ExprError::Domain(_))));
        assert_eq!(e("x^2").unwrap(), 1.0);
        assert_eq!(e("pow(x, 3)").unwrap(), -1.0);
    }

    #[test]
    fn dependency_query() {
        let e = Expression::parse("1 + 1/(1+t^2)", &["x", "y", "t"]).unwrap();
        assert!(e.depends_on("t"));
        assert!(!e.depends_on("x"));
        assert!(!e.depends_on("q"));
    }

    #[test]
    fn display_reparses() {
        let src = "-x^2 + 3*sin(pi*x)/(1+x) - pow(x, 2.5) + max(e, x)";
        let e = Expression::parse(src, &["x"]).unwrap();
        let again = Expression::parse(&e.to_string(), &["x"]).unwrap();
        for k in 0..100 {
            let x = 0.1 + k as f64 * 0.037;
            assert_eq!(
                e.eval(&[x]).unwrap().to_bits(),
                again.eval(&[x]).unwrap().to_bits()
            );
        }
    }
}
