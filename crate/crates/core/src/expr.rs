//! Expressions in `x` and `t` used for coefficients and scenario data.
//!
//! Grammar (whitespace insignificant):
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?
//! atom    := number | 'x' | 't' | 'pi' | func '(' args ')' | '(' sum ')'
//! ```
//!
//! `^` binds tighter than unary minus (`-x^2` is `-(x^2)`) and is
//! right-associative.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
    Abs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Max,
    Min,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("empty expression")]
    Empty,
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdent { name: String, offset: usize },
    #[error("`{name}` takes {expected} argument(s), got {got} (byte {offset})")]
    Arity { name: String, expected: usize, got: usize, offset: usize },
}

impl Expr {
    pub fn constant(v: f64) -> Self {
        Expr::Const(v)
    }

    pub fn parse(src: &str) -> Result<Self, ParseError> {
        parse_expression(src)
    }

    /// Evaluates the expression; the result may be non-finite (e.g. `log(-1)`).
    pub fn eval(&self, x: f64, t: f64) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(Var::X) => x,
            Expr::Var(Var::T) => t,
            Expr::Unary(op, a) => {
                let a = a.eval(x, t);
                match op {
                    UnaryOp::Neg => -a,
                    UnaryOp::Exp => a.exp(),
                    UnaryOp::Log => a.ln(),
                    UnaryOp::Sqrt => a.sqrt(),
                    UnaryOp::Sin => a.sin(),
                    UnaryOp::Cos => a.cos(),
                    UnaryOp::Abs => a.abs(),
                }
            }
            Expr::Binary(op, a, b) => {
                let (a, b) = (a.eval(x, t), b.eval(x, t));
                match op {
                    BinaryOp::Add => a + b,
                    BinaryOp::Sub => a - b,
                    BinaryOp::Mul => a * b,
                    BinaryOp::Div => a / b,
                    BinaryOp::Pow => pow(a, b),
                    BinaryOp::Max => a.max(b),
                    BinaryOp::Min => a.min(b),
                }
            }
        }
    }

    /// Evaluation that rejects non-finite results.
    pub fn try_eval(&self, x: f64, t: f64) -> Result<f64, EvalError> {
        let v = self.eval(x, t);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError { x, t, value: v })
        }
    }

    /// True when the expression mentions neither `x` nor `t`.
    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Const(_) => true,
            Expr::Var(_) => false,
            Expr::Unary(_, a) => a.is_constant(),
            Expr::Binary(_, a, b) => a.is_constant() && b.is_constant(),
        }
    }
}

fn pow(a: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && b.abs() <= i32::MAX as f64 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("expression evaluates to {value} at (x={x}, t={t})")]
pub struct EvalError {
    pub x: f64,
    pub t: f64,
    pub value: f64,
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Var(Var::X) => f.write_str("x"),
            Expr::Var(Var::T) => f.write_str("t"),
            Expr::Unary(UnaryOp::Neg, a) => write!(f, "(-{a})"),
            Expr::Unary(op, a) => write!(f, "{}({a})", unary_name(*op)),
            Expr::Binary(BinaryOp::Max, a, b) => write!(f, "max({a}, {b})"),
            Expr::Binary(BinaryOp::Min, a, b) => write!(f, "min({a}, {b})"),
            Expr::Binary(op, a, b) => {
                let sym = match op {
                    BinaryOp::Add => "+",
                    BinaryOp::Sub => "-",
                    BinaryOp::Mul => "*",
                    BinaryOp::Div => "/",
                    _ => "^",
                };
                write!(f, "({a} {sym} {b})")
            }
        }
    }
}

fn unary_name(op: UnaryOp) -> &'static str {
    match op {
        UnaryOp::Neg => "-",
        UnaryOp::Exp => "exp",
        UnaryOp::Log => "log",
        UnaryOp::Sqrt => "sqrt",
        UnaryOp::Sin => "sin",
        UnaryOp::Cos => "cos",
        UnaryOp::Abs => "abs",
    }
}

pub fn parse_expression(src: &str) -> Result<Expr, ParseError> {
    if src.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let mut p = Parser { src: src.as_bytes(), pos: 0 };
    let e = p.sum()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.syntax("unexpected trailing input"));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
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

    fn syntax(&self, message: &str) -> ParseError {
        ParseError::Syntax { offset: self.pos, message: message.to_string() }
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinaryOp::Add,
                Some(b'-') => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.product()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinaryOp::Mul,
                Some(b'/') => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            let inner = self.unary()?;
            return Ok(Expr::Unary(UnaryOp::Neg, Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let exp = self.unary()?;
            return Ok(Expr::Binary(BinaryOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            None => Err(self.syntax("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.sum()?;
                if !self.eat(b')') {
                    return Err(self.syntax("expected `)`"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
            Some(_) => Err(self.syntax("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
        };
        digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            digits(self);
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            let exp_start = self.pos;
            digits(self);
            if self.pos == exp_start {
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        text.parse::<f64>()
            .map(Expr::Const)
            .map_err(|_| ParseError::Syntax { offset: start, message: format!("malformed number `{text}`") })
    }

    fn ident(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("").to_string();
        match name.as_str() {
            "x" => return Ok(Expr::Var(Var::X)),
            "t" => return Ok(Expr::Var(Var::T)),
            "pi" => return Ok(Expr::Const(std::f64::consts::PI)),
            _ => {}
        }
        let unary = match name.as_str() {
            "exp" => Some(UnaryOp::Exp),
            "log" | "ln" => Some(UnaryOp::Log),
            "sqrt" => Some(UnaryOp::Sqrt),
            "sin" => Some(UnaryOp::Sin),
            "cos" => Some(UnaryOp::Cos),
            "abs" => Some(UnaryOp::Abs),
            _ => None,
        };
        let binary = match name.as_str() {
            "max" => Some(BinaryOp::Max),
            "min" => Some(BinaryOp::Min),
            _ => None,
        };
        if unary.is_none() && binary.is_none() {
            return Err(ParseError::UnknownIdent { name, offset: start });
        }
        if !self.eat(b'(') {
            return Err(self.syntax(&format!("expected `(` after `{name}`")));
        }
        let mut args = Vec::new();
        if !self.eat(b')') {
            loop {
                args.push(self.sum()?);
                if self.eat(b',') {
                    continue;
                }
                if self.eat(b')') {
                    break;
                }
                return Err(self.syntax("expected `,` or `)`"));
            }
        }
        let expected = if unary.is_some() { 1 } else { 2 };
        if args.len() != expected {
            return Err(ParseError::Arity { name, expected, got: args.len(), offset: start });
        }
        let mut args = args.into_iter();
        let first = Box::new(args.next().expect("arity checked"));
        Ok(match (unary, binary) {
            (Some(op), _) => Expr::Unary(op, first),
            (_, Some(op)) => Expr::Binary(op, first, Box::new(args.next().expect("arity checked"))),
            _ => unreachable!(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eval(src: &str, x: f64, t: f64) -> f64 {
        parse_expression(src).unwrap().eval(x, t)
    }

    #[test]
    fn literals_and_precedence() {
        assert_eq!(parse_expression("1").unwrap(), Expr::Const(1.0));
        assert_eq!(eval("1 + x^2/2", 2.0, 0.0), 3.0);
        assert_eq!(eval("max(0, -t)", 0.0, -3.0), 3.0);
        assert_eq!(eval("-x^2", 3.0, 0.0), -9.0);
        assert_eq!(eval("2^3^2", 0.0, 0.0), 512.0);
        assert_eq!(eval("8 - 4 - 2", 0.0, 0.0), 2.0);
        assert_eq!(eval("8 / 4 / 2", 0.0, 0.0), 1.0);
        assert_eq!(eval("2^-1", 0.0, 0.0), 0.5);
        assert_eq!(eval(" 1.5e1*t ", 0.0, 2.0), 30.0);
        assert!((eval("exp(log(2)) + sqrt(4) + cos(0) + sin(0) + abs(-1)", 0.0, 0.0) - 6.0).abs() < 1e-15);
        assert_eq!(eval("min(x, t)", 1.0, -1.0), -1.0);
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        assert_eq!(parse_expression("  "), Err(ParseError::Empty));
        match parse_expression("1 + * 2") {
            Err(ParseError::Syntax { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
        match parse_expression("(1 + x") {
            Err(ParseError::Syntax { offset, .. }) => assert_eq!(offset, 6),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_expression("1 2"), Err(ParseError::Syntax { offset: 2, .. })));
    }

    #[test]
    fn unknown_identifier_and_arity() {
        assert_eq!(parse_expression("1 + y"), Err(ParseError::UnknownIdent { name: "y".into(), offset: 4 }));
        assert!(matches!(parse_expression("max(1)"), Err(ParseError::Arity { expected: 2, got: 1, .. })));
        assert!(matches!(parse_expression("exp(1, 2)"), Err(ParseError::Arity { expected: 1, got: 2, .. })));
    }

    #[test]
    fn try_eval_flags_domain_errors() {
        let e = parse_expression("log(x)").unwrap();
        assert!(e.try_eval(-1.0, 0.0).is_err());
        assert!(e.try_eval(0.0, 0.0).is_err());
        assert!(e.try_eval(1.0, 0.0).is_ok());
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf =
            prop_oneof![(0.0f64..100.0).prop_map(Expr::Const), Just(Expr::Var(Var::X)), Just(Expr::Var(Var::T)),];
        leaf.prop_recursive(5, 48, 2, |inner| {
            let unary = prop_oneof![
                Just(UnaryOp::Neg),
                Just(UnaryOp::Exp),
                Just(UnaryOp::Log),
                Just(UnaryOp::Sqrt),
                Just(UnaryOp::Sin),
                Just(UnaryOp::Cos),
                Just(UnaryOp::Abs),
            ];
            let binary = prop_oneof![
                Just(BinaryOp::Add),
                Just(BinaryOp::Sub),
                Just(BinaryOp::Mul),
                Just(BinaryOp::Div),
                Just(BinaryOp::Pow),
                Just(BinaryOp::Max),
                Just(BinaryOp::Min),
            ];
            prop_oneof![
                (unary, inner.clone()).prop_map(|(op, a)| Expr::Unary(op, Box::new(a))),
                (binary, inner.clone(), inner).prop_map(|(op, a, b)| Expr::Binary(op, Box::new(a), Box::new(b))),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_then_parse_is_identity(e in arb_expr()) {
            let printed = e.to_string();
            let back = parse_expression(&printed).unwrap();
            prop_assert_eq!(&back, &e);
            prop_assert_eq!(back.to_string(), printed);
        }
    }
}
