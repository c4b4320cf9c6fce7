//! Expression trees over `x1..xN`.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | '+' unary | power
//! power   := primary ('^' unary)?          right-associative
//! primary := number | 'pi' | 'x'INDEX | NAME '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! `^` binds tighter than unary minus, so `-x1^2` is `-(x1^2)`.

use std::fmt;

use crate::error::{DomainError, ParseError};
use crate::jet::{smoothstep5, Scalar};

/// Operation name carried by domain errors caused by overflow.
pub const NON_FINITE: &str = "non-finite result";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Atan,
    Tanh,
    Sinh,
    Cosh,
    Exp,
    Log,
    Sqrt,
    Smoothstep5,
    Heaviside,
}

impl Func {
    pub const ALL: [Func; 12] = [
        Func::Sin,
        Func::Cos,
        Func::Tan,
        Func::Atan,
        Func::Tanh,
        Func::Sinh,
        Func::Cosh,
        Func::Exp,
        Func::Log,
        Func::Sqrt,
        Func::Smoothstep5,
        Func::Heaviside,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Atan => "atan",
            Func::Tanh => "tanh",
            Func::Sinh => "sinh",
            Func::Cosh => "cosh",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Smoothstep5 => "smoothstep5",
            Func::Heaviside => "heaviside",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Smoothstep5 => 3,
            _ => 1,
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Func::ALL.iter().copied().find(|f| f.name() == s)
    }
}

/// Abstract syntax tree. Variables are stored zero-based.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    /// Exponent folded to an integer at parse time.
    PowI(Box<Expr>, i32),
    /// Exponent folded to a non-integer constant.
    PowF(Box<Expr>, f64),
    /// Exponent depends on the variables; evaluated as `exp(e * log(b))`.
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    pub fn parse(src: &str, dim: usize) -> Result<Expr, ParseError> {
        let mut p = Parser { src: src.as_bytes(), pos: 0, dim };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos < p.src.len() {
            return Err(p.syntax("unexpected trailing input"));
        }
        Ok(e)
    }

    /// Largest variable index used plus one (0 for constants).
    pub fn arity(&self) -> usize {
        match self {
            Expr::Num(_) => 0,
            Expr::Var(i) => i + 1,
            Expr::Neg(a) | Expr::PowI(a, _) | Expr::PowF(a, _) => a.arity(),
            Expr::Bin(_, a, b) | Expr::Pow(a, b) => a.arity().max(b.arity()),
            Expr::Call(_, args) => args.iter().map(Expr::arity).max().unwrap_or(0),
        }
    }

    /// True when no variable occurs, so the tree folds to a number.
    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Num(_) => true,
            Expr::Var(_) => false,
            Expr::Neg(a) | Expr::PowI(a, _) | Expr::PowF(a, _) => a.is_constant(),
            Expr::Bin(_, a, b) | Expr::Pow(a, b) => a.is_constant() && b.is_constant(),
            Expr::Call(_, args) => args.iter().all(Expr::is_constant),
        }
    }

    pub fn eval<T: Scalar>(&self, x: &[T]) -> Result<T, DomainError> {
        let v = match self {
            Expr::Num(c) => T::cst(*c),
            Expr::Var(i) => x[*i],
            Expr::Neg(a) => -a.eval(x)?,
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(x)?, b.eval(x)?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b.value() == 0.0 {
                            return Err(domain("division", b.value()));
                        }
                        a / b
                    }
                }
            }
            Expr::PowI(a, n) => {
                let a = a.eval(x)?;
                if *n < 0 && a.value() == 0.0 {
                    return Err(domain("negative power", 0.0));
                }
                a.powi(*n)
            }
            Expr::PowF(a, r) => {
                let a = a.eval(x)?;
                if a.value() < 0.0 || (a.value() == 0.0 && *r < 0.0) {
                    return Err(domain("real power", a.value()));
                }
                a.powf(*r)
            }
            Expr::Pow(a, e) => {
                let (a, e) = (a.eval(x)?, e.eval(x)?);
                if a.value() <= 0.0 {
                    return Err(domain("variable power", a.value()));
                }
                (e * a.ln()).exp()
            }
            Expr::Call(f, args) => {
                let a = args[0].eval(x)?;
                let av = a.value();
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Tan => {
                        if av.cos() == 0.0 {
                            return Err(domain("tan", av));
                        }
                        a.tan()
                    }
                    Func::Atan => a.atan(),
                    Func::Tanh => a.tanh(),
                    Func::Sinh => a.sinh(),
                    Func::Cosh => a.cosh(),
                    Func::Exp => a.exp(),
                    Func::Log => {
                        if av <= 0.0 {
                            return Err(domain("log", av));
                        }
                        a.ln()
                    }
                    Func::Sqrt => {
                        if av < 0.0 {
                            return Err(domain("sqrt", av));
                        }
                        a.sqrt()
                    }
                    Func::Smoothstep5 => {
                        let lo = args[1].eval(x)?;
                        let hi = args[2].eval(x)?;
                        if lo.value() >= hi.value() {
                            return Err(domain("smoothstep5 with a >= b", lo.value()));
                        }
                        smoothstep5(a, lo, hi)
                    }
                    Func::Heaviside => T::cst(if av > 0.0 { 1.0 } else { 0.0 }),
                }
            }
        };
        if !v.value().is_finite() {
            return Err(domain(NON_FINITE, v.value()));
        }
        Ok(v)
    }
}

fn domain(op: &'static str, arg: f64) -> DomainError {
    DomainError { op, arg, component: None }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    dim: usize,
}

impl Parser<'_> {
    fn syntax(&self, msg: &str) -> ParseError {
        ParseError::Syntax { pos: self.pos, msg: msg.to_string() }
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
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if !self.eat(b'^') {
            return Ok(base);
        }
        let exp = self.unary()?;
        Ok(make_pow(base, exp))
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let start = match self.peek() {
            None => return Err(self.syntax("unexpected end of input")),
            Some(_) => self.pos,
        };
        let c = self.src[start];
        if c == b'(' {
            self.pos += 1;
            let e = self.expr()?;
            if !self.eat(b')') {
                return Err(self.syntax("expected `)`"));
            }
            return Ok(e);
        }
        if c.is_ascii_digit() || c == b'.' {
            return self.number();
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
                self.pos += 1;
            }
            let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or_default().to_string();
            return self.identifier(name, start);
        }
        Err(self.syntax(&format!("unexpected character `{}`", c as char)))
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let s = self.src;
        let digits = |p: &mut usize| {
            while *p < s.len() && s[*p].is_ascii_digit() {
                *p += 1;
            }
        };
        digits(&mut self.pos);
        if self.pos < s.len() && s[self.pos] == b'.' {
            self.pos += 1;
            digits(&mut self.pos);
        }
        if self.pos < s.len() && (s[self.pos] == b'e' || s[self.pos] == b'E') {
            let mut p = self.pos + 1;
            if p < s.len() && (s[p] == b'+' || s[p] == b'-') {
                p += 1;
            }
            if p < s.len() && s[p].is_ascii_digit() {
                digits(&mut p);
                self.pos = p;
            }
        }
        let text = std::str::from_utf8(&s[start..self.pos]).unwrap_or_default();
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Expr::Num(v)),
            _ => Err(ParseError::Syntax { pos: start, msg: format!("malformed number `{text}`") }),
        }
    }

    fn identifier(&mut self, name: String, start: usize) -> Result<Expr, ParseError> {
        if name == "pi" {
            return Ok(Expr::Num(std::f64::consts::PI));
        }
        if let Some(rest) = name.strip_prefix('x') {
            if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) && !rest.starts_with('0') {
                let index: usize = rest.parse().map_err(|_| ParseError::UnknownIdentifier { name: name.clone(), pos: start })?;
                if index > self.dim {
                    return Err(ParseError::VariableOutOfRange { index, dim: self.dim, pos: start });
                }
                return Ok(Expr::Var(index - 1));
            }
        }
        let func = Func::from_name(&name).ok_or(ParseError::UnknownIdentifier { name: name.clone(), pos: start })?;
        if !self.eat(b'(') {
            return Err(self.syntax(&format!("expected `(` after `{name}`")));
        }
        let mut args = vec![self.expr()?];
        while self.eat(b',') {
            args.push(self.expr()?);
        }
        if !self.eat(b')') {
            return Err(self.syntax("expected `)` or `,`"));
        }
        if args.len() != func.arity() {
            return Err(ParseError::Arity { name, expected: func.arity(), got: args.len() });
        }
        Ok(Expr::Call(func, args))
    }
}

fn make_pow(base: Expr, exp: Expr) -> Expr {
    if exp.is_constant() {
        if let Ok(r) = exp.eval::<f64>(&[]) {
            if r.fract() == 0.0 && r.abs() <= i32::MAX as f64 {
                return Expr::PowI(Box::new(base), r as i32);
            }
            return Expr::PowF(Box::new(base), r);
        }
    }
    Expr::Pow(Box::new(base), Box::new(exp))
}

// Printing: precedence levels 1 (+,-), 2 (*,/), 3 (unary -), 4 (^), 5 (atoms).
fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
        Expr::Bin(..) => 2,
        Expr::Neg(_) => 3,
        Expr::PowI(..) | Expr::PowF(..) | Expr::Pow(..) => 4,
        Expr::Num(c) if *c < 0.0 || c.is_sign_negative() => 3,
        _ => 5,
    }
}

fn fmt_num(c: f64) -> String {
    if c == std::f64::consts::PI {
        return "pi".into();
    }
    // `{:?}` gives the shortest representation that round-trips.
    let s = format!("{:?}", c.abs());
    if c.is_sign_negative() {
        format!("-{s}")
    } else {
        s
    }
}

fn write_wrapped(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if prec(e) < min_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

fn write_exponent(f: &mut fmt::Formatter<'_>, r: f64) -> fmt::Result {
    if r < 0.0 {
        write!(f, "(-{})", fmt_num(-r))
    } else {
        write!(f, "{}", fmt_num(r))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(c) => write!(f, "{}", fmt_num(*c)),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(a) => {
                f.write_str("-")?;
                write_wrapped(f, a, 3)
            }
            Expr::Bin(op, a, b) => {
                let (p, sym) = match op {
                    BinOp::Add => (1, " + "),
                    BinOp::Sub => (1, " - "),
                    BinOp::Mul => (2, " * "),
                    BinOp::Div => (2, " / "),
                };
                write_wrapped(f, a, p)?;
                f.write_str(sym)?;
                // left-associative: right operand of equal precedence needs parentheses
                write_wrapped(f, b, p + 1)
            }
            Expr::PowI(a, n) => {
                write_wrapped(f, a, 5)?;
                f.write_str("^")?;
                write_exponent(f, *n as f64)
            }
            Expr::PowF(a, r) => {
                write_wrapped(f, a, 5)?;
                f.write_str("^")?;
                write_exponent(f, *r)
            }
            Expr::Pow(a, e) => {
                write_wrapped(f, a, 5)?;
                f.write_str("^")?;
                write_wrapped(f, e, 4)
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, x: &[f64]) -> Result<f64, DomainError> {
        Expr::parse(src, x.len().max(1)).unwrap().eval(x)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("-x1^2", &[3.0]).unwrap(), -9.0);
        assert_eq!(ev("2^3^2", &[0.0]).unwrap(), 512.0);
        assert_eq!(ev("8/4/2", &[0.0]).unwrap(), 1.0);
        assert_eq!(ev("1 - 2 - 3", &[0.0]).unwrap(), -4.0);
        assert_eq!(ev("2 * x1 + 1", &[3.0]).unwrap(), 7.0);
        assert_eq!(ev("x1^-2", &[2.0]).unwrap(), 0.25);
        assert_eq!(ev("  4 ^ 0.5 ", &[0.0]).unwrap(), 2.0);
        assert_eq!(ev("1.5e2 + 2E-1", &[0.0]).unwrap(), 150.2);
    }

    #[test]
    fn function_set_evaluates() {
        assert_eq!(ev("-atan(x1)", &[0.0]).unwrap(), 0.0);
        assert!((ev("-atan(x1)", &[1.0]).unwrap() + std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        assert!((ev("smoothstep5(x1, 2, 3)", &[2.5]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(ev("heaviside(x1 - 3)", &[3.5]).unwrap(), 1.0);
        assert_eq!(ev("heaviside(x1 - 3)", &[3.0]).unwrap(), 0.0);
        assert!((ev("log(exp(x1)) + sqrt(x1^2) - 2*x1", &[1.7]).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn parse_errors_are_specific() {
        assert!(matches!(Expr::parse("foo(x1)", 1), Err(ParseError::UnknownIdentifier { ref name, pos: 0 }) if name == "foo"));
        assert!(matches!(Expr::parse("x3", 2), Err(ParseError::VariableOutOfRange { index: 3, dim: 2, .. })));
        assert!(matches!(Expr::parse("x0", 2), Err(ParseError::UnknownIdentifier { .. })));
        assert!(matches!(Expr::parse("1 + ", 1), Err(ParseError::Syntax { pos: 4, .. })));
        assert!(matches!(Expr::parse("(x1", 1), Err(ParseError::Syntax { .. })));
        assert!(matches!(Expr::parse("x1 $ 2", 1), Err(ParseError::Syntax { pos: 3, .. })));
        assert!(matches!(Expr::parse("sin(x1, 2)", 1), Err(ParseError::Arity { .. })));
        assert!(matches!(Expr::parse("x1 x1", 1), Err(ParseError::Syntax { .. })));
    }

    #[test]
    fn domain_errors() {
        assert_eq!(ev("1/x1", &[0.0]).unwrap_err().op, "division");
        assert_eq!(ev("log(x1)", &[-1.0]).unwrap_err().op, "log");
        assert_eq!(ev("sqrt(x1)", &[-1.0]).unwrap_err().op, "sqrt");
        assert!(ev("x1^0.5", &[-1.0]).is_err());
        assert!(ev("x1^-1", &[0.0]).is_err());
        assert!(ev("exp(x1)", &[1000.0]).is_err());
    }

    #[test]
    fn printing_reparses_to_same_tree() {
        for src in [
            "-x1^2",
            "(-x1)^2",
            "x1 - (x2 - 3)",
            "x1 / (x2 * 2)",
            "2^3^2",
            "(2^3)^2",
            "x1^-2",
            "x1^(x2 + 1)",
            "-(-x1)",
            "smoothstep5(sqrt(x1^2 + x2^2), 2, 3)",
            "1e-300 * pi",
            "x1^0.5 - -x2",
        ] {
            let e = Expr::parse(src, 2).unwrap();
            let printed = e.to_string();
            assert_eq!(Expr::parse(&printed, 2).unwrap(), e, "{src} printed as {printed}");
        }
    }
}
