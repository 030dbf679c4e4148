//! Small arithmetic expression language for densities, scale functions and
//! test functions of one free variable.
//!
//! Grammar: numbers, `pi`, `e`, `inf`, the variable (`x` or `y`), binary
//! `+ - * / ^` (power is right-associative), unary minus, and the calls
//! `exp log sqrt abs sin cos sinh cosh min max`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Exp,
    Log,
    Sqrt,
    Abs,
    Sin,
    Cos,
    Sinh,
    Cosh,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<(Func, usize)> {
        Some(match name {
            "exp" => (Func::Exp, 1),
            "log" | "ln" => (Func::Log, 1),
            "sqrt" => (Func::Sqrt, 1),
            "abs" => (Func::Abs, 1),
            "sin" => (Func::Sin, 1),
            "cos" => (Func::Cos, 1),
            "sinh" => (Func::Sinh, 1),
            "cosh" => (Func::Cosh, 1),
            "min" => (Func::Min, 2),
            "max" => (Func::Max, 2),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// Value together with its derivative in the free variable. At kinks of
/// `abs`, `min` and `max` the right derivative is produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    fn c(v: f64) -> Dual {
        Dual { v, d: 0.0 }
    }
}

#[derive(Clone)]
pub struct Expr {
    source: String,
    root: Node,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", self.source)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let mut p = Parser { chars: src.chars().collect(), pos: 0 };
        let root = p.expr()?;
        p.skip_ws();
        if p.pos < p.chars.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(Expr { source: src.trim().to_string(), root })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, x: f64) -> f64 {
        eval(&self.root, x)
    }

    pub fn eval_dual(&self, x: f64) -> Dual {
        eval_dual(&self.root, Dual { v: x, d: 1.0 })
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.eval_dual(x).d
    }

    /// True when the expression does not mention the free variable.
    pub fn is_constant(&self) -> bool {
        !mentions_var(&self.root)
    }
}

impl FromStr for Expr {
    type Err = Error;
    fn from_str(s: &str) -> Result<Expr> {
        Expr::parse(s)
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Expr, D::Error> {
        let s = String::deserialize(d)?;
        Expr::parse(&s).map_err(serde::de::Error::custom)
    }
}

fn mentions_var(n: &Node) -> bool {
    match n {
        Node::Num(_) => false,
        Node::Var => true,
        Node::Neg(a) => mentions_var(a),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
            mentions_var(a) || mentions_var(b)
        }
        Node::Call(_, args) => args.iter().any(mentions_var),
    }
}

fn eval(n: &Node, x: f64) -> f64 {
    match n {
        Node::Num(v) => *v,
        Node::Var => x,
        Node::Neg(a) => -eval(a, x),
        Node::Add(a, b) => eval(a, x) + eval(b, x),
        Node::Sub(a, b) => eval(a, x) - eval(b, x),
        Node::Mul(a, b) => eval(a, x) * eval(b, x),
        Node::Div(a, b) => eval(a, x) / eval(b, x),
        Node::Pow(a, b) => pow(eval(a, x), eval(b, x)),
        Node::Call(f, args) => {
            let u = eval(&args[0], x);
            match f {
                Func::Exp => u.exp(),
                Func::Log => u.ln(),
                Func::Sqrt => u.sqrt(),
                Func::Abs => u.abs(),
                Func::Sin => u.sin(),
                Func::Cos => u.cos(),
                Func::Sinh => u.sinh(),
                Func::Cosh => u.cosh(),
                Func::Min => u.min(eval(&args[1], x)),
                Func::Max => u.max(eval(&args[1], x)),
            }
        }
    }
}

fn pow(a: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && b.abs() < 64.0 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

fn eval_dual(n: &Node, x: Dual) -> Dual {
    match n {
        Node::Num(v) => Dual::c(*v),
        Node::Var => x,
        Node::Neg(a) => {
            let u = eval_dual(a, x);
            Dual { v: -u.v, d: -u.d }
        }
        Node::Add(a, b) => {
            let (u, w) = (eval_dual(a, x), eval_dual(b, x));
            Dual { v: u.v + w.v, d: u.d + w.d }
        }
        Node::Sub(a, b) => {
            let (u, w) = (eval_dual(a, x), eval_dual(b, x));
            Dual { v: u.v - w.v, d: u.d - w.d }
        }
        Node::Mul(a, b) => {
            let (u, w) = (eval_dual(a, x), eval_dual(b, x));
            Dual { v: u.v * w.v, d: u.d * w.v + u.v * w.d }
        }
        Node::Div(a, b) => {
            let (u, w) = (eval_dual(a, x), eval_dual(b, x));
            Dual { v: u.v / w.v, d: (u.d * w.v - u.v * w.d) / (w.v * w.v) }
        }
        Node::Pow(a, b) => {
            let u = eval_dual(a, x);
            if !mentions_var(b) {
                let p = eval(b, 0.0);
                let v = pow(u.v, p);
                let d = if u.d == 0.0 { 0.0 } else { p * pow(u.v, p - 1.0) * u.d };
                Dual { v, d }
            } else {
                let w = eval_dual(b, x);
                let v = u.v.powf(w.v);
                Dual { v, d: v * (w.d * u.v.ln() + w.v * u.d / u.v) }
            }
        }
        Node::Call(f, args) => {
            let u = eval_dual(&args[0], x);
            match f {
                Func::Exp => {
                    let v = u.v.exp();
                    Dual { v, d: v * u.d }
                }
                Func::Log => Dual { v: u.v.ln(), d: u.d / u.v },
                Func::Sqrt => {
                    let v = u.v.sqrt();
                    Dual { v, d: u.d / (2.0 * v) }
                }
                Func::Abs => {
                    if u.v > 0.0 {
                        u
                    } else if u.v < 0.0 {
                        Dual { v: -u.v, d: -u.d }
                    } else {
                        Dual { v: 0.0, d: u.d.abs() }
                    }
                }
                Func::Sin => Dual { v: u.v.sin(), d: u.v.cos() * u.d },
                Func::Cos => Dual { v: u.v.cos(), d: -u.v.sin() * u.d },
                Func::Sinh => Dual { v: u.v.sinh(), d: u.v.cosh() * u.d },
                Func::Cosh => Dual { v: u.v.cosh(), d: u.v.sinh() * u.d },
                Func::Min => {
                    let w = eval_dual(&args[1], x);
                    if u.v < w.v || (u.v == w.v && u.d <= w.d) {
                        u
                    } else {
                        w
                    }
                }
                Func::Max => {
                    let w = eval_dual(&args[1], x);
                    if u.v > w.v || (u.v == w.v && u.d >= w.d) {
                        u
                    } else {
                        w
                    }
                }
            }
        }
    }
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
}

impl Parser {
    fn err(&self, msg: &str) -> Error {
        Error::Parse { line: 1, column: self.pos + 1, message: msg.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat('-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat('/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat('-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.eat('^') {
            // -x^2 parses as -(x^2); the exponent may carry its own sign
            let exp = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.peek() {
            None => Err(self.err("unexpected end of expression")),
            Some('(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.chars.len()
                    && (self.chars[self.pos].is_ascii_alphanumeric() || self.chars[self.pos] == '_')
                {
                    self.pos += 1;
                }
                let name: String = self.chars[start..self.pos].iter().collect();
                match name.as_str() {
                    "x" | "y" => Ok(Node::Var),
                    "pi" => Ok(Node::Num(std::f64::consts::PI)),
                    "e" => Ok(Node::Num(std::f64::consts::E)),
                    "inf" => Ok(Node::Num(f64::INFINITY)),
                    _ => {
                        let Some((func, arity)) = Func::lookup(&name) else {
                            self.pos = start;
                            return Err(self.err(&format!("unknown identifier '{name}'")));
                        };
                        if !self.eat('(') {
                            return Err(self.err(&format!("expected '(' after {name}")));
                        }
                        let mut args = vec![self.expr()?];
                        while self.eat(',') {
                            args.push(self.expr()?);
                        }
                        if !self.eat(')') {
                            return Err(self.err("expected ')'"));
                        }
                        if args.len() != arity {
                            return Err(self.err(&format!(
                                "{name} takes {arity} argument(s), got {}",
                                args.len()
                            )));
                        }
                        Ok(Node::Call(func, args))
                    }
                }
            }
            Some(c) => Err(self.err(&format!("unexpected character '{c}'"))),
        }
    }

    fn number(&mut self) -> Result<Node> {
        let start = self.pos;
        while self.pos < self.chars.len() && (self.chars[self.pos].is_ascii_digit() || self.chars[self.pos] == '.') {
            self.pos += 1;
        }
        if self.pos < self.chars.len() && (self.chars[self.pos] == 'e' || self.chars[self.pos] == 'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.chars.len() && (self.chars[self.pos] == '+' || self.chars[self.pos] == '-') {
                self.pos += 1;
            }
            if self.pos < self.chars.len() && self.chars[self.pos].is_ascii_digit() {
                while self.pos < self.chars.len() && self.chars[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                self.pos = save;
            }
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        text.parse::<f64>().map(Node::Num).map_err(|_| {
            self.pos = start;
            self.err(&format!("malformed number '{text}'"))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, x: f64) -> f64 {
        Expr::parse(s).unwrap().eval(x)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", 0.0), 7.0);
        assert_eq!(ev("2 ^ 3 ^ 2", 0.0), 512.0);
        assert_eq!(ev("-x^2", 3.0), -9.0);
        assert_eq!(ev("2^-1", 0.0), 0.5);
        assert_eq!(ev("(1 - x) / 4", 3.0), -0.5);
        assert_eq!(ev("1e-3 * 2", 0.0), 0.002);
    }

    #[test]
    fn functions() {
        assert!((ev("exp(log(x))", 2.5) - 2.5).abs() < 1e-15);
        assert_eq!(ev("max(x - 1, 0)", 0.5), 0.0);
        assert_eq!(ev("min(x, 1)", 3.0), 1.0);
        assert_eq!(ev("abs(x)", -2.0), 2.0);
        assert!((ev("cosh(1)", 0.0) - 1f64.cosh()).abs() < 1e-15);
        assert!(ev("inf", 0.0).is_infinite());
    }

    #[test]
    fn derivatives_take_right_limit_at_kinks() {
        let e = Expr::parse("max(x - 1, 0)").unwrap();
        assert_eq!(e.derivative(1.0), 1.0);
        assert_eq!(e.derivative(0.5), 0.0);
        let e = Expr::parse("min(x, 1)").unwrap();
        assert_eq!(e.derivative(1.0), 0.0);
        let e = Expr::parse("abs(x)").unwrap();
        assert_eq!(e.derivative(0.0), 1.0);
    }

    #[test]
    fn derivative_matches_calculus() {
        let e = Expr::parse("x^3 * exp(2*x) / (1 + x^2)").unwrap();
        let x = 0.7;
        let h = 1e-6;
        let fd = (e.eval(x + h) - e.eval(x - h)) / (2.0 * h);
        assert!((e.derivative(x) - fd).abs() < 1e-7);
    }

    #[test]
    fn parse_errors_report_column() {
        match Expr::parse("1 + foo(x)") {
            Err(Error::Parse { column, .. }) => assert_eq!(column, 5),
            other => panic!("unexpected {other:?}"),
        }
        assert!(Expr::parse("max(1)").is_err());
        assert!(Expr::parse("(x").is_err());
        assert!(Expr::parse("x x").is_err());
    }

    #[test]
    fn constant_detection() {
        assert!(Expr::parse("2 * pi").unwrap().is_constant());
        assert!(!Expr::parse("y + 1").unwrap().is_constant());
    }
}
