//! Arithmetic expressions over named real variables.
//!
//! Used for ODE right-hand sides, input signals and Lyapunov component
//! functions. Grammar, lowest precedence first:
//!
//! ```text
//! expr  := term (("+" | "-") term)*
//! term  := unary (("*" | "/") unary)*
//! unary := "-" unary | pow
//! pow   := atom ("^" unary)?
//! atom  := number | name | name "(" expr ("," expr)* ")" | "(" expr ")"
//! ```
//!
//! Functions: `exp log sqrt abs sin cos tanh` (one argument), `min max`
//! (two arguments). Names are resolved against a variable list at parse
//! time, so evaluation is a tree walk over a slot slice.

use crate::error::{Error, ParseError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Exp,
    Log,
    Sqrt,
    Abs,
    Sin,
    Cos,
    Tanh,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<(Self, usize)> {
        Some(match name {
            "exp" => (Self::Exp, 1),
            "log" => (Self::Log, 1),
            "sqrt" => (Self::Sqrt, 1),
            "abs" => (Self::Abs, 1),
            "sin" => (Self::Sin, 1),
            "cos" => (Self::Cos, 1),
            "tanh" => (Self::Tanh, 1),
            "min" => (Self::Min, 2),
            "max" => (Self::Max, 2),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// A compiled expression.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
    source: String,
}

impl Expr {
    /// Parses `text`, resolving names against `vars` (slot `k` is `vars[k]`).
    pub fn parse(text: &str, vars: &[&str]) -> Result<Self> {
        let mut p = Parser { src: text.as_bytes(), pos: 0, vars };
        let root = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.syntax("unexpected trailing input"));
        }
        Ok(Self { root, source: text.to_owned() })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Evaluates with `slots[k]` bound to the `k`-th declared variable.
    pub fn eval(&self, slots: &[f64]) -> f64 {
        eval_node(&self.root, slots)
    }
}

fn eval_node(node: &Node, slots: &[f64]) -> f64 {
    match node {
        Node::Num(v) => *v,
        Node::Var(k) => slots[*k],
        Node::Neg(a) => -eval_node(a, slots),
        Node::Add(a, b) => eval_node(a, slots) + eval_node(b, slots),
        Node::Sub(a, b) => eval_node(a, slots) - eval_node(b, slots),
        Node::Mul(a, b) => eval_node(a, slots) * eval_node(b, slots),
        Node::Div(a, b) => eval_node(a, slots) / eval_node(b, slots),
        Node::Pow(a, b) => {
            let base = eval_node(a, slots);
            match **b {
                Node::Num(e) if e.fract() == 0.0 && e.abs() < 64.0 => base.powi(e as i32),
                _ => base.powf(eval_node(b, slots)),
            }
        }
        Node::Call(f, args) => {
            let x = eval_node(&args[0], slots);
            match f {
                Func::Exp => x.exp(),
                Func::Log => x.ln(),
                Func::Sqrt => x.sqrt(),
                Func::Abs => x.abs(),
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Tanh => x.tanh(),
                Func::Min => x.min(eval_node(&args[1], slots)),
                Func::Max => x.max(eval_node(&args[1], slots)),
            }
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    vars: &'a [&'a str],
}

impl Parser<'_> {
    fn syntax(&self, message: impl Into<String>) -> Error {
        Error::Syntax(ParseError { pos: self.pos, message: message.into() })
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

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.peek() == Some(b'/') {
                let at = self.pos;
                self.pos += 1;
                let rhs = self.unary()?;
                if rhs == Node::Num(0.0) {
                    return Err(Error::Semantic(ParseError { pos: at, message: "division by the constant 0".into() }));
                }
                lhs = Node::Div(Box::new(lhs), Box::new(rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        let base = self.atom()?;
        if self.eat(b'^') {
            return Ok(Node::Pow(Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.syntax("expected ')'"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.name(),
            Some(c) => Err(self.syntax(format!("unexpected character '{}'", c as char))),
            None => Err(self.syntax("unexpected end of expression")),
        }
    }

    fn number(&mut self) -> Result<Node> {
        let start = self.pos;
        let b = self.src;
        let mut i = self.pos;
        while i < b.len() && (b[i].is_ascii_digit() || b[i] == b'.') {
            i += 1;
        }
        if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
            let mut j = i + 1;
            if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
                j += 1;
            }
            let digits = j;
            while j < b.len() && b[j].is_ascii_digit() {
                j += 1;
            }
            if j > digits {
                i = j;
            }
        }
        let text = std::str::from_utf8(&b[start..i]).unwrap_or_default();
        let v: f64 = text.parse().map_err(|_| self.syntax(format!("malformed number '{text}'")))?;
        self.pos = i;
        Ok(Node::Num(v))
    }

    fn name(&mut self) -> Result<Node> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or_default();
        if self.peek() == Some(b'(') {
            let Some((func, arity)) = Func::lookup(name) else {
                return Err(Error::Semantic(ParseError { pos: start, message: format!("unknown function '{name}'") }));
            };
            self.pos += 1;
            let mut args = vec![self.expr()?];
            while self.eat(b',') {
                args.push(self.expr()?);
            }
            if !self.eat(b')') {
                return Err(self.syntax("expected ')' after function arguments"));
            }
            if args.len() != arity {
                return Err(Error::Semantic(ParseError {
                    pos: start,
                    message: format!("function '{name}' takes {arity} argument(s), got {}", args.len()),
                }));
            }
            return Ok(Node::Call(func, args));
        }
        match self.vars.iter().position(|v| *v == name) {
            Some(k) => Ok(Node::Var(k)),
            None => Err(Error::Semantic(ParseError { pos: start, message: format!("unknown identifier '{name}'") })),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_and_functions() {
        let e = Expr::parse("-x + y*(1-exp(-y)) + 2^3^0 - -1", &["x", "y"]).unwrap();
        let v = e.eval(&[1.0, 1.0]);
        assert!((v - (-1.0 + (1.0 - (-1.0f64).exp()) + 2.0 + 1.0)).abs() < 1e-15);
        let e = Expr::parse("max(abs(x), sqrt(4)) / 2e0", &["x"]).unwrap();
        assert_eq!(e.eval(&[-3.0]), 1.5);
        assert_eq!(Expr::parse("x^2", &["x"]).unwrap().eval(&[-3.0]), 9.0);
    }

    #[test]
    fn unknown_identifier_is_named() {
        match Expr::parse("x1 + y3", &["x1"]) {
            Err(Error::Semantic(e)) => {
                assert_eq!(e.pos, 5);
                assert!(e.message.contains("y3"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_errors() {
        assert!(matches!(Expr::parse("x +", &["x"]), Err(Error::Syntax(_))));
        assert!(matches!(Expr::parse("(x", &["x"]), Err(Error::Syntax(_))));
        assert!(matches!(Expr::parse("x / 0", &["x"]), Err(Error::Semantic(_))));
        assert!(matches!(Expr::parse("min(x)", &["x"]), Err(Error::Semantic(_))));
        assert!(matches!(Expr::parse("foo(x)", &["x"]), Err(Error::Semantic(_))));
    }
}
