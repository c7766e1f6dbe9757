//! Constraint predicates over context properties.
//!
//! A constraint is either a plain comparison (`file_number <= request_density`)
//! or one level of implication (`IF p1 >= 10 THEN p2 < p1 + 5`). Expressions
//! support `+ - *`, numeric literals, property names and parentheses.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Serialize, Serializer};

use super::PropertySpec;
use crate::error::{Error, Result};

/// Tolerance for float comparisons inside constraint evaluation.
const EQ_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    Comparison,
    Conditional,
}

/// A parsed, evaluable constraint tied to a schema's property list.
#[derive(Debug, Clone)]
pub struct Constraint {
    text: String,
    node: Node,
}

#[derive(Debug, Clone)]
enum Node {
    Comparison(Comparison),
    Conditional { cond: Comparison, then: Comparison },
}

#[derive(Debug, Clone)]
struct Comparison {
    lhs: Expr,
    op: RelOp,
    rhs: Expr,
}

#[derive(Debug, Clone, Copy)]
enum RelOp {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
}

#[derive(Debug, Clone)]
enum Expr {
    Num(f64),
    Prop(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
}

impl Constraint {
    /// Parse `text` against the given property list.
    pub fn parse(text: &str, properties: &[PropertySpec]) -> Result<Self> {
        let tokens = tokenize(text)?;
        let mut parser = Parser {
            text,
            tokens,
            pos: 0,
            properties,
        };
        let node = parser.constraint()?;
        Ok(Constraint {
            text: text.to_string(),
            node,
        })
    }

    pub fn kind(&self) -> ConstraintKind {
        match self.node {
            Node::Comparison(_) => ConstraintKind::Comparison,
            Node::Conditional { .. } => ConstraintKind::Conditional,
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Evaluate on a complete value tuple. Pure; no side effects.
    pub fn eval(&self, values: &[f64]) -> bool {
        match &self.node {
            Node::Comparison(c) => c.eval(values),
            Node::Conditional { cond, then } => !cond.eval(values) || then.eval(values),
        }
    }

    /// Indices of the properties this constraint references.
    pub fn mentions(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        match &self.node {
            Node::Comparison(c) => c.mentions(&mut out),
            Node::Conditional { cond, then } => {
                cond.mentions(&mut out);
                then.mentions(&mut out);
            }
        }
        out
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl Serialize for Constraint {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.text)
    }
}

impl Comparison {
    fn eval(&self, values: &[f64]) -> bool {
        let a = self.lhs.eval(values);
        let b = self.rhs.eval(values);
        match self.op {
            RelOp::Lt => a < b - EQ_TOL,
            RelOp::Le => a <= b + EQ_TOL,
            RelOp::Eq => (a - b).abs() <= EQ_TOL,
            RelOp::Ge => a >= b - EQ_TOL,
            RelOp::Gt => a > b + EQ_TOL,
        }
    }

    fn mentions(&self, out: &mut BTreeSet<usize>) {
        self.lhs.mentions(out);
        self.rhs.mentions(out);
    }
}

impl Expr {
    fn eval(&self, values: &[f64]) -> f64 {
        match self {
            Expr::Num(n) => *n,
            Expr::Prop(i) => values[*i],
            Expr::Add(a, b) => a.eval(values) + b.eval(values),
            Expr::Sub(a, b) => a.eval(values) - b.eval(values),
            Expr::Mul(a, b) => a.eval(values) * b.eval(values),
        }
    }

    fn mentions(&self, out: &mut BTreeSet<usize>) {
        match self {
            Expr::Num(_) => {}
            Expr::Prop(i) => {
                out.insert(*i);
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
                a.mentions(out);
                b.mentions(out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Op(char),
    Rel(RelOpTok),
    LParen,
    RParen,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum RelOpTok {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        match c {
            ' ' | '\t' => {
                i += 1;
            }
            '(' => {
                out.push((Tok::LParen, col));
                i += 1;
            }
            ')' => {
                out.push((Tok::RParen, col));
                i += 1;
            }
            '+' | '-' | '*' => {
                out.push((Tok::Op(c), col));
                i += 1;
            }
            '<' => {
                if chars.get(i + 1) == Some(&'=') {
                    out.push((Tok::Rel(RelOpTok::Le), col));
                    i += 2;
                } else {
                    out.push((Tok::Rel(RelOpTok::Lt), col));
                    i += 1;
                }
            }
            '>' => {
                if chars.get(i + 1) == Some(&'=') {
                    out.push((Tok::Rel(RelOpTok::Ge), col));
                    i += 2;
                } else {
                    out.push((Tok::Rel(RelOpTok::Gt), col));
                    i += 1;
                }
            }
            '=' => {
                if chars.get(i + 1) == Some(&'=') {
                    i += 2;
                } else {
                    i += 1;
                }
                out.push((Tok::Rel(RelOpTok::Eq), col));
            }
            _ if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_digit() || chars[i] == '.' || chars[i] == 'e' || chars[i] == 'E'
                        || ((chars[i] == '+' || chars[i] == '-')
                            && matches!(chars.get(i.wrapping_sub(1)), Some('e') | Some('E'))))
                {
                    i += 1;
                }
                let lit: String = chars[start..i].iter().collect();
                let n: f64 = lit
                    .parse()
                    .map_err(|_| Error::parse("<constraint>", 1, col, format!("bad number `{lit}`")))?;
                out.push((Tok::Num(n), col));
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push((Tok::Ident(chars[start..i].iter().collect()), col));
            }
            _ => {
                return Err(Error::parse(
                    "<constraint>",
                    1,
                    col,
                    format!("unexpected character `{c}`"),
                ))
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    text: &'a str,
    tokens: Vec<(Tok, usize)>,
    pos: usize,
    properties: &'a [PropertySpec],
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn col(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|(_, c)| *c)
            .unwrap_or(self.text.len() + 1)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse("<constraint>", 1, self.col(), msg)
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s.eq_ignore_ascii_case(kw))
    }

    fn constraint(&mut self) -> Result<Node> {
        let node = if self.is_keyword("IF") {
            self.bump();
            let cond = self.comparison()?;
            if !self.is_keyword("THEN") {
                return Err(self.err("expected THEN"));
            }
            self.bump();
            let then = self.comparison()?;
            Node::Conditional { cond, then }
        } else {
            Node::Comparison(self.comparison()?)
        };
        if self.pos != self.tokens.len() {
            return Err(self.err("trailing input after constraint"));
        }
        Ok(node)
    }

    fn comparison(&mut self) -> Result<Comparison> {
        let lhs = self.sum()?;
        let op = match self.bump() {
            Some(Tok::Rel(r)) => match r {
                RelOpTok::Lt => RelOp::Lt,
                RelOpTok::Le => RelOp::Le,
                RelOpTok::Eq => RelOp::Eq,
                RelOpTok::Ge => RelOp::Ge,
                RelOpTok::Gt => RelOp::Gt,
            },
            _ => {
                self.pos = self.pos.saturating_sub(1);
                return Err(self.err("expected comparison operator"));
            }
        };
        let rhs = self.sum()?;
        Ok(Comparison { lhs, op, rhs })
    }

    fn sum(&mut self) -> Result<Expr> {
        let mut e = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Op('+')) => {
                    self.bump();
                    e = Expr::Add(Box::new(e), Box::new(self.term()?));
                }
                Some(Tok::Op('-')) => {
                    self.bump();
                    e = Expr::Sub(Box::new(e), Box::new(self.term()?));
                }
                _ => break,
            }
        }
        Ok(e)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut e = self.factor()?;
        while matches!(self.peek(), Some(Tok::Op('*'))) {
            self.bump();
            e = Expr::Mul(Box::new(e), Box::new(self.factor()?));
        }
        Ok(e)
    }

    fn factor(&mut self) -> Result<Expr> {
        match self.bump() {
            Some(Tok::Num(n)) => Ok(Expr::Num(n)),
            Some(Tok::Ident(name)) => {
                if name.eq_ignore_ascii_case("if") || name.eq_ignore_ascii_case("then") {
                    self.pos -= 1;
                    return Err(self.err(format!("unexpected keyword `{name}`")));
                }
                let idx = self
                    .properties
                    .iter()
                    .position(|p| p.name() == name)
                    .ok_or_else(|| {
                        self.pos -= 1;
                        self.err(format!("unknown property `{name}`"))
                    })?;
                Ok(Expr::Prop(idx))
            }
            Some(Tok::LParen) => {
                let e = self.sum()?;
                match self.bump() {
                    Some(Tok::RParen) => Ok(e),
                    _ => {
                        self.pos = self.pos.saturating_sub(1);
                        Err(self.err("expected `)`"))
                    }
                }
            }
            _ => {
                self.pos = self.pos.saturating_sub(1);
                Err(self.err("expected number, property or `(`"))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::PropertyKind;

    fn props() -> Vec<PropertySpec> {
        vec![
            PropertySpec::new("p1", PropertyKind::Integer, 1.0, 10.0, 1.0).unwrap(),
            PropertySpec::new("p2", PropertyKind::Integer, 1.0, 10.0, 1.0).unwrap(),
        ]
    }

    #[test]
    fn comparison_evaluates() {
        let c = Constraint::parse("p2 <= p1", &props()).unwrap();
        assert_eq!(c.kind(), ConstraintKind::Comparison);
        assert!(c.eval(&[5.0, 3.0]));
        assert!(c.eval(&[5.0, 5.0]));
        assert!(!c.eval(&[3.0, 5.0]));
    }

    #[test]
    fn arithmetic_and_parens() {
        let c = Constraint::parse("p1 + 2 * p2 > (p1 - 1)", &props()).unwrap();
        assert!(c.eval(&[4.0, 1.0]));
    }

    #[test]
    fn conditional_is_implication() {
        let c = Constraint::parse("IF p1 >= 5 THEN p2 >= 2", &props()).unwrap();
        assert_eq!(c.kind(), ConstraintKind::Conditional);
        assert!(c.eval(&[4.0, 1.0])); // antecedent false
        assert!(c.eval(&[5.0, 2.0]));
        assert!(!c.eval(&[5.0, 1.0]));
    }

    #[test]
    fn unknown_property_is_rejected() {
        let err = Constraint::parse("bogus <= p1", &props()).unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn mentions_reports_referenced_properties() {
        let c = Constraint::parse("p2 <= p1", &props()).unwrap();
        assert_eq!(c.mentions().into_iter().collect::<Vec<_>>(), vec![0, 1]);
        let c = Constraint::parse("p1 >= 3", &props()).unwrap();
        assert_eq!(c.mentions().into_iter().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn equality_uses_tolerance() {
        let c = Constraint::parse("p1 = 3", &props()).unwrap();
        assert!(c.eval(&[3.0 + 1e-12, 0.0]));
        assert!(!c.eval(&[3.1, 0.0]));
    }
}
