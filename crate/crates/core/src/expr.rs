//! Closed-form data expressions (`1 + 0.5*cos(pi*x1)`, `x1*sin(2*pi*y2)`, ...).
//!
//! Parsing and evaluation are delegated to `meval`; this wrapper fixes the
//! variable sets so a config can only refer to `x1..xn` (and `y1..yn` for
//! data living on the cell boundary).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

const X2: [&str; 2] = ["x1", "x2"];
const X3: [&str; 3] = ["x1", "x2", "x3"];
const XY2: [&str; 4] = ["x1", "x2", "y1", "y2"];
const XY3: [&str; 6] = ["x1", "x2", "x3", "y1", "y2", "y3"];

/// Which variables an expression may use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variables {
    /// `x1..xn`
    Space(usize),
    /// `x1..xn, y1..yn`
    SpaceAndCell(usize),
}

impl Variables {
    fn names(self) -> &'static [&'static str] {
        match self {
            Variables::Space(2) => &X2,
            Variables::Space(_) => &X3,
            Variables::SpaceAndCell(2) => &XY2,
            Variables::SpaceAndCell(_) => &XY3,
        }
    }
}

#[derive(Clone)]
pub struct Expression {
    source: String,
    expr: meval::Expr,
    vars: Variables,
}

impl fmt::Debug for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expression({:?})", self.source)
    }
}

impl Expression {
    pub fn parse(source: &str, vars: Variables) -> Result<Self> {
        let err = |message: String| Error::Expression {
            source_text: source.to_string(),
            message,
        };
        let expr = meval::Expr::from_str(source).map_err(|e| err(e.to_string()))?;
        // binding checks that no unknown variables or functions are used
        let _ = expr
            .clone()
            .bindn(vars.names())
            .map_err(|e| err(e.to_string()))?;
        Ok(Expression {
            source: source.to_string(),
            expr,
            vars,
        })
    }

    pub fn constant(value: f64, vars: Variables) -> Self {
        Expression::parse(&format!("{value:e}"), vars).expect("literal parses")
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn variables(&self) -> Variables {
        self.vars
    }

    /// Evaluator taking the concatenated variable values.
    pub fn evaluator(&self) -> impl Fn(&[f64]) -> f64 {
        self.expr
            .clone()
            .bindn(self.vars.names())
            .expect("validated at parse time")
    }

    /// Evaluator for a space-only expression at `x`.
    pub fn space_fn(&self) -> impl Fn(&[f64]) -> f64 {
        self.evaluator()
    }

    /// Evaluator for a two-scale expression at `(x, y)`.
    pub fn two_scale_fn(&self) -> impl Fn(&[f64], &[f64]) -> f64 {
        let eval = self.evaluator();
        move |x: &[f64], y: &[f64]| {
            let mut buf = [0.0; 6];
            let d = x.len();
            buf[..d].copy_from_slice(x);
            buf[d..2 * d].copy_from_slice(y);
            eval(&buf[..2 * d])
        }
    }

    /// Whether the expression is literally the constant zero.
    pub fn is_zero(&self) -> bool {
        self.expr.clone().eval().map(|v| v == 0.0).unwrap_or(false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_space_expression() {
        let e = Expression::parse("1 + 0.5*cos(pi*x1) * x2^2", Variables::Space(2)).unwrap();
        let f = e.space_fn();
        let v = f(&[0.0, 2.0]);
        assert!((v - 3.0).abs() < 1e-15);
    }

    #[test]
    fn evaluates_two_scale_expression() {
        let e = Expression::parse("x1*sin(2*pi*y2) + exp(0)", Variables::SpaceAndCell(2)).unwrap();
        let f = e.two_scale_fn();
        assert!((f(&[2.0, 0.0], &[0.0, 0.25]) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_unknown_variable() {
        let err = Expression::parse("y1 + x1", Variables::Space(2)).unwrap_err();
        assert!(matches!(err, Error::Expression { .. }));
        assert!(Expression::parse("x3", Variables::Space(2)).is_err());
        assert!(Expression::parse("x3", Variables::Space(3)).is_ok());
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(Expression::parse("1 + * 2", Variables::Space(2)).is_err());
    }

    #[test]
    fn zero_detection() {
        assert!(Expression::parse("0", Variables::Space(2))
            .unwrap()
            .is_zero());
        assert!(!Expression::parse("x1", Variables::Space(2))
            .unwrap()
            .is_zero());
        assert!(Expression::constant(0.0, Variables::Space(2)).is_zero());
    }
}
