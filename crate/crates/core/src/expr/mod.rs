//! Symbolic model expressions.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?          right-associative
//! atom    := number | identifier | '(' sum ')'
//! ```
//!
//! `^` binds tighter than a leading minus, so `-x^2` is `-(x^2)`, while the
//! exponent itself may be negated (`x^-1`). No function calls yet; adding
//! one means a new [`Expr`] variant plus its rules in `eval` and `tape`.

mod eval;
mod parse;
mod tape;

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::string::String;
use core::fmt;

pub use eval::{eval_expr, grad_expr, Bindings};
pub use parse::parse_expr;
pub use tape::{CompiledExpr, TapeScratch};

/// Expression tree over named inputs (`Var`) and named parameters (`Param`).
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(String),
    Param(String),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
}

/// Why an expression could not be evaluated (or differentiated) at a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum DomainError {
    #[error("negative base with non-integer exponent")]
    NegativeBase,
    #[error("division by zero")]
    DivisionByZero,
    #[error("zero base with negative exponent")]
    PoleAtZero,
    #[error("derivative is not finite")]
    NonDifferentiable,
    #[error("value is not finite")]
    NonFinite,
}

impl Expr {
    pub fn constant(v: f64) -> Self {
        Expr::Const(v)
    }

    pub fn var(name: impl Into<String>) -> Self {
        Expr::Var(name.into())
    }

    pub fn param(name: impl Into<String>) -> Self {
        Expr::Param(name.into())
    }

    /// Number of nodes in the tree.
    pub fn node_count(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) | Expr::Param(_) => 1,
            Expr::Neg(a) => 1 + a.node_count(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                1 + a.node_count() + b.node_count()
            }
        }
    }

    /// Names of all `Var` and `Param` leaves.
    pub fn names(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_names(&mut out);
        out
    }

    fn collect_names<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(n) | Expr::Param(n) => {
                out.insert(n.as_str());
            }
            Expr::Neg(a) => a.collect_names(out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.collect_names(out);
                b.collect_names(out);
            }
        }
    }
}

/// Canonical fully-parenthesized form; `parse_expr` reads it back to the
/// same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(v) if *v < 0.0 => write!(f, "(-{})", -v),
            Expr::Const(v) => write!(f, "{v}"),
            Expr::Var(n) | Expr::Param(n) => f.write_str(n),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "({a} ^ {b})"),
        }
    }
}

pub fn print_expr(e: &Expr) -> String {
    use alloc::string::ToString;
    e.to_string()
}

/// Value and partial derivatives of `b^p`, shared by the tree evaluator and
/// the tape. Integer exponents accept any base (sign preserving); otherwise
/// the base must be non-negative. A partial that is undefined at the point
/// comes back as NaN and only becomes an error if it is actually needed.
pub(crate) fn pow_partials(b: f64, p: f64) -> Result<(f64, f64, f64), DomainError> {
    use crate::math::{is_integer, ln, pow};
    if b == 0.0 && p < 0.0 {
        return Err(DomainError::PoleAtZero);
    }
    if is_integer(p) {
        let v = pow(b, p);
        let db = if p == 0.0 { 0.0 } else { p * pow(b, p - 1.0) };
        let dp = if b > 0.0 {
            v * ln(b)
        } else if b == 0.0 && p > 0.0 {
            0.0
        } else {
            f64::NAN
        };
        return Ok((v, db, dp));
    }
    if b < 0.0 {
        return Err(DomainError::NegativeBase);
    }
    if b == 0.0 {
        let db = if p > 1.0 { 0.0 } else { f64::INFINITY };
        return Ok((0.0, db, 0.0));
    }
    let v = pow(b, p);
    Ok((v, p * v / b, v * ln(b)))
}
