use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::{pow_partials, DomainError, Expr};
use crate::{Error, Result};

/// Name to value map for inputs and parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Bindings(BTreeMap<String, f64>);

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, name: impl Into<String>, value: f64) -> &mut Self {
        self.0.insert(name.into(), value);
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.get(name).copied()
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Self {
        Self(pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
    }
}

fn lookup(b: &Bindings, name: &str) -> Result<f64> {
    b.get(name).ok_or_else(|| Error::UnboundName(name.to_string()))
}

/// Evaluates `e` under `b`.
pub fn eval_expr(e: &Expr, b: &Bindings) -> Result<f64> {
    let v = eval_rec(e, b)?;
    if !v.is_finite() {
        return Err(DomainError::NonFinite.into());
    }
    Ok(v)
}

fn eval_rec(e: &Expr, b: &Bindings) -> Result<f64> {
    Ok(match e {
        Expr::Const(v) => *v,
        Expr::Var(n) | Expr::Param(n) => lookup(b, n)?,
        Expr::Neg(a) => -eval_rec(a, b)?,
        Expr::Add(l, r) => eval_rec(l, b)? + eval_rec(r, b)?,
        Expr::Sub(l, r) => eval_rec(l, b)? - eval_rec(r, b)?,
        Expr::Mul(l, r) => eval_rec(l, b)? * eval_rec(r, b)?,
        Expr::Div(l, r) => {
            let num = eval_rec(l, b)?;
            let den = eval_rec(r, b)?;
            if den == 0.0 {
                return Err(DomainError::DivisionByZero.into());
            }
            num / den
        }
        Expr::Pow(l, r) => pow_partials(eval_rec(l, b)?, eval_rec(r, b)?)?.0,
    })
}

/// Partial derivatives of `e` with respect to each name in `wrt`, evaluated
/// at `b` by forward accumulation over the tree.
pub fn grad_expr(e: &Expr, b: &Bindings, wrt: &[&str]) -> Result<Vec<f64>> {
    for n in wrt {
        lookup(b, n)?;
    }
    let (v, g) = forward(e, b, wrt)?;
    if !v.is_finite() {
        return Err(DomainError::NonFinite.into());
    }
    if g.iter().any(|d| !d.is_finite()) {
        return Err(DomainError::NonDifferentiable.into());
    }
    Ok(g)
}

fn forward(e: &Expr, b: &Bindings, wrt: &[&str]) -> Result<(f64, Vec<f64>)> {
    let n = wrt.len();
    Ok(match e {
        Expr::Const(v) => (*v, vec![0.0; n]),
        Expr::Var(name) | Expr::Param(name) => {
            let v = lookup(b, name)?;
            let g = wrt.iter().map(|w| if *w == name.as_str() { 1.0 } else { 0.0 }).collect();
            (v, g)
        }
        Expr::Neg(a) => {
            let (v, g) = forward(a, b, wrt)?;
            (-v, g.into_iter().map(|d| -d).collect())
        }
        Expr::Add(l, r) | Expr::Sub(l, r) => {
            let (lv, lg) = forward(l, b, wrt)?;
            let (rv, rg) = forward(r, b, wrt)?;
            let s = if matches!(e, Expr::Add(..)) { 1.0 } else { -1.0 };
            (lv + s * rv, lg.iter().zip(&rg).map(|(a, c)| a + s * c).collect())
        }
        Expr::Mul(l, r) => {
            let (lv, lg) = forward(l, b, wrt)?;
            let (rv, rg) = forward(r, b, wrt)?;
            (lv * rv, lg.iter().zip(&rg).map(|(a, c)| a * rv + lv * c).collect())
        }
        Expr::Div(l, r) => {
            let (lv, lg) = forward(l, b, wrt)?;
            let (rv, rg) = forward(r, b, wrt)?;
            if rv == 0.0 {
                return Err(DomainError::DivisionByZero.into());
            }
            let q = lv / rv;
            (q, lg.iter().zip(&rg).map(|(a, c)| (a - q * c) / rv).collect())
        }
        Expr::Pow(l, r) => {
            let (bv, bg) = forward(l, b, wrt)?;
            let (pv, pg) = forward(r, b, wrt)?;
            let (v, db, dp) = pow_partials(bv, pv)?;
            let mut g = vec![0.0; n];
            for i in 0..n {
                let mut d = 0.0;
                if bg[i] != 0.0 {
                    d += db * bg[i];
                }
                if pg[i] != 0.0 {
                    d += dp * pg[i];
                }
                if !d.is_finite() {
                    return Err(DomainError::NonDifferentiable.into());
                }
                g[i] = d;
            }
            (v, g)
        }
    })
}
