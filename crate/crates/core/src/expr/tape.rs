use alloc::string::ToString;
use alloc::vec::Vec;

use super::{pow_partials, DomainError, Expr};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Slot(usize),
    Neg(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Pow(usize, usize),
}

/// An [`Expr`] flattened into a post-order tape over numbered slots, for
/// hot loops (HMC, predictive mixtures). Slot `i` is the `i`-th name given
/// to [`CompiledExpr::compile`].
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledExpr {
    ops: Vec<Op>,
    n_slots: usize,
}

/// Reusable buffers for tape evaluation.
#[derive(Debug, Default, Clone)]
pub struct TapeScratch {
    vals: Vec<f64>,
    tans: Vec<f64>,
}

impl CompiledExpr {
    pub fn compile(e: &Expr, slots: &[&str]) -> Result<Self> {
        let mut ops = Vec::with_capacity(e.node_count());
        emit(e, slots, &mut ops)?;
        Ok(Self { ops, n_slots: slots.len() })
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn eval(&self, slots: &[f64], scratch: &mut TapeScratch) -> Result<f64, DomainError> {
        debug_assert_eq!(slots.len(), self.n_slots);
        let vals = &mut scratch.vals;
        vals.clear();
        for op in &self.ops {
            let v = match *op {
                Op::Const(c) => c,
                Op::Slot(s) => slots[s],
                Op::Neg(a) => -vals[a],
                Op::Add(a, b) => vals[a] + vals[b],
                Op::Sub(a, b) => vals[a] - vals[b],
                Op::Mul(a, b) => vals[a] * vals[b],
                Op::Div(a, b) => {
                    if vals[b] == 0.0 {
                        return Err(DomainError::DivisionByZero);
                    }
                    vals[a] / vals[b]
                }
                Op::Pow(a, b) => pow_partials(vals[a], vals[b])?.0,
            };
            vals.push(v);
        }
        let v = *vals.last().unwrap_or(&0.0);
        if !v.is_finite() {
            return Err(DomainError::NonFinite);
        }
        Ok(v)
    }

    /// Value and gradient with respect to the slots listed in `wrt`
    /// (written to `grad`, which must have `wrt.len()` entries).
    pub fn eval_grad(
        &self,
        slots: &[f64],
        wrt: &[usize],
        grad: &mut [f64],
        scratch: &mut TapeScratch,
    ) -> Result<f64, DomainError> {
        debug_assert_eq!(slots.len(), self.n_slots);
        debug_assert_eq!(wrt.len(), grad.len());
        let n = wrt.len();
        let TapeScratch { vals, tans } = scratch;
        vals.clear();
        tans.clear();
        tans.resize(self.ops.len() * n, 0.0);
        for (i, op) in self.ops.iter().enumerate() {
            let (head, rest) = tans.split_at_mut(i * n);
            let out = &mut rest[..n];
            let t = |k: usize| &head[k * n..(k + 1) * n];
            let v = match *op {
                Op::Const(c) => c,
                Op::Slot(s) => {
                    for (o, w) in out.iter_mut().zip(wrt) {
                        *o = if *w == s { 1.0 } else { 0.0 };
                    }
                    slots[s]
                }
                Op::Neg(a) => {
                    for (o, d) in out.iter_mut().zip(t(a)) {
                        *o = -d;
                    }
                    -vals[a]
                }
                Op::Add(a, b) => {
                    for ((o, x), y) in out.iter_mut().zip(t(a)).zip(t(b)) {
                        *o = x + y;
                    }
                    vals[a] + vals[b]
                }
                Op::Sub(a, b) => {
                    for ((o, x), y) in out.iter_mut().zip(t(a)).zip(t(b)) {
                        *o = x - y;
                    }
                    vals[a] - vals[b]
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (vals[a], vals[b]);
                    for ((o, x), y) in out.iter_mut().zip(t(a)).zip(t(b)) {
                        *o = x * vb + va * y;
                    }
                    va * vb
                }
                Op::Div(a, b) => {
                    let vb = vals[b];
                    if vb == 0.0 {
                        return Err(DomainError::DivisionByZero);
                    }
                    let q = vals[a] / vb;
                    for ((o, x), y) in out.iter_mut().zip(t(a)).zip(t(b)) {
                        *o = (x - q * y) / vb;
                    }
                    q
                }
                Op::Pow(a, b) => {
                    let (v, db, dp) = pow_partials(vals[a], vals[b])?;
                    for ((o, x), y) in out.iter_mut().zip(t(a)).zip(t(b)) {
                        let mut d = 0.0;
                        if *x != 0.0 {
                            d += db * x;
                        }
                        if *y != 0.0 {
                            d += dp * y;
                        }
                        if !d.is_finite() {
                            return Err(DomainError::NonDifferentiable);
                        }
                        *o = d;
                    }
                    v
                }
            };
            vals.push(v);
        }
        let last = self.ops.len() - 1;
        let v = vals[last];
        if !v.is_finite() {
            return Err(DomainError::NonFinite);
        }
        grad.copy_from_slice(&tans[last * n..(last + 1) * n]);
        if grad.iter().any(|d| !d.is_finite()) {
            return Err(DomainError::NonDifferentiable);
        }
        Ok(v)
    }
}

fn emit(e: &Expr, slots: &[&str], ops: &mut Vec<Op>) -> Result<usize> {
    let op = match e {
        Expr::Const(c) => Op::Const(*c),
        Expr::Var(n) | Expr::Param(n) => {
            let s = slots
                .iter()
                .position(|s| *s == n.as_str())
                .ok_or_else(|| Error::UnboundName(n.to_string()))?;
            Op::Slot(s)
        }
        Expr::Neg(a) => Op::Neg(emit(a, slots, ops)?),
        Expr::Add(a, b) => Op::Add(emit(a, slots, ops)?, emit(b, slots, ops)?),
        Expr::Sub(a, b) => Op::Sub(emit(a, slots, ops)?, emit(b, slots, ops)?),
        Expr::Mul(a, b) => Op::Mul(emit(a, slots, ops)?, emit(b, slots, ops)?),
        Expr::Div(a, b) => Op::Div(emit(a, slots, ops)?, emit(b, slots, ops)?),
        Expr::Pow(a, b) => Op::Pow(emit(a, slots, ops)?, emit(b, slots, ops)?),
    };
    ops.push(op);
    Ok(ops.len() - 1)
}
