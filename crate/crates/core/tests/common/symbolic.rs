//! Symbolic differentiation of expression trees, used as ground truth for
//! structure and Jacobian values. Independent of the forward-mode engine.

use std::sync::Arc;

use nlpad::expr::{Expr, Func};
use nlpad::structure::EntryClass;

fn k(v: f64) -> Expr {
    Expr::Const(v)
}

fn as_const(e: &Expr) -> Option<f64> {
    match e {
        Expr::Const(v) => Some(*v),
        _ => None,
    }
}

fn fold(e: Expr) -> Expr {
    if e.free_variables().is_empty() {
        if let Ok(v) = e.eval::<f64>(&[]) {
            return k(v);
        }
    }
    e
}

fn add(a: Expr, b: Expr) -> Expr {
    match (as_const(&a), as_const(&b)) {
        (Some(x), _) if x == 0.0 => b,
        (_, Some(y)) if y == 0.0 => a,
        _ => fold(Expr::Add(Arc::new(a), Arc::new(b))),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (as_const(&a), as_const(&b)) {
        (_, Some(y)) if y == 0.0 => a,
        (Some(x), _) if x == 0.0 => neg(b),
        _ => fold(Expr::Sub(Arc::new(a), Arc::new(b))),
    }
}

fn neg(a: Expr) -> Expr {
    match as_const(&a) {
        Some(x) => k(-x),
        None => Expr::Neg(Arc::new(a)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (as_const(&a), as_const(&b)) {
        (Some(x), _) | (_, Some(x)) if x == 0.0 => k(0.0),
        (Some(x), _) if x == 1.0 => b,
        (_, Some(y)) if y == 1.0 => a,
        _ => fold(Expr::Mul(Arc::new(a), Arc::new(b))),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (as_const(&a), as_const(&b)) {
        (Some(x), _) if x == 0.0 => k(0.0),
        (_, Some(y)) if y == 1.0 => a,
        _ => fold(Expr::Div(Arc::new(a), Arc::new(b))),
    }
}

fn powi(a: Expr, p: i32) -> Expr {
    match p {
        0 => k(1.0),
        1 => a,
        _ => fold(Expr::Pow(Arc::new(a), p)),
    }
}

fn func(f: Func, a: Expr) -> Expr {
    fold(Expr::Func(f, Arc::new(a)))
}

/// `d e / d x_j`, simplified just enough that identically zero and constant
/// derivatives come out as `Const`.
pub fn diff(e: &Expr, j: usize) -> Expr {
    match e {
        Expr::Const(_) => k(0.0),
        Expr::Var(v) => k(if *v == j { 1.0 } else { 0.0 }),
        Expr::Neg(a) => neg(diff(a, j)),
        Expr::Add(a, b) => add(diff(a, j), diff(b, j)),
        Expr::Sub(a, b) => sub(diff(a, j), diff(b, j)),
        Expr::Mul(a, b) => add(
            mul(diff(a, j), (**b).clone()),
            mul((**a).clone(), diff(b, j)),
        ),
        Expr::Div(a, b) => sub(
            div(diff(a, j), (**b).clone()),
            div(mul((**a).clone(), diff(b, j)), powi((**b).clone(), 2)),
        ),
        Expr::Pow(a, p) => mul(mul(k(*p as f64), powi((**a).clone(), p - 1)), diff(a, j)),
        Expr::PowReal(a, p) => {
            let inner = fold(Expr::PowReal(a.clone(), p - 1.0));
            mul(mul(k(*p), inner), diff(a, j))
        }
        Expr::Func(f, a) => {
            let a0 = (**a).clone();
            let da = diff(a, j);
            let outer = match f {
                Func::Sqrt => div(k(0.5), func(Func::Sqrt, a0)),
                Func::Exp => func(Func::Exp, a0),
                Func::Log => div(k(1.0), a0),
                Func::Sin => func(Func::Cos, a0),
                Func::Cos => neg(func(Func::Sin, a0)),
                Func::Tan => add(k(1.0), powi(func(Func::Tan, a0), 2)),
                Func::Abs => div(a0.clone(), func(Func::Abs, a0)),
            };
            mul(outer, da)
        }
    }
}

/// Ground-truth class of `d row / d x_j`.
pub fn class_of(row: &Expr, j: usize) -> EntryClass {
    match diff(row, j) {
        Expr::Const(v) if v == 0.0 => EntryClass::Zero,
        Expr::Const(v) => EntryClass::Constant(v),
        _ => EntryClass::Nonlinear,
    }
}

/// Dense Jacobian of `rows` at `x` from the symbolic derivatives.
pub fn jacobian(rows: &[Arc<Expr>], n: usize, x: &[f64]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| (0..n).map(|j| diff(r, j).eval::<f64>(x).expect("derivative evaluates")).collect())
        .collect()
}
