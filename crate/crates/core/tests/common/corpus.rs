//! Seeded random function sets for property tests.
//!
//! Rows are sums of terms drawn from families whose derivatives cannot cancel
//! for generic coefficients, so the symbolic class of every entry is also its
//! true class. All terms are defined and smooth on the whole real line.

use std::sync::Arc;

use nlpad::expr::{Expr, Func, FunctionSet};
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MAX_VARS: usize = 8;
pub const MAX_ROWS: usize = 8;

fn a(e: Expr) -> Arc<Expr> {
    Arc::new(e)
}

fn coeff(rng: &mut impl Rng) -> f64 {
    let m: f64 = rng.random_range(0.3..2.0);
    if rng.random_bool(0.5) {
        m
    } else {
        -m
    }
}

fn scaled(c: f64, e: Expr) -> Expr {
    Expr::Mul(a(Expr::Const(c)), a(e))
}

fn affine(rng: &mut impl Rng, j: usize) -> Expr {
    let s = coeff(rng) * 0.5;
    let b: f64 = rng.random_range(-1.0..1.0);
    Expr::Add(a(scaled(s, Expr::Var(j))), a(Expr::Const(b)))
}

fn one_plus_square(j: usize) -> Expr {
    Expr::Add(a(Expr::Const(1.0)), a(Expr::Pow(a(Expr::Var(j)), 2)))
}

/// A polynomial term of total degree 1 to 4.
fn poly_term(rng: &mut impl Rng, n: usize) -> Expr {
    let c = coeff(rng);
    let i = rng.random_range(0..n);
    match rng.random_range(0..4) {
        0 => scaled(c, Expr::Var(i)),
        1 => scaled(c, Expr::Pow(a(Expr::Var(i)), rng.random_range(2..=4))),
        _ => {
            let j = rng.random_range(0..n);
            if i == j {
                scaled(c, Expr::Pow(a(Expr::Var(i)), 2))
            } else {
                let p = rng.random_range(1..=2);
                Expr::Mul(a(scaled(c, Expr::Var(i))), a(Expr::Pow(a(Expr::Var(j)), p)))
            }
        }
    }
}

fn transcendental_term(rng: &mut impl Rng, n: usize) -> Expr {
    let c = coeff(rng);
    let j = rng.random_range(0..n);
    let e = match rng.random_range(0..7) {
        0 => Expr::Func(Func::Sin, a(affine(rng, j))),
        1 => Expr::Func(Func::Cos, a(affine(rng, j))),
        2 => Expr::Func(Func::Exp, a(affine(rng, j))),
        3 => Expr::Func(Func::Log, a(one_plus_square(j))),
        4 => Expr::Func(Func::Sqrt, a(one_plus_square(j))),
        5 => Expr::Div(a(Expr::Const(1.0)), a(one_plus_square(j))),
        _ => {
            let i = (j + 1 + rng.random_range(0..n.max(2) - 1)) % n;
            Expr::Mul(a(Expr::Var(i)), a(Expr::Func(Func::Sin, a(Expr::Var(j)))))
        }
    };
    scaled(c, e)
}

fn sum(terms: Vec<Expr>, c0: f64) -> Expr {
    terms
        .into_iter()
        .fold(Expr::Const(c0), |acc, t| Expr::Add(a(acc), a(t)))
}

/// A purely affine row over a random subset of the variables.
pub fn linear_row(rng: &mut impl Rng, n: usize) -> Expr {
    let count = rng.random_range(1..=n.min(3));
    let terms = (0..count).map(|_| scaled(coeff(rng), Expr::Var(rng.random_range(0..n)))).collect();
    sum(terms, rng.random_range(-1.0..1.0))
}

/// A random row; `transcendental` mixes in non-polynomial families.
pub fn random_row(rng: &mut impl Rng, n: usize, transcendental: bool) -> Expr {
    let count = rng.random_range(1..=4);
    let terms = (0..count)
        .map(|_| {
            if transcendental && rng.random_bool(0.5) {
                transcendental_term(rng, n)
            } else {
                poly_term(rng, n)
            }
        })
        .collect();
    sum(terms, rng.random_range(-1.0..1.0))
}

/// Problem `seed` of the corpus: `n <= 8`, `neF <= 8`, about a quarter of
/// the rows affine.
pub fn function_set(seed: u64, transcendental: bool) -> FunctionSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=MAX_VARS);
    let m = rng.random_range(1..=MAX_ROWS);
    let rows = (0..m)
        .map(|_| {
            if rng.random_bool(0.25) {
                linear_row(&mut rng, n)
            } else {
                random_row(&mut rng, n, transcendental)
            }
        })
        .collect();
    FunctionSet::new(n, rows).expect("generated rows use declared variables")
}

/// A point with coordinates in `[-2, 2]`.
pub fn point(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}
