//! Vector forward-mode differentiation.
//!
//! A [`DualVec`] carries a value and `p` directional derivatives. Seeding
//! variable `x_j` with row `j` of an `n x p` matrix `S` and evaluating `F`
//! once yields `F(x)` together with the product `J(x) S`.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::functions::{ProblemFunctions, Status};
use crate::scalar::{EvalFault, Scalar};

/// Value plus `p` derivative components.
///
/// An empty `deriv` stands for the zero vector, which keeps constants
/// allocation-free. Binary operations accept one empty and one full operand.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVec {
    pub value: f64,
    pub deriv: Vec<f64>,
}

impl DualVec {
    pub fn constant(value: f64) -> Self {
        DualVec {
            value,
            deriv: Vec::new(),
        }
    }

    pub fn new(value: f64, deriv: Vec<f64>) -> Self {
        DualVec { value, deriv }
    }

    /// Derivative component `k`, treating a missing buffer as zero.
    pub fn d(&self, k: usize) -> f64 {
        self.deriv.get(k).copied().unwrap_or(0.0)
    }

    /// The derivative buffer padded to width `p`.
    pub fn into_deriv(self, p: usize) -> Vec<f64> {
        if self.deriv.is_empty() {
            vec![0.0; p]
        } else {
            debug_assert_eq!(self.deriv.len(), p);
            self.deriv
        }
    }

    /// Apply `f'(value) * deriv` for a unary function with derivative `slope`.
    fn chain(mut self, value: f64, slope: f64) -> Self {
        self.value = value;
        for d in &mut self.deriv {
            *d *= slope;
        }
        self
    }
}

/// `a*da + b*db` componentwise, where an empty buffer is zero.
fn combine(da: Vec<f64>, a: f64, db: Vec<f64>, b: f64) -> Vec<f64> {
    match (da.is_empty(), db.is_empty()) {
        (true, true) => da,
        (false, true) => scale_vec(da, a),
        (true, false) => scale_vec(db, b),
        (false, false) => {
            let mut out = da;
            for (x, y) in out.iter_mut().zip(db) {
                *x = a * *x + b * y;
            }
            out
        }
    }
}

fn scale_vec(mut v: Vec<f64>, s: f64) -> Vec<f64> {
    if s != 1.0 {
        for x in &mut v {
            *x *= s;
        }
    }
    v
}

impl Add for DualVec {
    type Output = DualVec;
    fn add(self, rhs: DualVec) -> DualVec {
        DualVec::new(self.value + rhs.value, combine(self.deriv, 1.0, rhs.deriv, 1.0))
    }
}

impl Sub for DualVec {
    type Output = DualVec;
    fn sub(self, rhs: DualVec) -> DualVec {
        DualVec::new(self.value - rhs.value, combine(self.deriv, 1.0, rhs.deriv, -1.0))
    }
}

impl Mul for DualVec {
    type Output = DualVec;
    fn mul(self, rhs: DualVec) -> DualVec {
        let value = self.value * rhs.value;
        DualVec::new(value, combine(self.deriv, rhs.value, rhs.deriv, self.value))
    }
}

impl Div for DualVec {
    type Output = DualVec;
    fn div(self, rhs: DualVec) -> DualVec {
        // (u/v)' = u'/v - (u/v) v'/v
        let q = self.value / rhs.value;
        let inv = 1.0 / rhs.value;
        DualVec::new(q, combine(self.deriv, inv, rhs.deriv, -q * inv))
    }
}

impl Neg for DualVec {
    type Output = DualVec;
    fn neg(self) -> DualVec {
        let value = -self.value;
        self.chain(value, -1.0)
    }
}

impl Scalar for DualVec {
    fn from_f64(v: f64) -> Self {
        DualVec::constant(v)
    }

    fn value(&self) -> f64 {
        self.value
    }

    fn is_finite(&self) -> bool {
        self.value.is_finite() && self.deriv.iter().all(|d| d.is_finite())
    }

    fn sqrt(self) -> Self {
        let r = self.value.sqrt();
        self.chain(r, 0.5 / r)
    }

    fn exp(self) -> Self {
        let e = self.value.exp();
        self.chain(e, e)
    }

    fn ln(self) -> Self {
        let v = self.value;
        self.chain(v.ln(), 1.0 / v)
    }

    fn sin(self) -> Self {
        let v = self.value;
        self.chain(v.sin(), v.cos())
    }

    fn cos(self) -> Self {
        let v = self.value;
        self.chain(v.cos(), -v.sin())
    }

    fn tan(self) -> Self {
        let v = self.value;
        let t = v.tan();
        self.chain(t, 1.0 + t * t)
    }

    fn abs(self) -> Self {
        let v = self.value;
        let sign = if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.chain(v.abs(), sign)
    }

    fn scale(self, c: f64) -> Self {
        let value = self.value * c;
        self.chain(value, c)
    }
}

/// An `n x p` seed matrix with `p <= n`.
#[derive(Debug, Clone, PartialEq)]
pub enum SeedMatrix {
    /// Column-major entries.
    Dense { n: usize, p: usize, data: Vec<f64> },
    /// Column `k` is the unit vector `e_{cols[k]}`.
    Unit { n: usize, cols: Vec<usize> },
}

impl SeedMatrix {
    pub fn identity(n: usize) -> Self {
        SeedMatrix::Unit {
            n,
            cols: (0..n).collect(),
        }
    }

    pub fn unit_columns(n: usize, cols: Vec<usize>) -> Self {
        debug_assert!(cols.iter().all(|&j| j < n));
        SeedMatrix::Unit { n, cols }
    }

    /// Build from column vectors of length `n`.
    pub fn from_columns(n: usize, columns: &[Vec<f64>]) -> Self {
        let mut data = Vec::with_capacity(n * columns.len());
        for c in columns {
            assert_eq!(c.len(), n, "seed column has the wrong length");
            data.extend_from_slice(c);
        }
        SeedMatrix::Dense {
            n,
            p: columns.len(),
            data,
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            SeedMatrix::Dense { n, .. } | SeedMatrix::Unit { n, .. } => *n,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            SeedMatrix::Dense { p, .. } => *p,
            SeedMatrix::Unit { cols, .. } => cols.len(),
        }
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        match self {
            SeedMatrix::Dense { n, data, .. } => data[k * n + j],
            SeedMatrix::Unit { cols, .. } => f64::from(cols[k] == j),
        }
    }

    /// Row `j`, the derivative seed for variable `x_j`.
    fn row(&self, j: usize) -> Vec<f64> {
        match self {
            SeedMatrix::Dense { n, p, data } => (0..*p).map(|k| data[k * n + j]).collect(),
            SeedMatrix::Unit { cols, .. } => cols.iter().map(|&c| f64::from(c == j)).collect(),
        }
    }
}

/// Dense row-major `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        DenseMatrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `F(x)` together with `J(x) S`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeededJacobian {
    pub values: Vec<f64>,
    /// `neF x p`.
    pub product: DenseMatrix,
}

/// One vector-forward sweep computing `F(x)` and `J(x) S`.
pub fn jacobian_times_seed<P: ProblemFunctions + ?Sized>(
    funcs: &P,
    x: &[f64],
    seed: &SeedMatrix,
) -> Result<SeededJacobian, EvalFault> {
    jacobian_times_seed_with_status(funcs, Status::Normal, x, seed)
}

pub(crate) fn jacobian_times_seed_with_status<P: ProblemFunctions + ?Sized>(
    funcs: &P,
    status: Status,
    x: &[f64],
    seed: &SeedMatrix,
) -> Result<SeededJacobian, EvalFault> {
    let n = funcs.num_vars();
    assert_eq!(x.len(), n, "point has the wrong dimension");
    assert_eq!(seed.rows(), n, "seed has the wrong number of rows");
    let p = seed.cols();
    let duals: Vec<DualVec> = x
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            let row = seed.row(j);
            if row.iter().all(|&s| s == 0.0) {
                DualVec::constant(v)
            } else {
                DualVec::new(v, row)
            }
        })
        .collect();
    let out = funcs.eval(status, &duals)?;
    let m = out.len();
    let mut values = Vec::with_capacity(m);
    let mut product = DenseMatrix::zeros(m, p);
    for (i, d) in out.into_iter().enumerate() {
        if !d.is_finite() {
            return Err(EvalFault::NonFinite { row: Some(i) });
        }
        values.push(d.value);
        for (k, v) in d.into_deriv(p).into_iter().enumerate() {
            product.set(i, k, v);
        }
    }
    Ok(SeededJacobian { values, product })
}

/// `F(x)` and the dense Jacobian, i.e. the product with the identity seed.
pub fn full_jacobian<P: ProblemFunctions + ?Sized>(
    funcs: &P,
    x: &[f64],
) -> Result<SeededJacobian, EvalFault> {
    jacobian_times_seed(funcs, x, &SeedMatrix::identity(funcs.num_vars()))
}
