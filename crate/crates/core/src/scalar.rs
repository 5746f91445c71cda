//! The scalar algebra that problem functions are evaluated over.
//!
//! Plain `f64` gives function values; [`DualVec`](crate::ad::DualVec) carries
//! a vector of directional derivatives alongside the value. Any code written
//! against [`Scalar`] can be differentiated by evaluating it over `DualVec`.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic needed to evaluate a problem function.
///
/// The elementary functions take `self` by value so dual implementations
/// can reuse their derivative buffers.
pub trait Scalar:
    Clone
    + Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// A constant with no derivative part.
    fn from_f64(v: f64) -> Self;
    /// The primal value.
    fn value(&self) -> f64;
    /// True when the value and every derivative component are finite.
    fn is_finite(&self) -> bool;

    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Self;
    /// Absolute value; the derivative at zero is taken as zero.
    fn abs(self) -> Self;

    /// Multiply by a plain constant.
    fn scale(self, c: f64) -> Self {
        self * Self::from_f64(c)
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn tan(self) -> Self {
        f64::tan(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn scale(self, c: f64) -> Self {
        self * c
    }
}

/// Why an evaluation did not produce values.
///
/// `Retry` and `Abort` are the two user-side signals of the evaluation
/// protocol (`mode = -1` and `mode < -1`); the others are detected by the
/// expression evaluator.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalFault {
    #[error("row {}: {op} outside its domain (argument {arg})", fmt_row(*.row))]
    Domain {
        row: Option<usize>,
        op: &'static str,
        arg: f64,
    },
    #[error("row {}: non-finite result", fmt_row(*.row))]
    NonFinite { row: Option<usize> },
    #[error("evaluator asked for a different point (mode -1)")]
    Retry,
    #[error("evaluator requested termination (mode {0})")]
    Abort(i32),
}

fn fmt_row(row: Option<usize>) -> String {
    match row {
        Some(r) => (r + 1).to_string(),
        None => "?".to_string(),
    }
}

impl EvalFault {
    /// Attach a 0-based row index if none is recorded yet.
    pub fn at_row(self, row: usize) -> Self {
        match self {
            EvalFault::Domain { row: None, op, arg } => EvalFault::Domain {
                row: Some(row),
                op,
                arg,
            },
            EvalFault::NonFinite { row: None } => EvalFault::NonFinite { row: Some(row) },
            other => other,
        }
    }

    /// The 0-based row index, when known.
    pub fn row(&self) -> Option<usize> {
        match self {
            EvalFault::Domain { row, .. } | EvalFault::NonFinite { row } => *row,
            _ => None,
        }
    }

    /// Faults that a caller may answer by offering another point.
    pub fn is_retryable(&self) -> bool {
        !matches!(self, EvalFault::Abort(_))
    }

    /// The protocol `mode` value this fault corresponds to.
    pub fn mode(&self) -> i32 {
        match self {
            EvalFault::Abort(code) => *code,
            _ => -1,
        }
    }
}
