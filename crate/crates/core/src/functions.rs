//! The evaluation contract shared by parsed expressions and host callbacks.

use crate::scalar::{EvalFault, Scalar};

/// Which call of a solve this is.
///
/// Mirrors the integer `Status` argument of a classic user function:
/// 1 on the first call, 0 on ordinary calls and 2 on the final call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    First,
    Normal,
    Final,
}

impl Status {
    pub fn code(self) -> i32 {
        match self {
            Status::First => 1,
            Status::Normal => 0,
            Status::Final => 2,
        }
    }
}

/// A vector of problem functions `F: R^n -> R^neF` evaluable over any
/// [`Scalar`] algebra.
///
/// Implementations must compute the same arithmetic regardless of the scalar
/// type so that values computed over duals agree with plain values. A host
/// callback requests a different point by returning [`EvalFault::Retry`] and
/// stops the solve with [`EvalFault::Abort`].
pub trait ProblemFunctions: Sync {
    fn num_vars(&self) -> usize;
    fn num_funcs(&self) -> usize;
    fn eval<S: Scalar>(&self, status: Status, x: &[S]) -> Result<Vec<S>, EvalFault>;

    /// Rows containing a nonsmooth operation whose argument lies within `tol`
    /// of its kink at `x`. Host callbacks have no way to report this.
    fn kinks_near(&self, _x: &[f64], _tol: f64) -> Vec<usize> {
        Vec::new()
    }

    /// Rows that use a nonsmooth operation anywhere.
    fn nonsmooth_rows(&self) -> Vec<usize> {
        Vec::new()
    }

    /// Plain evaluation with an ordinary status.
    fn values(&self, x: &[f64]) -> Result<Vec<f64>, EvalFault> {
        self.eval(Status::Normal, x)
    }
}

impl<T: ProblemFunctions + ?Sized> ProblemFunctions for &T {
    fn num_vars(&self) -> usize {
        (**self).num_vars()
    }
    fn num_funcs(&self) -> usize {
        (**self).num_funcs()
    }
    fn eval<S: Scalar>(&self, status: Status, x: &[S]) -> Result<Vec<S>, EvalFault> {
        (**self).eval(status, x)
    }
    fn kinks_near(&self, x: &[f64], tol: f64) -> Vec<usize> {
        (**self).kinks_near(x, tol)
    }
    fn nonsmooth_rows(&self) -> Vec<usize> {
        (**self).nonsmooth_rows()
    }
}
