//! Expression forests for problem functions.
//!
//! Each row of `F(x)` is an [`Expr`] tree built by the parser (or by hand).
//! Trees are immutable and use `Arc` children, so subtrees may be shared
//! between rows. Evaluation is generic over [`Scalar`], which is how the same
//! tree yields plain values and forward-mode derivatives.

mod parse;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use crate::functions::{ProblemFunctions, Status};
use crate::scalar::{EvalFault, Scalar};

pub use parse::{parse_function, parse_function_at, ParseError, SymbolTable};

/// Elementary one-argument functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sqrt,
    Exp,
    Log,
    Sin,
    Cos,
    Tan,
    Abs,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Abs => "abs",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sqrt" => Func::Sqrt,
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "abs" => Func::Abs,
            _ => return None,
        })
    }
}

/// A node of an expression tree. `Var` indices are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Neg(Arc<Expr>),
    Add(Arc<Expr>, Arc<Expr>),
    Sub(Arc<Expr>, Arc<Expr>),
    Mul(Arc<Expr>, Arc<Expr>),
    Div(Arc<Expr>, Arc<Expr>),
    /// Integer power, evaluated by repeated squaring.
    Pow(Arc<Expr>, i32),
    /// Real power, evaluated as `exp(p * ln(base))`.
    PowReal(Arc<Expr>, f64),
    Func(Func, Arc<Expr>),
}

impl Expr {
    pub fn var(j: usize) -> Expr {
        Expr::Var(j)
    }

    /// Evaluate over any scalar algebra. `vars[j]` is the value of `Var(j)`.
    pub fn eval<S: Scalar>(&self, vars: &[S]) -> Result<S, EvalFault> {
        self.eval_inner(vars, &mut |_| {})
    }

    fn eval_inner<S: Scalar>(
        &self,
        vars: &[S],
        on_abs: &mut dyn FnMut(f64),
    ) -> Result<S, EvalFault> {
        Ok(match self {
            Expr::Const(c) => S::from_f64(*c),
            Expr::Var(j) => vars[*j].clone(),
            Expr::Neg(a) => -a.eval_inner(vars, on_abs)?,
            Expr::Add(a, b) => a.eval_inner(vars, on_abs)? + b.eval_inner(vars, on_abs)?,
            Expr::Sub(a, b) => a.eval_inner(vars, on_abs)? - b.eval_inner(vars, on_abs)?,
            Expr::Mul(a, b) => a.eval_inner(vars, on_abs)? * b.eval_inner(vars, on_abs)?,
            Expr::Div(a, b) => {
                let num = a.eval_inner(vars, on_abs)?;
                let den = b.eval_inner(vars, on_abs)?;
                if den.value() == 0.0 {
                    return Err(domain("division", den.value()));
                }
                num / den
            }
            Expr::Pow(a, k) => {
                let base = a.eval_inner(vars, on_abs)?;
                if *k < 0 && base.value() == 0.0 {
                    return Err(domain("negative power", 0.0));
                }
                powi(base, *k)
            }
            Expr::PowReal(a, p) => {
                let base = a.eval_inner(vars, on_abs)?;
                if base.value() <= 0.0 {
                    return Err(domain("real power", base.value()));
                }
                (base.ln().scale(*p)).exp()
            }
            Expr::Func(f, a) => {
                let arg = a.eval_inner(vars, on_abs)?;
                let v = arg.value();
                match f {
                    Func::Sqrt if v < 0.0 => return Err(domain("sqrt", v)),
                    Func::Log if v <= 0.0 => return Err(domain("log", v)),
                    Func::Tan if v.cos() == 0.0 => return Err(domain("tan", v)),
                    _ => {}
                }
                match f {
                    Func::Sqrt => arg.sqrt(),
                    Func::Exp => arg.exp(),
                    Func::Log => arg.ln(),
                    Func::Sin => arg.sin(),
                    Func::Cos => arg.cos(),
                    Func::Tan => arg.tan(),
                    Func::Abs => {
                        on_abs(v);
                        arg.abs()
                    }
                }
            }
        })
    }

    /// Indices of every variable reachable from this node.
    pub fn free_variables(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<usize>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(j) => {
                out.insert(*j);
            }
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::PowReal(a, _) | Expr::Func(_, a) => {
                a.collect_vars(out)
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Largest variable index used, if any.
    pub fn max_var(&self) -> Option<usize> {
        self.free_variables().last().copied()
    }

    /// True if the tree contains a nonsmooth node.
    pub fn has_abs(&self) -> bool {
        match self {
            Expr::Func(Func::Abs, _) => true,
            Expr::Const(_) | Expr::Var(_) => false,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::PowReal(a, _) | Expr::Func(_, a) => a.has_abs(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.has_abs() || b.has_abs()
            }
        }
    }

    /// Render with variable names. The output parses back to the same tree.
    pub fn display_with<'a>(&'a self, names: &'a [String]) -> impl fmt::Display + 'a {
        Named { expr: self, names }
    }
}

fn domain(op: &'static str, arg: f64) -> EvalFault {
    EvalFault::Domain { row: None, op, arg }
}

/// `base^k` by repeated squaring, so polynomial terms stay exact under
/// dual arithmetic.
pub(crate) fn powi<S: Scalar>(base: S, k: i32) -> S {
    if k == 0 {
        return S::from_f64(1.0);
    }
    let mut e = k.unsigned_abs();
    let mut acc: Option<S> = None;
    let mut b = base;
    loop {
        if e & 1 == 1 {
            acc = Some(match acc {
                None => b.clone(),
                Some(a) => a * b.clone(),
            });
        }
        e >>= 1;
        if e == 0 {
            break;
        }
        b = b.clone() * b;
    }
    let acc = acc.expect("nonzero exponent sets the accumulator");
    if k < 0 {
        S::from_f64(1.0) / acc
    } else {
        acc
    }
}

struct Named<'a> {
    expr: &'a Expr,
    names: &'a [String],
}

impl Named<'_> {
    fn write(&self, e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match e {
            Expr::Const(c) if *c < 0.0 => write!(f, "(-{:?})", -c),
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Var(j) => match self.names.get(*j) {
                Some(name) => f.write_str(name),
                None => write!(f, "x{}", j + 1),
            },
            Expr::Neg(a) => {
                f.write_str("-")?;
                self.write_atom(a, f)
            }
            Expr::Add(a, b) => self.write_binary(a, " + ", b, f),
            Expr::Sub(a, b) => self.write_binary(a, " - ", b, f),
            Expr::Mul(a, b) => self.write_binary(a, " * ", b, f),
            Expr::Div(a, b) => self.write_binary(a, " / ", b, f),
            Expr::Pow(a, k) => {
                self.write_atom(a, f)?;
                write!(f, "^{k}")
            }
            Expr::PowReal(a, p) => {
                self.write_atom(a, f)?;
                write!(f, "^({p:?})")
            }
            Expr::Func(func, a) => {
                write!(f, "{}(", func.name())?;
                self.write(a, f)?;
                f.write_str(")")
            }
        }
    }

    fn write_binary(&self, a: &Expr, op: &str, b: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        self.write(a, f)?;
        f.write_str(op)?;
        self.write(b, f)?;
        f.write_str(")")
    }

    fn write_atom(&self, a: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match a {
            Expr::Var(_) | Expr::Func(..) | Expr::Add(..) | Expr::Sub(..) | Expr::Mul(..) | Expr::Div(..) => {
                self.write(a, f)
            }
            Expr::Const(c) if *c >= 0.0 => self.write(a, f),
            _ => {
                f.write_str("(")?;
                self.write(a, f)?;
                f.write_str(")")
            }
        }
    }
}

impl fmt::Display for Named<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(self.expr, f)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        Named { expr: self, names: &[] }.write(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FunctionSetError {
    #[error("row {row} uses variable index {index} but only {n} variables exist")]
    VarOutOfRange { row: usize, index: usize, n: usize },
    #[error("a function set needs at least one variable and one row")]
    Empty,
}

/// The vector `F(x)` as one expression per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionSet {
    n: usize,
    rows: Vec<Arc<Expr>>,
}

impl FunctionSet {
    pub fn new(n: usize, rows: Vec<Expr>) -> Result<Self, FunctionSetError> {
        Self::from_shared(n, rows.into_iter().map(Arc::new).collect())
    }

    pub fn from_shared(n: usize, rows: Vec<Arc<Expr>>) -> Result<Self, FunctionSetError> {
        if n == 0 || rows.is_empty() {
            return Err(FunctionSetError::Empty);
        }
        for (i, r) in rows.iter().enumerate() {
            if let Some(index) = r.max_var().filter(|&j| j >= n) {
                return Err(FunctionSetError::VarOutOfRange { row: i, index, n });
            }
        }
        Ok(FunctionSet { n, rows })
    }

    pub fn rows(&self) -> &[Arc<Expr>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &Expr {
        &self.rows[i]
    }

    /// Evaluate every row at `x`. A fault is tagged with the failing row.
    pub fn eval_rows<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>, EvalFault> {
        assert_eq!(x.len(), self.n, "point has the wrong dimension");
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let v = r.eval(x).map_err(|e| e.at_row(i))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(EvalFault::NonFinite { row: Some(i) })
                }
            })
            .collect()
    }

}

impl ProblemFunctions for FunctionSet {
    fn num_vars(&self) -> usize {
        self.n
    }

    fn num_funcs(&self) -> usize {
        self.rows.len()
    }

    fn eval<S: Scalar>(&self, _status: Status, x: &[S]) -> Result<Vec<S>, EvalFault> {
        self.eval_rows(x)
    }

    /// Rows that use `abs`, which breaks the smoothness assumption.
    fn nonsmooth_rows(&self) -> Vec<usize> {
        (0..self.rows.len()).filter(|&i| self.rows[i].has_abs()).collect()
    }

    fn kinks_near(&self, x: &[f64], tol: f64) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, r) in self.rows.iter().enumerate() {
            if !r.has_abs() {
                continue;
            }
            let mut hit = false;
            let _ = r.eval_inner(x, &mut |v| hit |= v.abs() <= tol);
            if hit {
                out.push(i);
            }
        }
        out
    }
}
