//! A dense SQP method for problems in bound-constrained form.
//!
//! Each major iteration solves a convex QP built from the assembled Jacobian
//! and a damped-BFGS approximation of the Lagrangian Hessian, then takes an
//! Armijo step on the l1 merit function `f + rho * sum(violation)`. Linear rows
//! enter every QP as hard constraints; together with an initial projection
//! this keeps every iterate feasible for them. When the linearized nonlinear
//! constraints are inconsistent, the QP is relaxed by a scalar
//! `xi in [0, 1]` that shrinks their violated residuals.
//!
//! The evaluation protocol: one call with [`Status::First`] before anything
//! else, [`Status::Normal`] for the rest, and a single [`Status::Final`] call
//! on every exit path. A retry request or domain fault halves the step back
//! toward the previous iterate, at most `retry_budget` times per step.

mod curvature;
pub mod qp;

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};

use crate::assemble::{init_cache, ConstantCache, JacobianAssembler, SparseJacobian};
use crate::check::{verify_at_start_within, CheckError, CheckReport};
use crate::functions::{ProblemFunctions, Status};
use crate::problem::{effective_objective, Options, ProblemSpec, SpecError};
use crate::scalar::{EvalFault, Scalar};
use crate::structure::{probe_structure_within, EntryClass, ProbeError, StructurePattern};
use qp::{solve_qp, LinearConstraint, QpError, QuadraticProgram};

/// Armijo sufficient-decrease constant.
const ARMIJO: f64 = 1e-4;
/// Saddle escapes allowed per solve.
const MAX_ESCAPES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Exit {
    Optimal,
    /// A feasible point of a problem without objective.
    Feasible,
    Infeasible,
    IterLimit,
    UserAbort,
    EvalError,
    /// The line search could not reduce the merit function.
    NoProgress,
}

impl Exit {
    pub fn label(self) -> &'static str {
        match self {
            Exit::Optimal => "optimal",
            Exit::Feasible => "feasible",
            Exit::Infeasible => "infeasible",
            Exit::IterLimit => "iteration limit",
            Exit::UserAbort => "user abort",
            Exit::EvalError => "evaluation error",
            Exit::NoProgress => "no progress",
        }
    }

    pub fn is_success(self) -> bool {
        matches!(self, Exit::Optimal | Exit::Feasible)
    }
}

impl fmt::Display for Exit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One accepted major iteration. Record 0 is the first iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub x: Vec<f64>,
    /// Merit at `x` under `penalty`.
    pub merit: f64,
    /// Merit at the previous iterate under the same `penalty`.
    pub merit_prev: f64,
    /// Largest constraint violation at `x`.
    pub feasibility: f64,
    /// KKT residual at `x` with the multipliers of the step's QP.
    pub optimality: f64,
    pub step: f64,
    pub penalty: f64,
    /// The QP had to be relaxed.
    pub relaxed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    /// `F(x)`; NaN where it was never evaluated.
    pub f: Vec<f64>,
    /// Multipliers for the rows of `F`, with `grad f = J' fmul + bound terms`
    /// for the internally minimized objective. The objective row's is 0.
    pub fmul: Vec<f64>,
    /// `F[ObjRow] + ObjAdd`, or `None` for a feasibility problem.
    pub objective: Option<f64>,
    pub exit: Exit,
    pub majors: usize,
    /// Calls to the problem functions, the final call excluded.
    pub evals: usize,
    pub feasibility: f64,
    pub optimality: f64,
    pub message: Option<String>,
}

/// What the solver knows at an iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateState {
    pub x: Vec<f64>,
    pub f: Vec<f64>,
    pub jac: SparseJacobian,
    pub multipliers: Vec<f64>,
    pub penalty: f64,
    pub major_iter: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolveError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("the functions take {got_n} variables and return {got_m} rows; the problem declares {n} and {m}")]
    Dimension {
        n: usize,
        m: usize,
        got_n: usize,
        got_m: usize,
    },
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Check(#[from] CheckError),
}

/// Everything a solve produced, for reporting.
#[derive(Debug, Clone)]
pub struct SolveReport {
    /// The finalized problem.
    pub spec: ProblemSpec,
    pub pattern: Option<StructurePattern>,
    pub check: Option<CheckReport>,
    pub trace: Vec<IterRecord>,
    pub solution: Solution,
}

/// Pattern and derivative check at the start point, without solving.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub spec: ProblemSpec,
    pub x_start: Vec<f64>,
    pub pattern: StructurePattern,
    pub cache: ConstantCache,
    pub check: CheckReport,
}

/// Largest violation of the row bounds (objective row excluded) and the
/// variable bounds.
pub fn constraint_violation(spec: &ProblemSpec, x: &[f64], f: &[f64]) -> f64 {
    let obj = spec.objective_index();
    let rows = (0..spec.ne_f)
        .filter(|&i| Some(i) != obj)
        .map(|i| (spec.flow[i] - f[i]).max(f[i] - spec.fupp[i]));
    let vars = (0..spec.n).map(|j| (spec.xlow[j] - x[j]).max(x[j] - spec.xupp[j]));
    rows.chain(vars).fold(0.0, f64::max)
}

/// Max of stationarity, complementarity and feasibility.
///
/// With `r = grad f - J' lambda`, the bound multiplier `mu_j` is `r_j` when the
/// bound on the side `r_j` pushes against is finite, else 0. Stationarity is
/// `|r - mu|`; complementarity pairs each nonzero multiplier with the slack of
/// the bound it belongs to.
pub fn kkt_residual(spec: &ProblemSpec, state: &IterateState) -> f64 {
    let obj = spec.objective_index();
    let sigma = spec.sense.sign();
    let mut r = vec![0.0; spec.n];
    for &(i, j, v) in &state.jac.triplets {
        if Some(i) == obj {
            r[j] += sigma * v;
        } else {
            r[j] -= state.multipliers[i] * v;
        }
    }
    let mut worst = 0.0_f64;
    for (j, &rj) in r.iter().enumerate() {
        let (lo, hi) = (spec.xlow[j], spec.xupp[j]);
        let mu = if (rj > 0.0 && lo.is_finite()) || (rj < 0.0 && hi.is_finite()) {
            rj
        } else {
            0.0
        };
        worst = worst.max((rj - mu).abs());
        if mu != 0.0 {
            let slack = if mu > 0.0 { state.x[j] - lo } else { hi - state.x[j] };
            worst = worst.max(slack.max(0.0).min(mu.abs()));
        }
    }
    for i in 0..spec.ne_f {
        let lam = if Some(i) == obj { 0.0 } else { state.multipliers[i] };
        if lam != 0.0 {
            let slack = if lam > 0.0 {
                state.f[i] - spec.flow[i]
            } else {
                spec.fupp[i] - state.f[i]
            };
            worst = worst.max(slack.max(0.0).min(lam.abs()));
        }
    }
    worst.max(constraint_violation(spec, &state.x, &state.f))
}

/// The rows whose Jacobian row is constant, as affine functions
/// `a_i . x + c_i` with `c_i` recovered from one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRows {
    pub rows: Vec<usize>,
    pub coeffs: Vec<Vec<(usize, f64)>>,
    pub offsets: Vec<f64>,
}

impl LinearRows {
    /// Constrained linear rows of `pattern` (the objective and free rows are
    /// left out), with offsets from `f0 = F(x0)`.
    pub fn new(
        spec: &ProblemSpec,
        pattern: &StructurePattern,
        cache: &ConstantCache,
        x0: &[f64],
        f0: &[f64],
    ) -> Self {
        let obj = spec.objective_index();
        let mut out = LinearRows {
            rows: Vec::new(),
            coeffs: Vec::new(),
            offsets: Vec::new(),
        };
        for &i in pattern.linear_rows() {
            if Some(i) == obj || (spec.flow[i].is_infinite() && spec.fupp[i].is_infinite()) {
                continue;
            }
            let coeffs: Vec<(usize, f64)> = cache
                .triplets()
                .iter()
                .filter(|t| t.0 == i)
                .map(|&(_, j, v)| (j, v))
                .collect();
            let ax: f64 = coeffs.iter().map(|&(j, v)| v * x0[j]).sum();
            out.rows.push(i);
            out.coeffs.push(coeffs);
            out.offsets.push(f0[i] - ax);
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn values(&self, x: &[f64]) -> Vec<f64> {
        self.coeffs
            .iter()
            .zip(&self.offsets)
            .map(|(row, c)| row.iter().map(|&(j, v)| v * x[j]).sum::<f64>() + c)
            .collect()
    }

    /// Largest violation of the linear rows at `x`.
    pub fn violation(&self, spec: &ProblemSpec, x: &[f64]) -> f64 {
        self.rows
            .iter()
            .zip(self.values(x))
            .map(|(&i, v)| (spec.flow[i] - v).max(v - spec.fupp[i]))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("the linear constraints and variable bounds have no common point")]
pub struct LinearInfeasible;

/// Return `x` if it satisfies the linear rows within `tol`, otherwise the
/// nearest point (in the 2-norm) satisfying the linear rows and the bounds.
pub fn maintain_linear_feasibility(
    spec: &ProblemSpec,
    linear: &LinearRows,
    x: &[f64],
    tol: f64,
) -> Result<Vec<f64>, LinearInfeasible> {
    let in_box = (0..spec.n).all(|j| x[j] >= spec.xlow[j] && x[j] <= spec.xupp[j]);
    if in_box && linear.violation(spec, x) <= tol {
        return Ok(x.to_vec());
    }
    let n = spec.n;
    let values = linear.values(x);
    let mut jd = DMatrix::zeros(spec.ne_f, n);
    let mut fconst = vec![0.0; spec.ne_f];
    for (k, &i) in linear.rows.iter().enumerate() {
        for &(j, v) in &linear.coeffs[k] {
            jd[(i, j)] = v;
        }
        fconst[i] = values[k];
    }
    let sub = Subproblem::build(
        spec,
        &linear.rows,
        &[],
        x,
        &fconst,
        &jd,
        &DVector::zeros(n),
        &DMatrix::identity(n, n),
        None,
    );
    let sol = solve_qp(&sub.qp).map_err(|_| LinearInfeasible)?;
    Ok(clamp_step(spec, x, sol.x.as_slice(), 1.0))
}

/// A successful evaluation after `retries` halvings toward the previous
/// point; `x = prev + fraction * (trial - prev)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluated<T> {
    pub value: T,
    pub x: Vec<f64>,
    pub fraction: f64,
    pub retries: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProtocolError {
    #[error("evaluation aborted by the user (mode {0})")]
    Abort(i32),
    #[error("no acceptable point after {retries} retries: {fault}")]
    RetriesExhausted { retries: usize, fault: EvalFault },
}

/// Evaluate at `trial`, answering each retry request or domain fault by
/// halving the step from `prev`, at most `retry_budget` times.
pub fn evaluate_with_protocol<T>(
    prev: &[f64],
    trial: &[f64],
    retry_budget: usize,
    mut eval: impl FnMut(&[f64]) -> Result<T, EvalFault>,
) -> Result<Evaluated<T>, ProtocolError> {
    let mut fraction = 1.0;
    let mut retries = 0;
    let mut x = trial.to_vec();
    loop {
        match eval(&x) {
            Ok(value) => {
                return Ok(Evaluated {
                    value,
                    x,
                    fraction,
                    retries,
                })
            }
            Err(EvalFault::Abort(code)) => return Err(ProtocolError::Abort(code)),
            Err(fault) => {
                if retries >= retry_budget {
                    return Err(ProtocolError::RetriesExhausted { retries, fault });
                }
                retries += 1;
                fraction *= 0.5;
                x = prev
                    .iter()
                    .zip(trial)
                    .map(|(p, t)| p + fraction * (t - p))
                    .collect();
            }
        }
    }
}

/// Finalize, probe, cache and verify at the start point.
pub fn analyze<P: ProblemFunctions + ?Sized>(
    spec: &ProblemSpec,
    funcs: &P,
    opts: &Options,
) -> Result<Analysis, SolveError> {
    let spec = spec.clone().finalize(opts)?;
    check_dimensions(&spec, funcs)?;
    let x_start = spec.start_point();
    let (pattern, cache, check) = probe_and_verify(&spec, funcs, &x_start, opts)?;
    Ok(Analysis {
        spec,
        x_start,
        pattern,
        cache,
        check,
    })
}

/// Run the full pipeline and return the solution.
pub fn solve<P: ProblemFunctions + ?Sized>(
    spec: &ProblemSpec,
    funcs: &P,
    opts: &Options,
) -> Result<Solution, SolveError> {
    solve_with_report(spec, funcs, opts).map(|r| r.solution)
}

/// Run the full pipeline: finalize, first evaluation, probe, cache, verify,
/// linear projection and SQP.
pub fn solve_with_report<P: ProblemFunctions + ?Sized>(
    spec: &ProblemSpec,
    funcs: &P,
    opts: &Options,
) -> Result<SolveReport, SolveError> {
    let spec = spec.clone().finalize(opts)?;
    check_dimensions(&spec, funcs)?;
    let counted = Counted::new(funcs);
    let x_start = spec.start_point();

    let early = |spec: &ProblemSpec, x: Vec<f64>, f: Vec<f64>, exit: Exit, message: String| {
        let evals = counted.calls();
        final_call(&counted, &x);
        let feasibility = if f.iter().all(|v| v.is_finite()) {
            constraint_violation(spec, &x, &f)
        } else {
            f64::INFINITY
        };
        Solution {
            objective: spec.reported_objective(&f),
            fmul: vec![0.0; spec.ne_f],
            x,
            f,
            exit,
            majors: 0,
            evals,
            feasibility,
            optimality: f64::INFINITY,
            message: Some(message),
        }
    };

    let f_start = match plain_eval(&counted, Status::First, &x_start) {
        Ok(f) => f,
        Err(fault) => {
            let exit = fault_exit(&fault);
            let solution = early(&spec, x_start, vec![f64::NAN; spec.ne_f], exit, fault.to_string());
            return Ok(SolveReport {
                spec,
                pattern: None,
                check: None,
                trace: Vec::new(),
                solution,
            });
        }
    };

    let (pattern, cache, check) = match probe_and_verify(&spec, &counted, &x_start, opts) {
        Ok(parts) => parts,
        Err(err) => {
            if let Some(code) = abort_code(&err) {
                let solution = early(
                    &spec,
                    x_start,
                    f_start,
                    Exit::UserAbort,
                    EvalFault::Abort(code).to_string(),
                );
                return Ok(SolveReport {
                    spec,
                    pattern: None,
                    check: None,
                    trace: Vec::new(),
                    solution,
                });
            }
            final_call(&counted, &x_start);
            return Err(err);
        }
    };

    let linear = LinearRows::new(&spec, &pattern, &cache, &x_start, &f_start);
    let sqp = Sqp::new(&spec, &counted, pattern.clone(), cache, linear, opts);
    let (mut solution, trace) = sqp.run(x_start, f_start);
    solution.evals = counted.calls();
    final_call(&counted, &solution.x);
    Ok(SolveReport {
        spec,
        pattern: Some(pattern),
        check: Some(check),
        trace,
        solution,
    })
}

fn check_dimensions<P: ProblemFunctions + ?Sized>(
    spec: &ProblemSpec,
    funcs: &P,
) -> Result<(), SolveError> {
    if funcs.num_vars() != spec.n || funcs.num_funcs() != spec.ne_f {
        return Err(SolveError::Dimension {
            n: spec.n,
            m: spec.ne_f,
            got_n: funcs.num_vars(),
            got_m: funcs.num_funcs(),
        });
    }
    Ok(())
}

fn probe_and_verify<P: ProblemFunctions + ?Sized>(
    spec: &ProblemSpec,
    funcs: &P,
    x0: &[f64],
    opts: &Options,
) -> Result<(StructurePattern, ConstantCache, CheckReport), SolveError> {
    let bounds = Some((&spec.xlow[..], &spec.xupp[..]));
    let mut pattern = probe_structure_within(funcs, x0, bounds, opts)?;
    let mut cache = init_cache(&pattern);
    let check = verify_at_start_within(funcs, x0, &mut pattern, &mut cache, bounds, opts)?;
    Ok((pattern, cache, check))
}

fn abort_code(err: &SolveError) -> Option<i32> {
    let fault = match err {
        SolveError::Probe(ProbeError::Eval { fault, .. }) => fault,
        SolveError::Check(CheckError::Column { fault, .. }) | SolveError::Check(CheckError::Eval(fault)) => fault,
        _ => return None,
    };
    match fault {
        EvalFault::Abort(code) => Some(*code),
        _ => None,
    }
}

fn fault_exit(fault: &EvalFault) -> Exit {
    match fault {
        EvalFault::Abort(_) => Exit::UserAbort,
        _ => Exit::EvalError,
    }
}

fn plain_eval<P: ProblemFunctions + ?Sized>(
    funcs: &P,
    status: Status,
    x: &[f64],
) -> Result<Vec<f64>, EvalFault> {
    let f = funcs.eval(status, x)?;
    match f.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(EvalFault::NonFinite { row: Some(i) }),
        None => Ok(f),
    }
}

/// The final call; its outcome cannot change the result.
fn final_call<P: ProblemFunctions + ?Sized>(funcs: &P, x: &[f64]) {
    let _ = funcs.eval(Status::Final, x);
}

/// Counts every call into the problem functions.
struct Counted<'a, P: ?Sized> {
    inner: &'a P,
    calls: AtomicUsize,
}

impl<'a, P: ProblemFunctions + ?Sized> Counted<'a, P> {
    fn new(inner: &'a P) -> Self {
        Counted {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<P: ProblemFunctions + ?Sized> ProblemFunctions for Counted<'_, P> {
    fn num_vars(&self) -> usize {
        self.inner.num_vars()
    }
    fn num_funcs(&self) -> usize {
        self.inner.num_funcs()
    }
    fn eval<S: Scalar>(&self, status: Status, x: &[S]) -> Result<Vec<S>, EvalFault> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.eval(status, x)
    }
    fn kinks_near(&self, x: &[f64], tol: f64) -> Vec<usize> {
        self.inner.kinks_near(x, tol)
    }
    fn nonsmooth_rows(&self) -> Vec<usize> {
        self.inner.nonsmooth_rows()
    }
}

fn clamp_step(spec: &ProblemSpec, x: &[f64], d: &[f64], alpha: f64) -> Vec<f64> {
    (0..spec.n)
        .map(|j| (x[j] + alpha * d[j]).max(spec.xlow[j]).min(spec.xupp[j]))
        .collect()
}

/// Which bound a QP constraint stands for.
#[derive(Debug, Clone, Copy)]
enum Slot {
    RowEq(usize),
    RowLo(usize),
    RowUp(usize),
    Var,
}

struct Subproblem {
    qp: QuadraticProgram,
    eq_slots: Vec<Slot>,
    in_slots: Vec<Slot>,
    relaxed: bool,
}

impl Subproblem {
    /// QP in the step `d` (and `xi` when `relax = Some(weight)`):
    /// `min 1/2 d'Bd + grad'd` subject to `Flow <= fconst + Jd <= Fupp` on
    /// `rows` and `xlow <= x + d <= xupp`. Violated rows listed in `soft` get
    /// their residual scaled by `1 - xi`.
    #[allow(clippy::too_many_arguments)]
    fn build(
        spec: &ProblemSpec,
        rows: &[usize],
        soft: &[bool],
        x: &[f64],
        fconst: &[f64],
        jd: &DMatrix<f64>,
        grad: &DVector<f64>,
        b: &DMatrix<f64>,
        relax: Option<f64>,
    ) -> Self {
        let n = x.len();
        let nv = n + usize::from(relax.is_some());
        let mut hessian = DMatrix::zeros(nv, nv);
        hessian.view_mut((0, 0), (n, n)).copy_from(b);
        let mut gradient = DVector::zeros(nv);
        gradient.rows_mut(0, n).copy_from(grad);
        if let Some(w) = relax {
            hessian[(n, n)] = w;
            gradient[n] = w;
        }
        let mut equalities = Vec::new();
        let mut inequalities = Vec::new();
        let mut eq_slots = Vec::new();
        let mut in_slots = Vec::new();
        let row_vec = |i: usize, sign: f64, xi: f64| -> Vec<f64> {
            let mut a: Vec<f64> = (0..n).map(|j| sign * jd[(i, j)]).collect();
            if relax.is_some() {
                a.push(xi);
            }
            a
        };
        for &i in rows {
            let (lo, hi, fi) = (spec.flow[i], spec.fupp[i], fconst[i]);
            let soft_row = relax.is_some() && soft.get(i).copied().unwrap_or(false);
            if lo == hi {
                let c = fi - lo;
                let xi = if soft_row { -c } else { 0.0 };
                equalities.push(LinearConstraint::new(row_vec(i, 1.0, xi), -c));
                eq_slots.push(Slot::RowEq(i));
                continue;
            }
            if lo.is_finite() {
                let c = fi - lo;
                let xi = if soft_row && c < 0.0 { -c } else { 0.0 };
                inequalities.push(LinearConstraint::new(row_vec(i, 1.0, xi), -c));
                in_slots.push(Slot::RowLo(i));
            }
            if hi.is_finite() {
                let c = hi - fi;
                let xi = if soft_row && c < 0.0 { -c } else { 0.0 };
                inequalities.push(LinearConstraint::new(row_vec(i, -1.0, xi), -c));
                in_slots.push(Slot::RowUp(i));
            }
        }
        let unit = |j: usize, s: f64| -> Vec<f64> {
            let mut a = vec![0.0; nv];
            a[j] = s;
            a
        };
        for j in 0..n {
            let (lo, hi) = (spec.xlow[j], spec.xupp[j]);
            if lo == hi {
                equalities.push(LinearConstraint::new(unit(j, 1.0), lo - x[j]));
                eq_slots.push(Slot::Var);
                continue;
            }
            if lo.is_finite() {
                inequalities.push(LinearConstraint::new(unit(j, 1.0), lo - x[j]));
                in_slots.push(Slot::Var);
            }
            if hi.is_finite() {
                inequalities.push(LinearConstraint::new(unit(j, -1.0), x[j] - hi));
                in_slots.push(Slot::Var);
            }
        }
        if relax.is_some() {
            inequalities.push(LinearConstraint::new(unit(n, 1.0), 0.0));
            in_slots.push(Slot::Var);
            inequalities.push(LinearConstraint::new(unit(n, -1.0), -1.0));
            in_slots.push(Slot::Var);
        }
        Subproblem {
            qp: QuadraticProgram {
                hessian,
                gradient,
                equalities,
                inequalities,
            },
            eq_slots,
            in_slots,
            relaxed: relax.is_some(),
        }
    }

    fn row_multipliers(&self, sol: &qp::QpSolution, ne_f: usize) -> Vec<f64> {
        let mut lambda = vec![0.0; ne_f];
        for (slot, m) in self.eq_slots.iter().zip(&sol.eq_multipliers) {
            if let Slot::RowEq(i) = *slot {
                lambda[i] += m;
            }
        }
        for (slot, m) in self.in_slots.iter().zip(&sol.ineq_multipliers) {
            match *slot {
                Slot::RowLo(i) => lambda[i] += m,
                Slot::RowUp(i) => lambda[i] -= m,
                _ => {}
            }
        }
        lambda
    }
}

/// An evaluated iterate.
struct Point {
    x: Vec<f64>,
    f: Vec<f64>,
    jac: SparseJacobian,
    jd: DMatrix<f64>,
    grad: DVector<f64>,
}

struct Step {
    d: DVector<f64>,
    xi: f64,
    lambda: Vec<f64>,
    relaxed: bool,
}

enum Stop {
    Exit(Exit, String),
    NoDescent,
}

struct Sqp<'a, P: ?Sized> {
    spec: &'a ProblemSpec,
    funcs: &'a Counted<'a, P>,
    asm: JacobianAssembler,
    linear: LinearRows,
    /// Rows with at least one finite bound, objective excluded.
    rows: Vec<usize>,
    /// Rows containing a nonlinear entry.
    nonlinear: Vec<bool>,
    opts: &'a Options,
}

impl<'a, P: ProblemFunctions + ?Sized> Sqp<'a, P> {
    fn new(
        spec: &'a ProblemSpec,
        funcs: &'a Counted<'a, P>,
        pattern: StructurePattern,
        cache: ConstantCache,
        linear: LinearRows,
        opts: &'a Options,
    ) -> Self {
        let obj = spec.objective_index();
        let rows = (0..spec.ne_f)
            .filter(|&i| Some(i) != obj && (spec.flow[i].is_finite() || spec.fupp[i].is_finite()))
            .collect();
        let mut nonlinear = vec![false; spec.ne_f];
        for (i, _, class) in pattern.entries() {
            if class == EntryClass::Nonlinear {
                nonlinear[i] = true;
            }
        }
        Sqp {
            spec,
            funcs,
            asm: JacobianAssembler::with_cache(pattern, cache),
            linear,
            rows,
            nonlinear,
            opts,
        }
    }

    fn evaluate(&self, x: &[f64]) -> Result<Point, EvalFault> {
        let (f, jac) = self.asm.assemble_with_status(self.funcs, Status::Normal, x)?;
        let n = self.spec.n;
        let mut jd = DMatrix::zeros(self.spec.ne_f, n);
        for &(i, j, v) in &jac.triplets {
            jd[(i, j)] = v;
        }
        let grad = match self.spec.objective_index() {
            Some(o) => self.spec.sense.sign() * jd.row(o).transpose(),
            None => DVector::zeros(n),
        };
        Ok(Point {
            x: x.to_vec(),
            f,
            jac,
            jd,
            grad,
        })
    }

    fn viol_sum(&self, f: &[f64]) -> f64 {
        self.rows
            .iter()
            .map(|&i| (self.spec.flow[i] - f[i]).max(0.0) + (f[i] - self.spec.fupp[i]).max(0.0))
            .sum()
    }

    fn merit(&self, f: &[f64], rho: f64) -> f64 {
        effective_objective(f, self.spec) + rho * self.viol_sum(f)
    }

    fn kkt(&self, p: &Point, lambda: &[f64]) -> f64 {
        let state = IterateState {
            x: p.x.clone(),
            f: p.f.clone(),
            jac: p.jac.clone(),
            multipliers: lambda.to_vec(),
            penalty: 0.0,
            major_iter: 0,
        };
        kkt_residual(self.spec, &state)
    }

    fn subproblem(&self, p: &Point, fconst: &[f64], b: &DMatrix<f64>, relax: Option<f64>) -> Subproblem {
        Subproblem::build(
            self.spec,
            &self.rows,
            &self.nonlinear,
            &p.x,
            fconst,
            &p.jd,
            &p.grad,
            b,
            relax,
        )
    }

    fn step(&self, p: &Point, b: &DMatrix<f64>, rho: f64) -> Result<Step, QpError> {
        let n = self.spec.n;
        let plain = self.subproblem(p, &p.f, b, None);
        let (sub, sol) = match solve_qp(&plain.qp) {
            Ok(sol) => (plain, sol),
            Err(QpError::NotPositiveDefinite) => return Err(QpError::NotPositiveDefinite),
            Err(_) => {
                let weight = 1e4 * rho.max(p.grad.amax()).max(1.0);
                let relaxed = self.subproblem(p, &p.f, b, Some(weight));
                let sol = solve_qp(&relaxed.qp)?;
                (relaxed, sol)
            }
        };
        Ok(Step {
            d: sol.x.rows(0, n).into_owned(),
            xi: if sub.relaxed { sol.x[n] } else { 0.0 },
            lambda: sub.row_multipliers(&sol, self.spec.ne_f),
            relaxed: sub.relaxed,
        })
    }

    /// Sum of violations of the linearization `F + J d`.
    fn linearized_viol(&self, p: &Point, d: &DVector<f64>) -> f64 {
        let lin: Vec<f64> = (0..self.spec.ne_f)
            .map(|i| p.f[i] + p.jd.row(i).transpose().dot(d))
            .collect();
        self.viol_sum(&lin)
    }

    fn try_soc(&self, cur: &Point, step: &Step, trial: &Point, b: &DMatrix<f64>) -> Result<Option<Point>, Stop> {
        let jd_d = &cur.jd * &step.d;
        let fconst: Vec<f64> = (0..self.spec.ne_f).map(|i| trial.f[i] - jd_d[i]).collect();
        let sub = self.subproblem(cur, &fconst, b, None);
        let Ok(sol) = solve_qp(&sub.qp) else {
            return Ok(None);
        };
        let x = clamp_step(self.spec, &cur.x, sol.x.as_slice(), 1.0);
        match self.evaluate(&x) {
            Ok(p) => Ok(Some(p)),
            Err(EvalFault::Abort(code)) => Err(Stop::Exit(
                Exit::UserAbort,
                EvalFault::Abort(code).to_string(),
            )),
            Err(_) => Ok(None),
        }
    }

    fn line_search(
        &self,
        cur: &Point,
        step: &Step,
        b: &DMatrix<f64>,
        rho: f64,
        slope: f64,
    ) -> Result<(Point, f64), Stop> {
        let phi0 = self.merit(&cur.f, rho);
        let dnorm = step.d.amax();
        let xnorm = cur.x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut alpha = 1.0;
        let mut retries = 0;
        let mut tried_soc = false;
        loop {
            let trial = clamp_step(self.spec, &cur.x, step.d.as_slice(), alpha);
            let budget = self.opts.retry_budget.saturating_sub(retries);
            match evaluate_with_protocol(&cur.x, &trial, budget, |x| self.evaluate(x)) {
                Err(ProtocolError::Abort(code)) => {
                    return Err(Stop::Exit(Exit::UserAbort, EvalFault::Abort(code).to_string()))
                }
                Err(e @ ProtocolError::RetriesExhausted { .. }) => {
                    return Err(Stop::Exit(Exit::EvalError, e.to_string()))
                }
                Ok(ev) => {
                    retries += ev.retries;
                    alpha *= ev.fraction;
                    let p = ev.value;
                    if self.merit(&p.f, rho) <= phi0 + ARMIJO * alpha * slope {
                        return Ok((p, alpha));
                    }
                    if !tried_soc && alpha == 1.0 && self.rows.iter().any(|&i| self.nonlinear[i]) {
                        tried_soc = true;
                        if let Some(q) = self.try_soc(cur, step, &p, b)? {
                            if self.merit(&q.f, rho) <= phi0 + ARMIJO * slope {
                                return Ok((q, 1.0));
                            }
                        }
                    }
                }
            }
            alpha *= 0.5;
            if alpha * dnorm <= 1e-15 * (1.0 + xnorm) || alpha < 1e-12 {
                return Err(Stop::NoDescent);
            }
        }
    }

    fn finish(&self, p: &Point, lambda: Vec<f64>, exit: Exit, majors: usize, message: Option<String>) -> Solution {
        Solution {
            x: p.x.clone(),
            f: p.f.clone(),
            objective: self.spec.reported_objective(&p.f),
            optimality: self.kkt(p, &lambda),
            feasibility: constraint_violation(self.spec, &p.x, &p.f),
            fmul: lambda,
            exit,
            majors,
            evals: 0,
            message,
        }
    }

    fn run(self, x_start: Vec<f64>, f_start: Vec<f64>) -> (Solution, Vec<IterRecord>) {
        let spec = self.spec;
        let n = spec.n;
        let opts = self.opts;
        let mut trace = Vec::new();
        let mut lambda: Vec<f64> = spec.fmul0.clone();
        if let Some(o) = spec.objective_index() {
            lambda[o] = 0.0;
        }

        let bail = |x: Vec<f64>, f: Vec<f64>, exit: Exit, message: String| Solution {
            objective: spec.reported_objective(&f),
            feasibility: constraint_violation(spec, &x, &f),
            x,
            f,
            fmul: vec![0.0; spec.ne_f],
            exit,
            majors: 0,
            evals: 0,
            optimality: f64::INFINITY,
            message: Some(message),
        };

        let x1 = match maintain_linear_feasibility(spec, &self.linear, &x_start, 0.1 * opts.feas_tol) {
            Ok(x) => x,
            Err(e) => return (bail(x_start, f_start, Exit::Infeasible, e.to_string()), trace),
        };
        let mut cur = match self.evaluate(&x1) {
            Ok(p) => p,
            Err(fault) => return (bail(x1, f_start, fault_exit(&fault), fault.to_string()), trace),
        };

        let mut rho = 1.5 * lambda.iter().fold(0.0_f64, |m, v| m.max(v.abs())) + 1e-3;
        let mut b = DMatrix::<f64>::identity(n, n);
        let mut b_fresh = true;
        let first_merit = self.merit(&cur.f, rho);
        trace.push(IterRecord {
            iter: 0,
            x: cur.x.clone(),
            merit: first_merit,
            merit_prev: first_merit,
            feasibility: constraint_violation(spec, &cur.x, &cur.f),
            optimality: self.kkt(&cur, &lambda),
            step: 0.0,
            penalty: rho,
            relaxed: false,
        });

        let mut majors = 0;
        let mut escapes = 0;
        loop {
            let viol = constraint_violation(spec, &cur.x, &cur.f);
            if spec.is_feasibility() && viol <= opts.feas_tol {
                let sol = self.finish(&cur, lambda, Exit::Feasible, majors, None);
                return (sol, trace);
            }

            let step = match self.step(&cur, &b, rho) {
                Ok(s) => s,
                Err(QpError::NotPositiveDefinite) if !b_fresh => {
                    b = DMatrix::identity(n, n);
                    b_fresh = true;
                    continue;
                }
                Err(e) => {
                    let sol = self.finish(&cur, lambda, Exit::NoProgress, majors, Some(e.to_string()));
                    return (sol, trace);
                }
            };

            if !step.relaxed && viol <= opts.feas_tol {
                let kkt = self.kkt(&cur, &step.lambda);
                if kkt <= opts.opt_tol {
                    if escapes < MAX_ESCAPES && majors < opts.major_iter_limit {
                        match self.escape_saddle(&cur, &step.lambda, rho) {
                            Ok(Some(esc)) => {
                                escapes += 1;
                                majors += 1;
                                let merit_prev = self.merit(&cur.f, rho);
                                lambda = step.lambda;
                                b = DMatrix::identity(n, n);
                                b_fresh = true;
                                cur = esc.point;
                                trace.push(IterRecord {
                                    iter: majors,
                                    x: cur.x.clone(),
                                    merit: self.merit(&cur.f, rho),
                                    merit_prev,
                                    feasibility: constraint_violation(spec, &cur.x, &cur.f),
                                    optimality: self.kkt(&cur, &lambda),
                                    step: esc.length,
                                    penalty: rho,
                                    relaxed: false,
                                });
                                continue;
                            }
                            Ok(None) => {}
                            Err(Stop::Exit(exit, msg)) => {
                                let sol = self.finish(&cur, step.lambda, exit, majors, Some(msg));
                                return (sol, trace);
                            }
                            Err(Stop::NoDescent) => {}
                        }
                    }
                    let exit = if spec.is_feasibility() { Exit::Feasible } else { Exit::Optimal };
                    let sol = self.finish(&cur, step.lambda, exit, majors, None);
                    return (sol, trace);
                }
            }
            let xnorm = cur.x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if step.relaxed && step.xi >= 1.0 - 1e-6 && step.d.amax() <= 1e-10 * (1.0 + xnorm) {
                let sol = self.finish(
                    &cur,
                    lambda,
                    Exit::Infeasible,
                    majors,
                    Some("the linearized constraints cannot be reduced further".into()),
                );
                return (sol, trace);
            }
            if majors >= opts.major_iter_limit {
                let sol = self.finish(&cur, lambda, Exit::IterLimit, majors, None);
                return (sol, trace);
            }

            // Penalty large enough for the step to be a descent direction.
            let lam_max = step.lambda.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            rho = rho.max(1.5 * lam_max + 1e-3);
            let gd = cur.grad.dot(&step.d);
            let dbd = step.d.dot(&(&b * &step.d));
            let reduction = self.viol_sum(&cur.f) - self.linearized_viol(&cur, &step.d);
            let mut slope = gd - rho * reduction;
            if slope > -0.5 * dbd && reduction > 0.0 {
                rho = rho.max(1.1 * (gd + 0.5 * dbd) / reduction + 1e-3);
                slope = gd - rho * reduction;
            }
            if slope >= 0.0 {
                if !b_fresh {
                    b = DMatrix::identity(n, n);
                    b_fresh = true;
                    continue;
                }
                let sol = self.finish(
                    &cur,
                    lambda,
                    Exit::NoProgress,
                    majors,
                    Some("the search direction does not reduce the merit function".into()),
                );
                return (sol, trace);
            }

            let merit_prev = self.merit(&cur.f, rho);
            let (mut next, alpha) = match self.line_search(&cur, &step, &b, rho, slope) {
                Ok(r) => r,
                Err(Stop::NoDescent) if !b_fresh => {
                    b = DMatrix::identity(n, n);
                    b_fresh = true;
                    continue;
                }
                Err(Stop::NoDescent) => {
                    let sol = self.finish(
                        &cur,
                        lambda,
                        Exit::NoProgress,
                        majors,
                        Some("the line search could not reduce the merit function".into()),
                    );
                    return (sol, trace);
                }
                Err(Stop::Exit(exit, msg)) => {
                    let sol = self.finish(&cur, lambda, exit, majors, Some(msg));
                    return (sol, trace);
                }
            };
            majors += 1;

            if !self.linear.is_empty() && self.linear.violation(spec, &next.x) > 0.1 * opts.feas_tol {
                let projected = maintain_linear_feasibility(spec, &self.linear, &next.x, 0.1 * opts.feas_tol);
                match projected.map(|x| self.evaluate(&x)) {
                    Ok(Ok(p)) => next = p,
                    Ok(Err(fault)) => {
                        let sol = self.finish(&cur, lambda, fault_exit(&fault), majors, Some(fault.to_string()));
                        return (sol, trace);
                    }
                    Err(e) => {
                        let sol = self.finish(&cur, lambda, Exit::Infeasible, majors, Some(e.to_string()));
                        return (sol, trace);
                    }
                }
            }

            let s = DVector::from_iterator(n, (0..n).map(|j| next.x[j] - cur.x[j]));
            let lam = DVector::from_column_slice(&step.lambda);
            let y = (&next.grad - next.jd.tr_mul(&lam)) - (&cur.grad - cur.jd.tr_mul(&lam));
            bfgs_update(&mut b, &s, &y, &mut b_fresh);

            lambda = step.lambda;
            trace.push(IterRecord {
                iter: majors,
                x: next.x.clone(),
                merit: self.merit(&next.f, rho),
                merit_prev,
                feasibility: constraint_violation(spec, &next.x, &next.f),
                optimality: self.kkt(&next, &lambda),
                step: alpha,
                penalty: rho,
                relaxed: step.relaxed,
            });
            cur = next;
        }
    }
}

/// Damped BFGS update keeping `b` positive definite. The first update after a
/// reset rescales the identity by `y'y / s'y`.
fn bfgs_update(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>, fresh: &mut bool) {
    if s.norm_squared() <= f64::MIN_POSITIVE {
        return;
    }
    if *fresh {
        let sy = s.dot(y);
        if sy > 0.0 {
            let scale = (y.norm_squared() / sy).clamp(1e-6, 1e6);
            *b = DMatrix::identity(s.len(), s.len()) * scale;
        }
        *fresh = false;
    }
    let bs = &*b * s;
    let sbs = s.dot(&bs);
    if !(sbs > 0.0) {
        *b = DMatrix::identity(s.len(), s.len());
        *fresh = true;
        return;
    }
    let mut y = y.clone();
    let sy = s.dot(&y);
    if sy < 0.2 * sbs {
        let theta = 0.8 * sbs / (sbs - sy);
        y = &y * theta + &bs * (1.0 - theta);
    }
    let sy = s.dot(&y);
    *b -= &bs * bs.transpose() / sbs;
    *b += &y * y.transpose() / sy;
    let sym = (&*b + b.transpose()) * 0.5;
    *b = sym;
    if b.iter().any(|v| !v.is_finite()) {
        *b = DMatrix::identity(s.len(), s.len());
        *fresh = true;
    }
}
