//! Derivative and pattern validation at the start point.
//!
//! The assembled Jacobian at `x0` is compared with central differences, and
//! the probed pattern is re-tested at this third point. Entries that turn out
//! to vary are promoted to nonlinear; value disagreements are fatal.

use crate::ad::{full_jacobian, DenseMatrix};
use crate::assemble::{init_cache, ConstantCache, JacobianAssembler};
use crate::functions::ProblemFunctions;
use crate::par;
use crate::problem::Options;
use crate::scalar::EvalFault;
use crate::structure::{EntryClass, StructurePattern};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CheckError {
    #[error("evaluation failed while differencing column {}: {fault}", .column + 1)]
    Column { column: usize, fault: EvalFault },
    #[error("evaluation failed at the start point: {0}")]
    Eval(EvalFault),
    #[error("derivative check failed: {} problem(s), max relative error {:.3e}", .0.pattern_mismatches.len(), .0.max_rel_error)]
    Failed(Box<CheckReport>),
}

/// An entry whose class disagreed with the evidence at the start point and
/// was promoted.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternRepair {
    pub row: usize,
    pub col: usize,
    pub from: EntryClass,
    pub to: EntryClass,
    /// Exact derivative at the start point.
    pub observed: f64,
}

/// A disagreement that could not be repaired.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternMismatch {
    pub row: usize,
    pub col: usize,
    pub expected: EntryClass,
    pub evidence: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    /// Largest `|J - J_fd| / max(1, |J_fd|)` over structural nonzeros.
    pub max_rel_error: f64,
    pub worst_entry: Option<(usize, usize)>,
    pub pattern_mismatches: Vec<PatternMismatch>,
    pub repairs: Vec<PatternRepair>,
    pub warnings: Vec<String>,
    pub passed: bool,
}

/// Central differences with one step `h` for every column.
pub fn fd_jacobian<P: ProblemFunctions + ?Sized>(
    funcs: &P,
    x0: &[f64],
    h: f64,
) -> Result<DenseMatrix, CheckError> {
    fd_jacobian_steps(funcs, x0, &vec![h; x0.len()], None)
}

/// Finite-difference Jacobian with a per-column step. Columns whose central
/// stencil would leave `bounds` use a one-sided second-order stencil, or a
/// shorter step when the box is narrower than `2h`. A variable fixed by its
/// bounds gets a NaN column.
pub fn fd_jacobian_steps<P: ProblemFunctions + ?Sized>(
    funcs: &P,
    x0: &[f64],
    steps: &[f64],
    bounds: Option<(&[f64], &[f64])>,
) -> Result<DenseMatrix, CheckError> {
    let n = x0.len();
    let m = funcs.num_funcs();
    let eval_at = |j: usize, h: f64| -> Result<Vec<f64>, CheckError> {
        let mut x = x0.to_vec();
        x[j] += h;
        funcs.values(&x).map_err(|fault| CheckError::Column { column: j, fault })
    };
    let columns = par::map_range(n, |j| -> Result<Vec<f64>, CheckError> {
        let h = steps[j];
        let (lo, hi) = bounds.map_or((f64::NEG_INFINITY, f64::INFINITY), |(l, u)| (l[j], u[j]));
        let (up, down) = (hi - x0[j], x0[j] - lo);
        let central = |h: f64| -> Result<Vec<f64>, CheckError> {
            let fp = eval_at(j, h)?;
            let fm = eval_at(j, -h)?;
            Ok(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect())
        };
        // -3 f(x) + 4 f(x + s) - f(x + 2s)
        let one_sided = |s: f64| -> Result<Vec<f64>, CheckError> {
            let f0 = funcs.values(x0).map_err(|fault| CheckError::Column { column: j, fault })?;
            let f1 = eval_at(j, s)?;
            let f2 = eval_at(j, 2.0 * s)?;
            Ok((0..m)
                .map(|i| (-3.0 * f0[i] + 4.0 * f1[i] - f2[i]) / (2.0 * s))
                .collect())
        };
        if up >= h && down >= h {
            central(h)
        } else if up >= 2.0 * h {
            one_sided(h)
        } else if down >= 2.0 * h {
            one_sided(-h)
        } else if up.min(down) > 0.0 {
            central(up.min(down))
        } else if up > 0.0 {
            one_sided(0.5 * up)
        } else if down > 0.0 {
            one_sided(-0.5 * down)
        } else {
            // Fixed variable: nothing to difference.
            Ok(vec![f64::NAN; m])
        }
    });
    let mut out = DenseMatrix::zeros(m, n);
    for (j, col) in columns.into_iter().enumerate() {
        for (i, v) in col?.into_iter().enumerate() {
            out.set(i, j, v);
        }
    }
    Ok(out)
}

/// Per-column steps `fd_step * max(1, |x0_j|)`.
pub fn default_steps(x0: &[f64], opts: &Options) -> Vec<f64> {
    x0.iter().map(|v| opts.fd_step * v.abs().max(1.0)).collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Check the pattern and assembled derivatives at `x0`.
///
/// On success the pattern may have been repaired, in which case `cache` is
/// rebuilt to match. Any unrepairable disagreement returns
/// [`CheckError::Failed`] with the full report.
pub fn verify_at_start<P: ProblemFunctions + ?Sized>(
    funcs: &P,
    x0: &[f64],
    pattern: &mut StructurePattern,
    cache: &mut ConstantCache,
    opts: &Options,
) -> Result<CheckReport, CheckError> {
    verify_at_start_within(funcs, x0, pattern, cache, None, opts)
}

pub fn verify_at_start_within<P: ProblemFunctions + ?Sized>(
    funcs: &P,
    x0: &[f64],
    pattern: &mut StructurePattern,
    cache: &mut ConstantCache,
    bounds: Option<(&[f64], &[f64])>,
    opts: &Options,
) -> Result<CheckReport, CheckError> {
    let (m, n) = (pattern.num_funcs(), pattern.num_vars());
    let exact = full_jacobian(funcs, x0).map_err(CheckError::Eval)?.product;
    let assembled = JacobianAssembler::with_cache(pattern.clone(), cache.clone())
        .assemble(funcs, x0)
        .map_err(CheckError::Eval)?
        .1;
    let fd = fd_jacobian_steps(funcs, x0, &default_steps(x0, opts), bounds)?;
    let tau = pattern.tolerance;
    let have_probes = pattern.probe_jacobians[0].rows == m && pattern.probe_jacobians[0].cols == n;

    let mut repairs = Vec::new();
    let mut mismatches = Vec::new();
    for i in 0..m {
        for j in 0..n {
            let class = pattern.class(i, j);
            let (ad, diff) = (exact.get(i, j), fd.get(i, j));
            match class {
                EntryClass::Zero => {
                    if ad.abs() > tau || diff.abs() > opts.check_tol {
                        repairs.push(PatternRepair { row: i, col: j, from: class, to: EntryClass::Nonlinear, observed: ad });
                    }
                }
                EntryClass::Constant(v) => {
                    let cached = assembled.get(i, j);
                    let probe_value = if have_probes { pattern.probe_jacobians[0].get(i, j) } else { v };
                    if (cached - v).abs() > tau * v.abs().max(1.0)
                        || (cached - probe_value).abs() > tau * cached.abs().max(1.0)
                    {
                        mismatches.push(PatternMismatch {
                            row: i,
                            col: j,
                            expected: class,
                            evidence: format!(
                                "cached value {cached:e} disagrees with the probed value {probe_value:e}"
                            ),
                        });
                    } else if (cached - ad).abs() > tau * cached.abs().max(1.0) {
                        repairs.push(PatternRepair { row: i, col: j, from: class, to: EntryClass::Nonlinear, observed: ad });
                    }
                }
                EntryClass::Nonlinear => {}
            }
        }
    }

    if !repairs.is_empty() {
        for r in &repairs {
            pattern.set_class(r.row, r.col, r.to);
        }
        *cache = init_cache(pattern);
    }

    // Value agreement over the (repaired) structure, using what assembly
    // would now deliver: cached constants and exact nonlinear entries.
    let mut max_rel_error = 0.0_f64;
    let mut worst_entry = None;
    for (i, j, class) in pattern.entries() {
        let value = match class {
            EntryClass::Constant(_) => assembled.get(i, j),
            _ => exact.get(i, j),
        };
        let e = rel_err(value, fd.get(i, j));
        if e > max_rel_error || worst_entry.is_none() {
            max_rel_error = max_rel_error.max(e);
            worst_entry = Some((i, j));
        }
        if e > opts.check_tol && !mismatches.iter().any(|mm| (mm.row, mm.col) == (i, j)) {
            mismatches.push(PatternMismatch {
                row: i,
                col: j,
                expected: class,
                evidence: format!(
                    "derivative {value:e} disagrees with finite difference {:e}",
                    fd.get(i, j)
                ),
            });
        }
    }
    mismatches.sort_by_key(|mm| (mm.row, mm.col));

    let mut warnings = Vec::new();
    let unchecked: Vec<usize> = (0..n).filter(|&j| (0..m).any(|i| fd.get(i, j).is_nan())).collect();
    if !unchecked.is_empty() {
        warnings.push(format!(
            "columns {} are fixed by their bounds and were not differenced",
            join_rows(&unchecked)
        ));
    }
    let nonsmooth = funcs.nonsmooth_rows();
    if !nonsmooth.is_empty() {
        warnings.push(format!(
            "rows {} use abs(); the problem functions are assumed smooth",
            join_rows(&nonsmooth)
        ));
    }
    let kinks = funcs.kinks_near(x0, opts.feas_tol);
    if !kinks.is_empty() {
        warnings.push(format!(
            "rows {} are evaluated within {:e} of an abs() kink",
            join_rows(&kinks),
            opts.feas_tol
        ));
    }
    for r in &repairs {
        warnings.push(format!(
            "entry ({}, {}) reclassified {} -> {} (derivative {:e} at start point)",
            r.row + 1,
            r.col + 1,
            r.from.label(),
            r.to.label(),
            r.observed
        ));
    }

    let passed = max_rel_error <= opts.check_tol && mismatches.is_empty();
    let report = CheckReport {
        max_rel_error,
        worst_entry,
        pattern_mismatches: mismatches,
        repairs,
        warnings,
        passed,
    };
    if passed {
        Ok(report)
    } else {
        Err(CheckError::Failed(Box::new(report)))
    }
}

fn join_rows(rows: &[usize]) -> String {
    rows.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(", ")
}
